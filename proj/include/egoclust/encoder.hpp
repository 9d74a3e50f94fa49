#pragma once

#include "egoclust/image.hpp"
#include "egoclust/nn.hpp"
#include "egoclust/tensor.hpp"

#include <random>
#include <utility>
#include <vector>

namespace egoclust {

struct EncoderConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t embed_dim = 128;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  double mask_ratio = 0.75;

  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_tokens() const { return grid() * grid(); }
  std::size_t patch_dim() const { return Image::kChannels * patch_size * patch_size; }
};

/// Partition of token positions 0..T-1 into masked and visible sets, both
/// kept in ascending order.
struct MaskSpec {
  std::size_t total = 0;
  std::vector<std::size_t> masked;
  std::vector<std::size_t> visible;

  static MaskSpec none(std::size_t total);
  static MaskSpec from_masked(std::size_t total, std::vector<std::size_t> masked);
  void validate() const;
  bool operator==(const MaskSpec&) const = default;
};

/// round(ratio * T) with halves rounded up, capped so one token stays visible.
std::size_t masked_count(std::size_t total, double ratio);

MaskSpec sample_mask(std::size_t total, double ratio, std::mt19937_64& rng);

/// Row t holds the P x P x 3 patch at raster position t, flattened as
/// (row, column, channel).
template <typename T>
Tensor<T> patchify(const Image& img, std::size_t patch);
template <typename T>
Image unpatchify(const Tensor<T>& tokens, std::size_t patch, std::size_t height, std::size_t width);

/// Zeroes the masked rows; visible rows are copied unchanged.
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& tokens, const MaskSpec& mask);

template <typename T>
struct EncodedView {
  Tensor<T> tokens;  // [|visible|, D]
  MaskSpec mask;
  std::size_t grid_w = 0;
  std::size_t grid_h = 0;
};

/// Shared ViT encoder: linear patch embedding of the visible tokens, learned
/// positional embeddings indexed by original grid position, pre-norm blocks,
/// final layer norm. No class token.
template <typename T>
class Encoder {
 public:
  Encoder(const EncoderConfig& config, ParameterStore<T>& store, std::mt19937_64& rng);

  const EncoderConfig& config() const { return config_; }
  const Tensor<T>& pos_embed() const { return pos_embed_; }

  /// `masked_tokens` is the full [T, 3P^2] matrix X (masked rows zeroed);
  /// only the visible rows enter the transformer.
  EncodedView<T> encode(const Tensor<T>& masked_tokens, const MaskSpec& mask) const;
  std::pair<EncodedView<T>, EncodedView<T>> encode_pair(const Tensor<T>& x1, const MaskSpec& m1, const Tensor<T>& x2,
                                                        const MaskSpec& m2) const;
  /// All T tokens, no masking. [T, D]
  Tensor<T> encode_full(const Image& img) const;
  /// Mean over encode_full tokens. [D]
  std::vector<T> pooled(const Image& img) const;

 private:
  EncoderConfig config_;
  Linear<T> patch_embed_;
  Tensor<T> pos_embed_;
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> norm_;
};

}  // namespace egoclust
