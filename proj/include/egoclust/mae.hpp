#pragma once

#include "egoclust/encoder.hpp"
#include "egoclust/nn.hpp"

namespace egoclust {

struct DecoderConfig {
  std::size_t dim = 64;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;

  void validate() const;
};

/// Thin MAE decoder reconstructing the masked patches of view 1.
///
/// Visible embeddings are projected to the decoder width and scattered back
/// into the full T-token sequence; masked slots receive the shared learned
/// mask token and every slot gets the decoder positional embedding. After the
/// decoder blocks a linear head maps to pixel space and only masked rows are
/// returned.
template <typename T>
class MaeDecoder {
 public:
  MaeDecoder(const EncoderConfig& encoder, const DecoderConfig& config, ParameterStore<T>& store, std::mt19937_64& rng);

  /// [|masked|, 3P^2]
  Tensor<T> decode(const EncodedView<T>& h1) const;

  const Tensor<T>& mask_token() const { return mask_token_; }
  const Tensor<T>& positional() const { return pos_; }
  const Linear<T>& head() const { return head_; }

 private:
  EncoderConfig encoder_;
  DecoderConfig config_;
  Linear<T> embed_;
  Tensor<T> mask_token_;  // [dim]
  Tensor<T> pos_;         // [T, dim]
  std::vector<TransformerBlock<T>> blocks_;
  LayerNorm<T> norm_;
  Linear<T> head_;
};

/// Original patches of A1 at the masked positions. Identical to (A1 - X1)
/// restricted to the masked rows, since X1 zeroes exactly those rows.
template <typename T>
Tensor<T> masked_targets(const Tensor<T>& view_tokens, const MaskSpec& mask);

/// Mean squared error over every entry of the masked patches.
template <typename T>
Tensor<T> mae_loss(const Tensor<T>& reconstruction, const Tensor<T>& view_tokens, const MaskSpec& mask);

}  // namespace egoclust
