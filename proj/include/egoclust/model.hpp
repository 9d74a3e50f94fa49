#pragma once

#include "egoclust/checkpoint.hpp"
#include "egoclust/contrastive.hpp"
#include "egoclust/encoder.hpp"
#include "egoclust/mae.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace egoclust {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::size_t proj_channels = 32;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// Two augmented views of one source image, as patch tokens, with the masked
/// copies that are fed to the encoder.
template <typename T>
struct ViewPair {
  Tensor<T> a1;  // [T, 3P^2] augmented view 1
  Tensor<T> a2;
  Tensor<T> x1;  // a1 with masked rows zeroed
  Tensor<T> x2;
  MaskSpec m1;
  MaskSpec m2;
};

/// Augments, patchifies and masks one image. The two masks are drawn
/// independently.
template <typename T>
ViewPair<T> make_view_pair(const Image& img, const AugmentPolicy& policy, const EncoderConfig& config,
                           std::mt19937_64& rng);

template <typename T>
struct BranchLosses {
  std::optional<Tensor<T>> mae;
  std::optional<Tensor<T>> contrastive;
  Tensor<T> joint;
};

/// Shared encoder plus the MAE decoder and the projection head, all parameters
/// held in one store (checkpoint names "encoder.*", "mae_decoder.*",
/// "mask_token", "decoder_pos", "proj_head.*").
template <typename T>
class CmNet {
 public:
  CmNet(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const MaeDecoder<T>& decoder() const { return decoder_; }
  const ProjectionHead<T>& head() const { return head_; }

  /// MAE term on view 1 (runs when alpha > 0), contrastive term over the
  /// batch (runs when alpha < 1) and their joint loss.
  BranchLosses<T> losses(const std::vector<ViewPair<T>>& batch, double alpha, double beta, double tau) const;

  Checkpoint to_checkpoint() const;
  void save(const std::filesystem::path& path) const;
  /// Rebuilds the model from the configuration stored in the checkpoint.
  static CmNet load(const std::filesystem::path& path);
  static CmNet from_checkpoint(const Checkpoint& ckpt);

 private:
  ModelConfig config_;
  ParameterStore<T> store_;
  std::mt19937_64 init_rng_;
  Encoder<T> encoder_;
  MaeDecoder<T> decoder_;
  ProjectionHead<T> head_;
};

inline constexpr const char* kConfigRecord = "meta.model_config";

/// Loads only the encoder weights of a checkpoint (projection head and decoder
/// are discarded after pre-training).
template <typename T>
struct FrozenEncoder {
  ModelConfig config;
  ParameterStore<T> store;
  Encoder<T> encoder;

  explicit FrozenEncoder(const Checkpoint& ckpt);
  explicit FrozenEncoder(const std::filesystem::path& path) : FrozenEncoder(Checkpoint::load(path)) {}
};

ModelConfig read_model_config(const Checkpoint& ckpt);

}  // namespace egoclust
