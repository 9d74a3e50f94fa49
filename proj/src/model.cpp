#include "egoclust/model.hpp"

#include "egoclust/trainer.hpp"

#include <json.hpp>

namespace egoclust {

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (proj_channels == 0) throw Error("model config: projection channels must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["image_size"] = encoder.image_size;
  j["patch_size"] = encoder.patch_size;
  j["embed_dim"] = encoder.embed_dim;
  j["depth"] = encoder.depth;
  j["heads"] = encoder.heads;
  j["mlp_ratio"] = encoder.mlp_ratio;
  j["mask_ratio"] = encoder.mask_ratio;
  j["decoder_dim"] = decoder.dim;
  j["decoder_depth"] = decoder.depth;
  j["decoder_heads"] = decoder.heads;
  j["decoder_mlp_ratio"] = decoder.mlp_ratio;
  j["proj_channels"] = proj_channels;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.encoder.image_size = j.at("image_size").get<std::size_t>();
    c.encoder.patch_size = j.at("patch_size").get<std::size_t>();
    c.encoder.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.encoder.depth = j.at("depth").get<std::size_t>();
    c.encoder.heads = j.at("heads").get<std::size_t>();
    c.encoder.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    c.encoder.mask_ratio = j.at("mask_ratio").get<double>();
    c.decoder.dim = j.at("decoder_dim").get<std::size_t>();
    c.decoder.depth = j.at("decoder_depth").get<std::size_t>();
    c.decoder.heads = j.at("decoder_heads").get<std::size_t>();
    c.decoder.mlp_ratio = j.at("decoder_mlp_ratio").get<std::size_t>();
    c.proj_channels = j.at("proj_channels").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig read_model_config(const Checkpoint& ckpt) {
  const auto* record = ckpt.find(kConfigRecord);
  if (!record) throw Error("checkpoint has no model configuration record");
  return ModelConfig::from_json(record->as_string());
}

template <typename T>
ViewPair<T> make_view_pair(const Image& img, const AugmentPolicy& policy, const EncoderConfig& config,
                           std::mt19937_64& rng) {
  auto [v1, v2] = make_views(img, policy, rng);
  ViewPair<T> pair;
  pair.a1 = patchify<T>(v1, config.patch_size);
  pair.a2 = patchify<T>(v2, config.patch_size);
  pair.m1 = sample_mask(config.num_tokens(), config.mask_ratio, rng);
  pair.m2 = sample_mask(config.num_tokens(), config.mask_ratio, rng);
  pair.x1 = apply_mask(pair.a1, pair.m1);
  pair.x2 = apply_mask(pair.a2, pair.m2);
  return pair;
}

template <typename T>
CmNet<T>::CmNet(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      init_rng_(seed),
      encoder_(config_.encoder, store_, init_rng_),
      decoder_(config_.encoder, config_.decoder, store_, init_rng_),
      head_(config_.encoder, config_.proj_channels, store_, init_rng_) {
  config_.validate();
}

template <typename T>
BranchLosses<T> CmNet<T>::losses(const std::vector<ViewPair<T>>& batch, double alpha, double beta, double tau) const {
  if (batch.empty()) throw Error("empty training batch");
  BranchLosses<T> out;
  std::vector<Tensor<T>> mae_terms;
  std::vector<Tensor<T>> z1;
  std::vector<Tensor<T>> z2;
  const bool run_mae = alpha > 0.0;
  const bool run_con = alpha < 1.0;
  for (const auto& pair : batch) {
    auto [h1, h2] = run_con ? encoder_.encode_pair(pair.x1, pair.m1, pair.x2, pair.m2)
                            : std::pair{encoder_.encode(pair.x1, pair.m1), EncodedView<T>{}};
    if (run_mae) mae_terms.push_back(mae_loss(decoder_.decode(h1), pair.a1, pair.m1));
    if (run_con) {
      z1.push_back(head_.project(h1, encoder_.pos_embed()));
      z2.push_back(head_.project(h2, encoder_.pos_embed()));
    }
  }
  if (run_mae) out.mae = mean(stack(mae_terms));
  if (run_con) out.contrastive = contrastive_loss(z1, z2, tau);
  const auto zero = Tensor<T>::scalar(T(0));
  out.joint = joint_loss(out.mae.value_or(zero), out.contrastive.value_or(zero), alpha, beta);
  return out;
}

template <typename T>
Checkpoint CmNet<T>::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.add_text(kConfigRecord, config_.to_json());
  add_parameters(ckpt, store_);
  return ckpt;
}

template <typename T>
void CmNet<T>::save(const std::filesystem::path& path) const {
  to_checkpoint().save(path);
}

template <typename T>
CmNet<T> CmNet<T>::from_checkpoint(const Checkpoint& ckpt) {
  CmNet<T> net(read_model_config(ckpt), 0);
  load_parameters(ckpt, net.store_);
  return net;
}

template <typename T>
CmNet<T> CmNet<T>::load(const std::filesystem::path& path) {
  return from_checkpoint(Checkpoint::load(path));
}

namespace {

template <typename T>
Encoder<T> build_encoder(const ModelConfig& config, ParameterStore<T>& store) {
  std::mt19937_64 rng(0);
  return Encoder<T>(config.encoder, store, rng);
}

}  // namespace

template <typename T>
FrozenEncoder<T>::FrozenEncoder(const Checkpoint& ckpt)
    : config(read_model_config(ckpt)), store(), encoder(build_encoder<T>(config, store)) {
  load_parameters(ckpt, store, "encoder.");
}

template ViewPair<float> make_view_pair<float>(const Image&, const AugmentPolicy&, const EncoderConfig&,
                                               std::mt19937_64&);
template ViewPair<double> make_view_pair<double>(const Image&, const AugmentPolicy&, const EncoderConfig&,
                                                 std::mt19937_64&);
template class CmNet<float>;
template class CmNet<double>;
template struct FrozenEncoder<float>;
template struct FrozenEncoder<double>;

}  // namespace egoclust
