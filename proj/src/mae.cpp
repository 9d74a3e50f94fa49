#include "egoclust/mae.hpp"

namespace egoclust {

void DecoderConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) throw Error("decoder config: dim must be divisible by heads");
  if (depth == 0 || mlp_ratio == 0) throw Error("decoder config: depth and mlp ratio must be positive");
}

template <typename T>
MaeDecoder<T>::MaeDecoder(const EncoderConfig& encoder, const DecoderConfig& config, ParameterStore<T>& store,
                          std::mt19937_64& rng)
    : encoder_(encoder), config_(config) {
  config_.validate();
  embed_ = Linear<T>::create(store, "mae_decoder.embed", encoder_.embed_dim, config_.dim, rng);
  mask_token_ = store.add("mask_token", trunc_normal<T>({config_.dim}, 0.02, rng));
  pos_ = store.add("decoder_pos", trunc_normal<T>({encoder_.num_tokens(), config_.dim}, 0.02, rng));
  for (std::size_t i = 0; i < config_.depth; ++i) {
    blocks_.push_back(TransformerBlock<T>::create(store, "mae_decoder.blocks." + std::to_string(i), config_.dim,
                                                  config_.heads, config_.dim * config_.mlp_ratio, rng));
  }
  norm_ = LayerNorm<T>::create(store, "mae_decoder.norm", config_.dim);
  head_ = Linear<T>::create(store, "mae_decoder.head", config_.dim, encoder_.patch_dim(), rng);
}

template <typename T>
Tensor<T> MaeDecoder<T>::decode(const EncodedView<T>& h1) const {
  const auto& mask = h1.mask;
  if (mask.total != pos_.dim(0)) {
    throw ShapeError("decoder: mask covers " + std::to_string(mask.total) + " tokens but positional table has " +
                     std::to_string(pos_.dim(0)));
  }
  if (h1.tokens.dim(0) != mask.visible.size()) throw ShapeError("decoder: visible token count does not match mask");
  auto seq = scatter_rows(embed_(h1.tokens), mask.visible, mask.total);
  if (!mask.masked.empty()) {
    seq = add(seq, scatter_rows(repeat_row(mask_token_, mask.masked.size()), mask.masked, mask.total));
  }
  seq = add(seq, pos_);
  for (const auto& block : blocks_) seq = block(seq);
  const auto pixels = head_(norm_(seq));
  return gather_rows(pixels, mask.masked);
}

template <typename T>
Tensor<T> masked_targets(const Tensor<T>& view_tokens, const MaskSpec& mask) {
  return gather_rows(view_tokens, mask.masked);
}

template <typename T>
Tensor<T> mae_loss(const Tensor<T>& reconstruction, const Tensor<T>& view_tokens, const MaskSpec& mask) {
  if (mask.masked.empty()) throw Error("mae_loss: empty mask, reconstruction loss is undefined");
  const auto target = masked_targets(view_tokens, mask);
  if (reconstruction.shape() != target.shape()) {
    throw ShapeError("mae_loss: reconstruction " + to_string(reconstruction.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  return mean(square(sub(reconstruction, target)));
}

template class MaeDecoder<float>;
template class MaeDecoder<double>;
template Tensor<float> masked_targets<float>(const Tensor<float>&, const MaskSpec&);
template Tensor<double> masked_targets<double>(const Tensor<double>&, const MaskSpec&);
template Tensor<float> mae_loss<float>(const Tensor<float>&, const Tensor<float>&, const MaskSpec&);
template Tensor<double> mae_loss<double>(const Tensor<double>&, const Tensor<double>&, const MaskSpec&);

}  // namespace egoclust
