#include "egoclust/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace egoclust {

void EncoderConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw Error("encoder config: image size " + std::to_string(image_size) + " is not divisible by patch size " +
                std::to_string(patch_size));
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw Error("encoder config: embed dim must be divisible by heads");
  }
  if (depth == 0 || mlp_ratio == 0) throw Error("encoder config: depth and mlp ratio must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw Error("encoder config: mask ratio must lie in [0,1)");
}

MaskSpec MaskSpec::none(std::size_t total) {
  MaskSpec m;
  m.total = total;
  m.visible.resize(total);
  std::iota(m.visible.begin(), m.visible.end(), std::size_t{0});
  return m;
}

MaskSpec MaskSpec::from_masked(std::size_t total, std::vector<std::size_t> masked) {
  MaskSpec m;
  m.total = total;
  std::sort(masked.begin(), masked.end());
  std::vector<bool> hidden(total, false);
  for (auto i : masked) {
    if (i >= total || hidden[i]) throw Error("mask: masked indices must be distinct and below " + std::to_string(total));
    hidden[i] = true;
  }
  m.masked = std::move(masked);
  for (std::size_t i = 0; i < total; ++i) {
    if (!hidden[i]) m.visible.push_back(i);
  }
  return m;
}

void MaskSpec::validate() const {
  if (masked.size() + visible.size() != total) throw Error("mask: masked and visible do not cover all tokens");
  std::vector<bool> seen(total, false);
  for (const auto* part : {&masked, &visible}) {
    for (auto i : *part) {
      if (i >= total || seen[i]) throw Error("mask: sets overlap or index out of range");
      seen[i] = true;
    }
  }
}

std::size_t masked_count(std::size_t total, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw Error("mask ratio must lie in [0,1)");
  if (total == 0) return 0;
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total) + 0.5));
  return std::min(count, total - 1);
}

MaskSpec sample_mask(std::size_t total, double ratio, std::mt19937_64& rng) {
  const std::size_t count = masked_count(total, ratio);
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  // Partial Fisher-Yates: the first `count` entries are a uniform subset.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, total - 1)(rng);
    std::swap(perm[i], perm[j]);
  }
  perm.resize(count);
  return MaskSpec::from_masked(total, std::move(perm));
}

template <typename T>
Tensor<T> patchify(const Image& img, std::size_t patch) {
  if (patch == 0 || img.height % patch != 0 || img.width % patch != 0) {
    throw ShapeError("patchify: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                     " is not divisible by patch size " + std::to_string(patch));
  }
  const std::size_t gh = img.height / patch;
  const std::size_t gw = img.width / patch;
  const std::size_t dim = Image::kChannels * patch * patch;
  std::vector<T> out(gh * gw * dim);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      T* row = out.data() + (gy * gw + gx) * dim;
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch; ++px)
          for (std::size_t c = 0; c < Image::kChannels; ++c)
            row[(py * patch + px) * Image::kChannels + c] = static_cast<T>(img.at(c, gy * patch + py, gx * patch + px));
    }
  return Tensor<T>::from_data({gh * gw, dim}, std::move(out));
}

template <typename T>
Image unpatchify(const Tensor<T>& tokens, std::size_t patch, std::size_t height, std::size_t width) {
  const std::size_t gh = height / patch;
  const std::size_t gw = width / patch;
  const std::size_t dim = Image::kChannels * patch * patch;
  if (height % patch || width % patch || tokens.rank() != 2 || tokens.dim(0) != gh * gw || tokens.dim(1) != dim) {
    throw ShapeError("unpatchify: token matrix " + to_string(tokens.shape()) + " does not match image geometry");
  }
  Image img(height, width);
  auto data = tokens.data();
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      const T* row = data.data() + (gy * gw + gx) * dim;
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch; ++px)
          for (std::size_t c = 0; c < Image::kChannels; ++c)
            img.at(c, gy * patch + py, gx * patch + px) = static_cast<float>(row[(py * patch + px) * Image::kChannels + c]);
    }
  return img;
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& tokens, const MaskSpec& mask) {
  if (tokens.rank() != 2 || tokens.dim(0) != mask.total) {
    throw ShapeError("apply_mask: token count " + to_string(tokens.shape()) + " does not match mask of " +
                     std::to_string(mask.total));
  }
  auto values = tokens.to_vector();
  const std::size_t f = tokens.dim(1);
  for (auto t : mask.masked) std::fill(values.begin() + t * f, values.begin() + (t + 1) * f, T(0));
  return Tensor<T>::from_data(tokens.shape(), std::move(values));
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config, ParameterStore<T>& store, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  const auto d = config_.embed_dim;
  patch_embed_ = Linear<T>::create(store, "encoder.patch_embed", config_.patch_dim(), d, rng);
  pos_embed_ = store.add("encoder.pos_embed", trunc_normal<T>({config_.num_tokens(), d}, 0.02, rng));
  for (std::size_t i = 0; i < config_.depth; ++i) {
    blocks_.push_back(TransformerBlock<T>::create(store, "encoder.blocks." + std::to_string(i), d, config_.heads,
                                                  d * config_.mlp_ratio, rng));
  }
  norm_ = LayerNorm<T>::create(store, "encoder.norm", d);
}

template <typename T>
EncodedView<T> Encoder<T>::encode(const Tensor<T>& masked_tokens, const MaskSpec& mask) const {
  if (mask.total != config_.num_tokens() || masked_tokens.rank() != 2 || masked_tokens.dim(0) != mask.total ||
      masked_tokens.dim(1) != config_.patch_dim()) {
    throw ShapeError("encoder: expected token matrix [" + std::to_string(config_.num_tokens()) + "," +
                     std::to_string(config_.patch_dim()) + "], got " + to_string(masked_tokens.shape()));
  }
  if (mask.visible.empty()) throw Error("encoder: view has zero visible tokens");
  auto x = patch_embed_(gather_rows(masked_tokens, mask.visible));
  x = add(x, gather_rows(pos_embed_, mask.visible));
  for (const auto& block : blocks_) x = block(x);
  return {norm_(x), mask, config_.grid(), config_.grid()};
}

template <typename T>
std::pair<EncodedView<T>, EncodedView<T>> Encoder<T>::encode_pair(const Tensor<T>& x1, const MaskSpec& m1,
                                                                  const Tensor<T>& x2, const MaskSpec& m2) const {
  return {encode(x1, m1), encode(x2, m2)};
}

template <typename T>
Tensor<T> Encoder<T>::encode_full(const Image& img) const {
  if (img.height != config_.image_size || img.width != config_.image_size) {
    throw ShapeError("encoder: expected " + std::to_string(config_.image_size) + "x" +
                     std::to_string(config_.image_size) + " image, got " + std::to_string(img.height) + "x" +
                     std::to_string(img.width));
  }
  return encode(patchify<T>(img, config_.patch_size), MaskSpec::none(config_.num_tokens())).tokens;
}

template <typename T>
std::vector<T> Encoder<T>::pooled(const Image& img) const {
  NoGradGuard no_grad;
  return mean_axis(encode_full(img), 0).to_vector();
}

template Tensor<float> patchify<float>(const Image&, std::size_t);
template Tensor<double> patchify<double>(const Image&, std::size_t);
template Image unpatchify<float>(const Tensor<float>&, std::size_t, std::size_t, std::size_t);
template Image unpatchify<double>(const Tensor<double>&, std::size_t, std::size_t, std::size_t);
template Tensor<float> apply_mask<float>(const Tensor<float>&, const MaskSpec&);
template Tensor<double> apply_mask<double>(const Tensor<double>&, const MaskSpec&);
template class Encoder<float>;
template class Encoder<double>;

}  // namespace egoclust
