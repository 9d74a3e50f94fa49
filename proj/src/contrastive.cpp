#include "egoclust/contrastive.hpp"

#include <algorithm>
#include <limits>

namespace egoclust {

template <typename T>
ProjectionHead<T>::ProjectionHead(const EncoderConfig& encoder, std::size_t channels, ParameterStore<T>& store,
                                  std::mt19937_64& rng)
    : channels_(channels) {
  if (channels == 0) throw Error("projection head: channel count must be positive");
  const auto d = encoder.embed_dim;
  fc1_ = Linear<T>::create(store, "proj_head.fc1", d, d, rng);
  fc2_ = Linear<T>::create(store, "proj_head.fc2", d, channels, rng);
  mask_token_ = store.add("proj_head.mask_token", trunc_normal<T>({d}, 0.02, rng));
}

template <typename T>
Tensor<T> ProjectionHead<T>::project(const EncodedView<T>& view, const Tensor<T>& encoder_pos) const {
  const auto& mask = view.mask;
  if (view.grid_w * view.grid_h != mask.total) throw ShapeError("projection: grid does not cover the token count");
  auto full = scatter_rows((*this)(view.tokens), mask.visible, mask.total);
  if (!mask.masked.empty()) {
    const auto fill = add(repeat_row(mask_token_, mask.masked.size()), gather_rows(encoder_pos, mask.masked));
    full = add(full, scatter_rows((*this)(fill), mask.masked, mask.total));
  }
  // Tokens are raster ordered (row-major over the grid): [H, W, C] -> [C, W, H].
  return permute(reshape(full, {view.grid_h, view.grid_w, channels_}), {2, 1, 0});
}

namespace {

// [N, C, W, H] stack -> [W, N, C*H]
template <typename T>
Tensor<T> slabs(const std::vector<Tensor<T>>& grids) {
  const auto stacked = stack(grids);
  if (stacked.rank() != 4) throw ShapeError("similarity expects (C, W, H) grid embeddings");
  const auto n = stacked.dim(0);
  const auto c = stacked.dim(1);
  const auto w = stacked.dim(2);
  const auto h = stacked.dim(3);
  return reshape(permute(stacked, {2, 0, 1, 3}), {w, n, c * h});
}

}  // namespace

template <typename T>
Tensor<T> similarity_matrix(const std::vector<Tensor<T>>& lhs, const std::vector<Tensor<T>>& rhs) {
  if (lhs.empty() || rhs.empty()) throw Error("similarity: empty batch");
  if (lhs.front().shape() != rhs.front().shape()) throw ShapeError("similarity: grid shapes differ");
  const auto a = slabs(lhs);  // [W, N, F]
  const auto b = slabs(rhs);  // [W, M, F]
  const auto dots = bmm(a, permute(b, {0, 2, 1}));
  const auto norm_a = sum_axis(square(a), 2, true);                    // [W, N, 1]
  const auto norm_b = permute(sum_axis(square(b), 2, true), {0, 2, 1});  // [W, 1, M]
  const T eps = static_cast<T>(kCosineEps);
  // max(|a||b|, eps) == sqrt(max(|a|^2 |b|^2, eps^2)); the squared form keeps
  // sqrt away from zero.
  const auto denom = sqrt(clamp_min(bmm(norm_a, norm_b), eps * eps));
  return mean_axis(div(dots, denom), 0);
}

template <typename T>
Tensor<T> similarity(const Tensor<T>& z, const Tensor<T>& z_prime) {
  return reshape(similarity_matrix<T>({z}, {z_prime}), {});
}

template <typename T>
Tensor<T> contrastive_loss_from_similarities(const Tensor<T>& s11, const Tensor<T>& s12, double tau) {
  if (!(tau > 0.0)) throw Error("contrastive loss: temperature must be positive");
  if (s11.rank() != 2 || s11.dim(0) != s11.dim(1) || s11.shape() != s12.shape() || s11.dim(0) == 0) {
    throw ShapeError("contrastive loss: similarity matrices must both be N x N with N >= 1");
  }
  const std::size_t n = s11.dim(0);
  const T inv = static_cast<T>(1.0 / tau);
  auto v11 = s11.data();
  auto v12 = s12.data();
  // Per-anchor log-sum-exp shift; a constant, so it does not affect gradients.
  std::vector<T> shift(n);
  std::vector<T> shift_rows(n * n);
  std::vector<T> off_diag(n * n, T(1));
  std::vector<T> diag(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) mx = std::max(mx, v11[i * n + j] * inv);
      mx = std::max(mx, v12[i * n + j] * inv);
    }
    shift[i] = mx;
    std::fill(shift_rows.begin() + i * n, shift_rows.begin() + (i + 1) * n, mx);
    off_diag[i * n + i] = T(0);
    diag[i * n + i] = T(1);
  }
  const auto shift_m = Tensor<T>::from_data({n, n}, std::move(shift_rows));
  const auto off_m = Tensor<T>::from_data({n, n}, std::move(off_diag));
  const auto diag_m = Tensor<T>::from_data({n, n}, std::move(diag));
  const auto negatives = sum_axis(mul(exp(sub(scale(s11, inv), shift_m)), off_m), 1);
  const auto cross = sum_axis(exp(sub(scale(s12, inv), shift_m)), 1);
  const auto log_denominator = add(log(add(negatives, cross)), Tensor<T>::from_data({n}, std::move(shift)));
  const auto positive = scale(sum_axis(mul(s12, diag_m), 1), inv);
  return mean(sub(log_denominator, positive));
}

template <typename T>
Tensor<T> contrastive_loss(const std::vector<Tensor<T>>& z1, const std::vector<Tensor<T>>& z2, double tau) {
  if (!(tau > 0.0)) throw Error("contrastive loss: temperature must be positive");
  if (z1.empty() || z1.size() != z2.size()) throw Error("contrastive loss: views must form a non-empty batch of pairs");
  return contrastive_loss_from_similarities(similarity_matrix(z1, z1), similarity_matrix(z1, z2), tau);
}

template class ProjectionHead<float>;
template class ProjectionHead<double>;
template Tensor<float> similarity_matrix<float>(const std::vector<Tensor<float>>&, const std::vector<Tensor<float>>&);
template Tensor<double> similarity_matrix<double>(const std::vector<Tensor<double>>&,
                                                  const std::vector<Tensor<double>>&);
template Tensor<float> similarity<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> similarity<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> contrastive_loss_from_similarities<float>(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> contrastive_loss_from_similarities<double>(const Tensor<double>&, const Tensor<double>&,
                                                                   double);
template Tensor<float> contrastive_loss<float>(const std::vector<Tensor<float>>&, const std::vector<Tensor<float>>&,
                                              double);
template Tensor<double> contrastive_loss<double>(const std::vector<Tensor<double>>&,
                                                 const std::vector<Tensor<double>>&, double);

}  // namespace egoclust
