#pragma once

#include "egoclust/encoder.hpp"
#include "egoclust/nn.hpp"

#include <vector>

namespace egoclust {

inline constexpr double kCosineEps = 1e-8;

/// Tokenwise two-layer MLP, D -> D (GELU) -> C, shared by both views.
///
/// The projected tokens are laid back onto the patch grid. Masked grid
/// positions hold PH(mask_token + encoder positional embedding), so every view
/// yields a dense (C, W, H) embedding.
template <typename T>
class ProjectionHead {
 public:
  ProjectionHead(const EncoderConfig& encoder, std::size_t channels, ParameterStore<T>& store, std::mt19937_64& rng);

  std::size_t channels() const { return channels_; }

  /// [n, D] -> [n, C]
  Tensor<T> operator()(const Tensor<T>& tokens) const { return fc2_(gelu(fc1_(tokens))); }

  /// Grid embedding of shape (C, W, H); W indexes grid columns, H grid rows.
  Tensor<T> project(const EncodedView<T>& view, const Tensor<T>& encoder_pos) const;

 private:
  std::size_t channels_;
  Linear<T> fc1_;
  Linear<T> fc2_;
  Tensor<T> mask_token_;  // [D]
};

/// Pairwise grid similarity: for every W index the C x H slabs are flattened
/// and compared by cosine (denominator floored at 1e-8), then averaged over W.
/// Returns [|lhs|, |rhs|].
template <typename T>
Tensor<T> similarity_matrix(const std::vector<Tensor<T>>& lhs, const std::vector<Tensor<T>>& rhs);

template <typename T>
Tensor<T> similarity(const Tensor<T>& z, const Tensor<T>& z_prime);

/// Loss from precomputed similarity matrices s11 = Sim(z1_i, z1_j) and
/// s12 = Sim(z1_i, z2_k). Per anchor i the denominator sums exp(s11/tau) over
/// j != i and exp(s12/tau) over every k (including k = i). Mean over anchors.
template <typename T>
Tensor<T> contrastive_loss_from_similarities(const Tensor<T>& s11, const Tensor<T>& s12, double tau);

template <typename T>
Tensor<T> contrastive_loss(const std::vector<Tensor<T>>& z1, const std::vector<Tensor<T>>& z2, double tau);

}  // namespace egoclust
