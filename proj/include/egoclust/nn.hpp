#pragma once

#include "egoclust/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace egoclust {

/// Ordered, named collection of trainable leaves. Names are dotted paths
/// ("encoder.blocks.0.attn.qkv.weight") and double as checkpoint keys.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> value);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const;

  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

/// Truncated normal at +-2 sigma, as used for ViT weights.
template <typename T>
Tensor<T> trunc_normal(Shape shape, double stddev, std::mt19937_64& rng);

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static Linear create(ParameterStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                       std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return add_bias(matmul(x, weight), bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  static LayerNorm create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim);
  Tensor<T> operator()(const Tensor<T>& x) const { return layernorm(x, gain, bias, T(1e-5)); }
};

/// Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)).
template <typename T>
class TransformerBlock {
 public:
  static TransformerBlock create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                                 std::size_t heads, std::size_t mlp_hidden, std::mt19937_64& rng);

  // x: [tokens, dim]
  Tensor<T> operator()(const Tensor<T>& x) const;

 private:
  Tensor<T> attention(const Tensor<T>& x) const;

  std::size_t dim_ = 0;
  std::size_t heads_ = 1;
  LayerNorm<T> norm1_;
  Linear<T> qkv_;
  Linear<T> proj_;
  LayerNorm<T> norm2_;
  Linear<T> fc1_;
  Linear<T> fc2_;
};

}  // namespace egoclust
