#include "egoclust/nn.hpp"

#include <cmath>

namespace egoclust {

template <typename T>
Tensor<T> ParameterStore<T>::add(const std::string& name, Tensor<T> value) {
  if (contains(name)) throw Error("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  entries_.emplace_back(name, value);
  return value;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw Error("unknown parameter '" + name + "'");
}

template <typename T>
bool ParameterStore<T>::contains(const std::string& name) const {
  for (const auto& entry : entries_) {
    if (entry.first == name) return true;
  }
  return false;
}

template <typename T>
std::size_t ParameterStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& entry : entries_) n += entry.second.numel();
  return n;
}

template <typename T>
std::vector<Tensor<T>> ParameterStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& entry : entries_) out.push_back(entry.second);
  return out;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& entry : entries_) {
    if (entry.second.has_grad()) entry.second.zero_grad();
  }
}

template <typename T>
Tensor<T> trunc_normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> values(numel(shape));
  for (auto& v : values) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = static_cast<T>(z * stddev);
  }
  return Tensor<T>::from_data(std::move(shape), std::move(values));
}

template <typename T>
Linear<T> Linear<T>::create(ParameterStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
                            std::mt19937_64& rng) {
  Linear layer;
  layer.weight = store.add(prefix + ".weight", trunc_normal<T>({in, out}, 0.02, rng));
  layer.bias = store.add(prefix + ".bias", Tensor<T>::zeros({out}));
  return layer;
}

template <typename T>
LayerNorm<T> LayerNorm<T>::create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim) {
  LayerNorm norm;
  norm.gain = store.add(prefix + ".gain", Tensor<T>::full({dim}, T(1)));
  norm.bias = store.add(prefix + ".bias", Tensor<T>::zeros({dim}));
  return norm;
}

template <typename T>
TransformerBlock<T> TransformerBlock<T>::create(ParameterStore<T>& store, const std::string& prefix, std::size_t dim,
                                                std::size_t heads, std::size_t mlp_hidden, std::mt19937_64& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw Error("embedding dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  TransformerBlock block;
  block.dim_ = dim;
  block.heads_ = heads;
  block.norm1_ = LayerNorm<T>::create(store, prefix + ".norm1", dim);
  block.qkv_ = Linear<T>::create(store, prefix + ".attn.qkv", dim, 3 * dim, rng);
  block.proj_ = Linear<T>::create(store, prefix + ".attn.proj", dim, dim, rng);
  block.norm2_ = LayerNorm<T>::create(store, prefix + ".norm2", dim);
  block.fc1_ = Linear<T>::create(store, prefix + ".mlp.fc1", dim, mlp_hidden, rng);
  block.fc2_ = Linear<T>::create(store, prefix + ".mlp.fc2", mlp_hidden, dim, rng);
  return block;
}

template <typename T>
Tensor<T> TransformerBlock<T>::attention(const Tensor<T>& x) const {
  const std::size_t tokens = x.dim(0);
  const std::size_t head_dim = dim_ / heads_;
  const auto qkv = qkv_(x);
  auto split_heads = [&](std::size_t offset) {
    auto part = slice(qkv, 1, offset, dim_);
    return permute(reshape(part, {tokens, heads_, head_dim}), {1, 0, 2});  // [H, t, dh]
  };
  const auto q = split_heads(0);
  const auto k = split_heads(dim_);
  const auto v = split_heads(2 * dim_);
  const auto scores = scale(bmm(q, permute(k, {0, 2, 1})), T(1) / std::sqrt(static_cast<T>(head_dim)));
  const auto weights = softmax(scores, 2);
  const auto mixed = bmm(weights, v);  // [H, t, dh]
  return proj_(reshape(permute(mixed, {1, 0, 2}), {tokens, dim_}));
}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& x) const {
  const auto h = add(x, attention(norm1_(x)));
  return add(h, fc2_(gelu(fc1_(norm2_(h)))));
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template Tensor<float> trunc_normal<float>(Shape, double, std::mt19937_64&);
template Tensor<double> trunc_normal<double>(Shape, double, std::mt19937_64&);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;

}  // namespace egoclust
