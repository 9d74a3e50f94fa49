#pragma once

#include "egoclust/model.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

namespace testing {

template <typename T>
egoclust::Tensor<T> random_tensor(egoclust::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                  bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> data(egoclust::numel(shape));
  for (auto& v : data) v = static_cast<T>(u(rng));
  return egoclust::Tensor<T>::from_data(std::move(shape), std::move(data), requires_grad);
}

inline egoclust::Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  egoclust::Image img;
  img.height = h;
  img.width = w;
  img.data.resize(egoclust::Image::kChannels * h * w);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.data) v = u(rng);
  return img;
}

// Small enough for finite differences over every parameter.
inline egoclust::ModelConfig tiny_model() {
  egoclust::ModelConfig c;
  c.encoder.image_size = 8;
  c.encoder.patch_size = 4;
  c.encoder.embed_dim = 8;
  c.encoder.depth = 1;
  c.encoder.heads = 2;
  c.encoder.mlp_ratio = 2;
  c.encoder.mask_ratio = 0.5;
  c.decoder.dim = 4;
  c.decoder.depth = 1;
  c.decoder.heads = 2;
  c.decoder.mlp_ratio = 2;
  c.proj_channels = 3;
  return c;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("egoclust-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
