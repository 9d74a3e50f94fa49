#pragma once

#include "egoclust/dataset.hpp"
#include "egoclust/model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace egoclust {

/// Row-major (frames x dim) matrix of pooled encoder outputs.
struct FeatureSet {
  std::vector<std::int64_t> frame_index;
  std::size_t dim = 0;
  std::vector<double> values;
  std::optional<std::vector<int>> labels;

  std::size_t rows() const { return frame_index.size(); }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  /// Throws on shape mismatch, non-finite entries or misaligned labels.
  void validate() const;
  FeatureSet subset(std::span<const std::size_t> rows) const;

  static FeatureSet from_rows(const std::vector<std::vector<double>>& rows,
                              std::optional<std::vector<int>> labels = std::nullopt);
};

/// Worker count from EGOCLUST_THREADS (default: hardware concurrency, min 1).
std::size_t worker_threads();

/// Mean-pooled encode_full output per frame, no masking, no augmentation.
template <typename T>
FeatureSet extract_features(const ImageSequence& seq, const Encoder<T>& encoder, std::size_t threads = 0);
FeatureSet extract_features(const ImageSequence& seq, const std::filesystem::path& checkpoint,
                            std::size_t threads = 0);

struct ProbeConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ProbeResult {
  double top1 = 0.0;
  std::vector<int> classes;                     // sorted class ids
  std::vector<double> per_class;                // accuracy per entry of `classes`
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  double train_top1 = 0.0;

  std::string to_json() const;
};

/// Linear classifier (D -> K) with softmax cross-entropy and AdamW on fixed
/// features.
ProbeResult linear_probe(const FeatureSet& train, const FeatureSet& test, const ProbeConfig& config = {});

/// Same classifier, but training features are recomputed every epoch from
/// crop-and-flip augmented images. Test images are not augmented.
template <typename T>
ProbeResult linear_probe_images(const Encoder<T>& encoder, const ImageSequence& train, const ImageSequence& test,
                                const ProbeConfig& config = {});

struct ClusterMetrics {
  double ari = 0.0;
  double nmi = 0.0;
  double purity = 0.0;
};

/// ARI, NMI (arithmetic-mean normalization) and purity of `pred` against `truth`.
ClusterMetrics cluster_metrics(std::span<const int> pred, std::span<const int> truth);

struct PcaResult {
  std::size_t dims = 0;
  std::vector<double> mean;            // [D]
  std::vector<double> components;      // [dims x D], rows orthonormal
  std::vector<double> eigenvalues;     // all D, descending
  std::vector<double> coordinates;     // [rows x dims]
};

/// Exact PCA from the covariance eigendecomposition. Each component is
/// signed so its largest-magnitude entry is positive.
PcaResult pca_project(const FeatureSet& features, std::size_t dims = 2);

void write_features_csv(const FeatureSet& features, const std::filesystem::path& path);
FeatureSet read_features_csv(const std::filesystem::path& path);
void write_projection_csv(const FeatureSet& features, const PcaResult& pca, std::span<const int> event_ids,
                          const std::filesystem::path& path);
void write_metrics_json(const std::filesystem::path& path, const std::optional<ClusterMetrics>& metrics,
                        const std::optional<double>& top1);

}  // namespace egoclust
