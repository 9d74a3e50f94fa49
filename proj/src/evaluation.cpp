#include "egoclust/evaluation.hpp"

#include "egoclust/trainer.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace egoclust {

void FeatureSet::validate() const {
  if (values.size() != rows() * dim) {
    throw ShapeError("feature set: " + std::to_string(values.size()) + " values for " + std::to_string(rows()) +
                     " rows of width " + std::to_string(dim));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("feature set contains a non-finite entry");
  }
  if (labels && labels->size() != rows()) throw ShapeError("feature set: label count does not match row count");
}

FeatureSet FeatureSet::subset(std::span<const std::size_t> picked) const {
  FeatureSet out;
  out.dim = dim;
  if (labels) out.labels.emplace();
  for (auto r : picked) {
    if (r >= rows()) throw Error("feature subset: row " + std::to_string(r) + " out of range");
    out.frame_index.push_back(frame_index[r]);
    const auto src = row(r);
    out.values.insert(out.values.end(), src.begin(), src.end());
    if (labels) out.labels->push_back((*labels)[r]);
  }
  return out;
}

FeatureSet FeatureSet::from_rows(const std::vector<std::vector<double>>& data, std::optional<std::vector<int>> labels) {
  FeatureSet out;
  out.dim = data.empty() ? 0 : data.front().size();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].size() != out.dim) throw ShapeError("feature rows have different widths");
    out.frame_index.push_back(static_cast<std::int64_t>(i));
    out.values.insert(out.values.end(), data[i].begin(), data[i].end());
  }
  out.labels = std::move(labels);
  out.validate();
  return out;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("EGOCLUST_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) {
      throw Error(std::string("EGOCLUST_THREADS must be a positive integer, got '") + env + "'");
    }
    return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// is rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

template <typename T>
std::vector<double> pooled_features(const Encoder<T>& encoder, const Image& img) {
  // Off-size frames get the same bilinear resize the training views go through.
  const auto n = encoder.config().image_size;
  const auto v = img.height == n && img.width == n ? encoder.pooled(img) : encoder.pooled(resize_bilinear(img, n, n));
  return {v.begin(), v.end()};
}

template <typename T>
FeatureSet features_of(const std::vector<Image>& images, const Encoder<T>& encoder, std::size_t threads) {
  const auto dim = encoder.config().embed_dim;
  FeatureSet out;
  out.dim = dim;
  out.values.assign(images.size() * dim, 0.0);
  out.frame_index.resize(images.size());
  std::iota(out.frame_index.begin(), out.frame_index.end(), std::int64_t{0});
  parallel_for(images.size(), threads == 0 ? worker_threads() : threads, [&](std::size_t i) {
    const auto row = pooled_features(encoder, images[i]);
    std::copy(row.begin(), row.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * dim));
  });
  return out;
}

}  // namespace

template <typename T>
FeatureSet extract_features(const ImageSequence& seq, const Encoder<T>& encoder, std::size_t threads) {
  auto out = features_of(seq.images(), encoder, threads);
  for (std::size_t i = 0; i < seq.size(); ++i) out.frame_index[i] = seq.frames[i].index;
  if (seq.labeled) out.labels = seq.labels();
  out.validate();
  return out;
}

FeatureSet extract_features(const ImageSequence& seq, const std::filesystem::path& checkpoint, std::size_t threads) {
  const FrozenEncoder<float> frozen(checkpoint);
  return extract_features(seq, frozen.encoder, threads);
}

void ProbeConfig::validate() const {
  if (!(lr > 0.0)) throw Error("probe config: learning rate must be positive");
  if (weight_decay < 0.0) throw Error("probe config: weight decay must be non-negative");
  if (batch_size == 0) throw Error("probe config: batch size must be at least 1");
  if (epochs == 0) throw Error("probe config: epochs must be at least 1");
}

std::string ProbeResult::to_json() const {
  nlohmann::ordered_json j;
  j["top1"] = top1;
  j["train_top1"] = train_top1;
  j["classes"] = classes;
  auto per = nlohmann::ordered_json::array();
  for (double a : per_class) per.push_back(std::isnan(a) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(a));
  j["per_class"] = per;
  j["confusion"] = confusion;
  return j.dump(2);
}

namespace {

struct ProbeData {
  std::vector<int> classes;
  std::vector<int> train_targets;
  std::vector<int> test_targets;
};

ProbeData index_labels(const std::vector<int>& train, const std::vector<int>& test) {
  ProbeData d;
  std::vector<int> seen_train(train);
  std::sort(seen_train.begin(), seen_train.end());
  seen_train.erase(std::unique(seen_train.begin(), seen_train.end()), seen_train.end());
  if (seen_train.size() < 2) throw Error("linear probe: training labels contain a single class");
  d.classes = seen_train;
  d.classes.insert(d.classes.end(), test.begin(), test.end());
  std::sort(d.classes.begin(), d.classes.end());
  d.classes.erase(std::unique(d.classes.begin(), d.classes.end()), d.classes.end());
  auto to_index = [&](int c) {
    return static_cast<int>(std::lower_bound(d.classes.begin(), d.classes.end(), c) - d.classes.begin());
  };
  for (int c : train) d.train_targets.push_back(to_index(c));
  for (int c : test) d.test_targets.push_back(to_index(c));
  return d;
}

class ProbeTrainer {
 public:
  ProbeTrainer(std::size_t dim, std::size_t classes, const ProbeConfig& config) : config_(config), rng_(config.seed) {
    fc_ = Linear<double>::create(store_, "probe", dim, classes, rng_);
    opt_.base_lr = config.lr;
    opt_.weight_decay = config.weight_decay;
    params_ = store_.tensors();
  }

  // One pass over `features` (rows x dim) in a seeded shuffled order.
  void epoch(const std::vector<double>& features, std::size_t dim, const std::vector<int>& targets) {
    std::vector<std::size_t> order(targets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config_.batch_size);
      std::vector<double> x;
      std::vector<int> y;
      for (std::size_t i = start; i < stop; ++i) {
        const auto r = order[i];
        x.insert(x.end(), features.begin() + static_cast<std::ptrdiff_t>(r * dim),
                 features.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim));
        y.push_back(targets[r]);
      }
      store_.zero_grad();
      const auto logits = fc_(Tensor<double>::from_data({stop - start, dim}, std::move(x)));
      backward(softmax_cross_entropy(logits, std::span<const int>(y)));
      adamw_step(params_, state_, config_.lr, opt_);
    }
  }

  std::vector<int> predict(const std::vector<double>& features, std::size_t dim) const {
    NoGradGuard no_grad;
    const std::size_t n = features.size() / dim;
    const auto logits = fc_(Tensor<double>::from_data({n, dim}, features));
    const auto k = logits.dim(1);
    const auto v = logits.data();
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = static_cast<int>(std::max_element(v.begin() + i * k, v.begin() + (i + 1) * k) - (v.begin() + i * k));
    }
    return out;
  }

 private:
  ProbeConfig config_;
  std::mt19937_64 rng_;
  ParameterStore<double> store_;
  Linear<double> fc_;
  TrainConfig opt_;
  OptimizerState<double> state_;
  std::vector<Tensor<double>> params_;
};

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i] ? 1 : 0;
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

ProbeResult summarize(const ProbeData& data, const std::vector<int>& test_pred, const std::vector<int>& train_pred) {
  ProbeResult r;
  const auto k = data.classes.size();
  r.classes = data.classes;
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < test_pred.size(); ++i) {
    ++r.confusion[static_cast<std::size_t>(data.test_targets[i])][static_cast<std::size_t>(test_pred[i])];
  }
  for (std::size_t c = 0; c < k; ++c) {
    const auto support = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    r.per_class.push_back(support == 0 ? std::nan("")
                                       : static_cast<double>(r.confusion[c][c]) / static_cast<double>(support));
  }
  r.top1 = accuracy(test_pred, data.test_targets);
  r.train_top1 = accuracy(train_pred, data.train_targets);
  return r;
}

const std::vector<int>& require_labels(const FeatureSet& f, const char* which) {
  if (!f.labels) throw Error(std::string("linear probe: ") + which + " features carry no labels");
  return *f.labels;
}

}  // namespace

ProbeResult linear_probe(const FeatureSet& train, const FeatureSet& test, const ProbeConfig& config) {
  config.validate();
  train.validate();
  test.validate();
  if (train.rows() == 0 || test.rows() == 0) throw Error("linear probe: empty split");
  if (train.dim != test.dim) throw ShapeError("linear probe: train and test feature widths differ");
  const auto data = index_labels(require_labels(train, "train"), require_labels(test, "test"));
  ProbeTrainer trainer(train.dim, data.classes.size(), config);
  for (std::size_t e = 0; e < config.epochs; ++e) trainer.epoch(train.values, train.dim, data.train_targets);
  return summarize(data, trainer.predict(test.values, test.dim), trainer.predict(train.values, train.dim));
}

template <typename T>
ProbeResult linear_probe_images(const Encoder<T>& encoder, const ImageSequence& train, const ImageSequence& test,
                                const ProbeConfig& config) {
  config.validate();
  if (!train.labeled || !test.labeled) throw Error("linear probe: image splits must be labeled");
  if (train.size() == 0 || test.size() == 0) throw Error("linear probe: empty split");
  const auto data = index_labels(train.labels(), test.labels());
  const auto dim = encoder.config().embed_dim;
  const auto policy = AugmentPolicy::crop_and_flip(encoder.config().image_size);
  const auto train_images = train.images();
  ProbeTrainer trainer(dim, data.classes.size(), config);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    std::vector<Image> augmented;
    augmented.reserve(train_images.size());
    for (std::size_t i = 0; i < train_images.size(); ++i) {
      auto rng = image_stream(config.seed, e, i);
      augmented.push_back(augment(train_images[i], policy, rng));
    }
    trainer.epoch(features_of(augmented, encoder, 0).values, dim, data.train_targets);
  }
  const auto train_clean = extract_features(train, encoder);
  const auto test_clean = extract_features(test, encoder);
  return summarize(data, trainer.predict(test_clean.values, dim), trainer.predict(train_clean.values, dim));
}

ClusterMetrics cluster_metrics(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw ShapeError("cluster metrics: label sequences differ in length");
  if (pred.empty()) throw Error("cluster metrics: empty input");
  std::map<int, std::size_t> pred_ids;
  std::map<int, std::size_t> truth_ids;
  for (int p : pred) pred_ids.emplace(p, pred_ids.size());
  for (int t : truth) truth_ids.emplace(t, truth_ids.size());
  const auto kp = pred_ids.size();
  const auto kt = truth_ids.size();
  std::vector<double> table(kp * kt, 0.0);
  std::vector<double> a(kp, 0.0);  // cluster sizes
  std::vector<double> b(kt, 0.0);  // class sizes
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred_ids[pred[i]];
    const auto t = truth_ids[truth[i]];
    table[p * kt + t] += 1.0;
    a[p] += 1.0;
    b[t] += 1.0;
  }
  const double n = static_cast<double>(pred.size());
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };

  ClusterMetrics m;
  double sum_ij = 0.0;
  double sum_a = 0.0;
  double sum_b = 0.0;
  for (double v : table) sum_ij += pairs(v);
  for (double v : a) sum_a += pairs(v);
  for (double v : b) sum_b += pairs(v);
  const double expected = sum_a * sum_b / pairs(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  // Both partitions trivial (all singletons or a single block) gives 0/0.
  m.ari = max_index == expected ? 1.0 : (sum_ij - expected) / (max_index - expected);

  double mi = 0.0;
  double h_pred = 0.0;
  double h_truth = 0.0;
  for (std::size_t p = 0; p < kp; ++p) {
    for (std::size_t t = 0; t < kt; ++t) {
      const double v = table[p * kt + t];
      if (v > 0.0) mi += (v / n) * std::log(n * v / (a[p] * b[t]));
    }
  }
  for (double v : a) h_pred -= (v / n) * std::log(v / n);
  for (double v : b) h_truth -= (v / n) * std::log(v / n);
  const double norm = 0.5 * (h_pred + h_truth);
  m.nmi = norm == 0.0 ? 1.0 : std::clamp(mi / norm, 0.0, 1.0);

  double majority = 0.0;
  for (std::size_t p = 0; p < kp; ++p) {
    majority += *std::max_element(table.begin() + static_cast<std::ptrdiff_t>(p * kt),
                                  table.begin() + static_cast<std::ptrdiff_t>((p + 1) * kt));
  }
  m.purity = majority / n;
  return m;
}

PcaResult pca_project(const FeatureSet& features, std::size_t dims) {
  features.validate();
  const auto n = features.rows();
  const auto d = features.dim;
  if (dims == 0 || dims > d) throw Error("pca: dims must lie in [1, feature width]");
  if (n < dims) throw Error("pca: need at least " + std::to_string(dims) + " rows, got " + std::to_string(n));
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const Matrix> x(features.values.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Matrix centered = x.rowwise() - mu;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("pca: eigendecomposition failed");

  PcaResult r;
  r.dims = dims;
  r.mean.assign(mu.data(), mu.data() + d);
  // Eigen orders eigenvalues ascending.
  for (Eigen::Index k = static_cast<Eigen::Index>(d) - 1; k >= 0; --k) {
    r.eigenvalues.push_back(std::max(0.0, solver.eigenvalues()(k)));
  }
  Matrix comps(static_cast<Eigen::Index>(dims), static_cast<Eigen::Index>(d));
  for (std::size_t c = 0; c < dims; ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(d - 1 - c));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    comps.row(static_cast<Eigen::Index>(c)) = v.transpose();
  }
  r.components.assign(comps.data(), comps.data() + comps.size());
  const Matrix coords = centered * comps.transpose();
  r.coordinates.assign(coords.data(), coords.data() + coords.size());
  return r;
}

void write_features_csv(const FeatureSet& features, const std::filesystem::path& path) {
  features.validate();
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "frame_index";
  for (std::size_t k = 0; k < features.dim; ++k) out << ",f" << k;
  out << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    out << features.frame_index[i];
    for (double v : features.row(i)) out << ',' << v;
    out << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

FeatureSet read_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("frame_index", 0) != 0) {
    throw Error(path.string() + ": missing frame_index header");
  }
  FeatureSet f;
  f.dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != f.dim + 1) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(f.dim + 1) +
                  " columns");
    }
    try {
      f.frame_index.push_back(std::stoll(cells[0]));
      for (std::size_t k = 1; k < cells.size(); ++k) f.values.push_back(std::stod(cells[k]));
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  f.validate();
  return f;
}

void write_projection_csv(const FeatureSet& features, const PcaResult& pca, std::span<const int> event_ids,
                          const std::filesystem::path& path) {
  if (pca.dims < 2) throw Error("projection export needs two components");
  if (event_ids.size() != features.rows()) throw ShapeError("projection export: event ids do not match rows");
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "frame_index,x,y,event_id\n";
  for (std::size_t i = 0; i < features.rows(); ++i) {
    out << features.frame_index[i] << ',' << pca.coordinates[i * pca.dims] << ','
        << pca.coordinates[i * pca.dims + 1] << ',' << event_ids[i] << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

void write_metrics_json(const std::filesystem::path& path, const std::optional<ClusterMetrics>& metrics,
                        const std::optional<double>& top1) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["ari"] = metrics ? ordered_json(metrics->ari) : ordered_json(nullptr);
  j["nmi"] = metrics ? ordered_json(metrics->nmi) : ordered_json(nullptr);
  j["purity"] = metrics ? ordered_json(metrics->purity) : ordered_json(nullptr);
  j["top1"] = top1 ? ordered_json(*top1) : ordered_json(nullptr);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

template FeatureSet extract_features<float>(const ImageSequence&, const Encoder<float>&, std::size_t);
template FeatureSet extract_features<double>(const ImageSequence&, const Encoder<double>&, std::size_t);
template ProbeResult linear_probe_images<float>(const Encoder<float>&, const ImageSequence&, const ImageSequence&,
                                                const ProbeConfig&);
template ProbeResult linear_probe_images<double>(const Encoder<double>&, const ImageSequence&, const ImageSequence&,
                                                 const ProbeConfig&);

}  // namespace egoclust
