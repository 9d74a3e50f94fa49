#include "egoclust/events.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

namespace egoclust {

void SegmentationParams::validate() const {
  if (window == 0) throw Error("segmentation: window must be at least 1");
  if (!(threshold >= 0.0 && threshold <= 2.0)) throw Error("segmentation: threshold must lie in [0,2]");
  if (!(merge_threshold >= 0.0 && merge_threshold <= 2.0)) {
    throw Error("segmentation: merge threshold must lie in [0,2]");
  }
  if (min_length == 0) throw Error("segmentation: minimum event length must be at least 1");
}

void ClusterManifest::validate() const {
  if (frames.empty()) throw Error("manifest: no frames");
  if (frames.size() != events.size()) throw ShapeError("manifest: frame and event lists differ in length");
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i] <= frames[i - 1]) {
      throw Error("manifest: frame " + std::to_string(frames[i]) + " overlaps or precedes frame " +
                  std::to_string(frames[i - 1]));
    }
  }
  int current = 0;
  if (events.front() != 0) throw Error("manifest: event ids must start at 0");
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i] == current) continue;
    if (events[i] != current + 1) {
      throw Error("manifest: event " + std::to_string(events[i]) + " at frame " + std::to_string(frames[i]) +
                  " is not contiguous (expected " + std::to_string(current) + " or " +
                  std::to_string(current + 1) + ")");
    }
    current = events[i];
  }
  if (table.size() != static_cast<std::size_t>(current) + 1) throw Error("manifest: event table out of sync");
  for (const auto& span : table) {
    if (span.first > span.last || span.last >= frames.size() || frames[span.first] != span.start ||
        frames[span.last] != span.end) {
      throw Error("manifest: event table entry " + std::to_string(span.id) + " is inconsistent");
    }
  }
}

bool ClusterManifest::same_assignment(const ClusterManifest& other) const {
  return frames == other.frames && events == other.events;
}

ClusterManifest ClusterManifest::from_assignment(std::vector<std::int64_t> frames, std::vector<int> events) {
  ClusterManifest m;
  m.frames = std::move(frames);
  m.events = std::move(events);
  if (m.frames.size() != m.events.size()) throw ShapeError("manifest: frame and event lists differ in length");
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    if (i == 0 || m.events[i] != m.events[i - 1]) {
      EventSpan span;
      span.id = m.events[i];
      span.first = i;
      m.table.push_back(span);
    }
    auto& span = m.table.back();
    span.last = i;
  }
  for (auto& span : m.table) {
    span.start = m.frames[span.first];
    span.end = m.frames[span.last];
  }
  m.validate();
  return m;
}

FeatureScaling parse_scaling(std::string_view name) {
  if (name == "none") return FeatureScaling::None;
  if (name == "center") return FeatureScaling::Center;
  if (name == "standardize") return FeatureScaling::Standardize;
  throw Error("unknown feature scaling '" + std::string(name) + "' (expected none, center or standardize)");
}

std::string scaling_name(FeatureScaling scaling) {
  switch (scaling) {
    case FeatureScaling::None: return "none";
    case FeatureScaling::Center: return "center";
    case FeatureScaling::Standardize: return "standardize";
  }
  return "standardize";
}

namespace {

using Vec = std::vector<double>;

double norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Same conventions as the contrastive similarity: eps floor on the norm
// product, so a zero vector is at distance 1 from anything but another zero
// vector, which is at distance 0.
double cosine_distance(const Vec& a, const Vec& b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 && nb == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
  return 1.0 - dot / std::max(na * nb, 1e-8);
}

// Scaled, L2-normalized rows.
std::vector<Vec> prepare(const FeatureSet& features, FeatureScaling scaling) {
  features.validate();
  const auto n = features.rows();
  const auto d = features.dim;
  Vec mu(d, 0.0);
  Vec inv_sd(d, 1.0);
  if (scaling != FeatureScaling::None) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) mu[k] += features.row(i)[k];
    }
    for (double& m : mu) m /= static_cast<double>(n);
  }
  if (scaling == FeatureScaling::Standardize) {
    Vec var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) var[k] += (features.row(i)[k] - mu[k]) * (features.row(i)[k] - mu[k]);
    }
    // A constant dimension is all zeros after centering; leave it unscaled.
    for (std::size_t k = 0; k < d; ++k) {
      const double sd = std::sqrt(var[k] / static_cast<double>(n));
      inv_sd[k] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
  }
  std::vector<Vec> rows(n, Vec(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) rows[i][k] = (features.row(i)[k] - mu[k]) * inv_sd[k];
    const double len = norm(rows[i]);
    // Rows within rounding of the mean carry no direction.
    if (len > 1e-12) {
      for (double& x : rows[i]) x /= len;
    } else {
      std::fill(rows[i].begin(), rows[i].end(), 0.0);
    }
  }
  return rows;
}

Vec mean_of(const std::vector<Vec>& rows, std::size_t first, std::size_t last) {
  Vec m(rows.front().size(), 0.0);
  for (std::size_t i = first; i <= last; ++i) {
    for (std::size_t k = 0; k < m.size(); ++k) m[k] += rows[i][k];
  }
  for (double& x : m) x /= static_cast<double>(last - first + 1);
  return m;
}

std::vector<double> scores_of(const std::vector<Vec>& rows, std::size_t w) {
  const auto n = rows.size();
  std::vector<double> scores;
  for (std::size_t g = 0; g + 1 < n; ++g) {
    const std::size_t before = g + 1 >= w ? g + 1 - w : 0;
    const std::size_t after = std::min(n - 1, g + w);
    scores.push_back(cosine_distance(mean_of(rows, before, g), mean_of(rows, g + 1, after)));
  }
  return scores;
}

}  // namespace

std::vector<double> boundary_scores(const FeatureSet& features, const SegmentationParams& params) {
  params.validate();
  if (features.rows() == 0) throw Error("segmentation: empty feature set");
  return scores_of(prepare(features, params.scaling), params.window);
}

namespace {

std::vector<std::size_t> boundaries_from_scores(const std::vector<double>& scores, std::size_t n,
                                                const SegmentationParams& params) {
  const std::size_t radius = (params.window + 1) / 2;
  // Gap g cuts before row g+1. A gap survives if it beats every earlier gap
  // and ties or beats every later gap within the radius.
  std::vector<std::size_t> cuts;
  for (std::size_t g = 0; g < scores.size(); ++g) {
    if (!(scores[g] > params.threshold)) continue;
    bool peak = true;
    const std::size_t lo = g >= radius ? g - radius : 0;
    const std::size_t hi = std::min(scores.size() - 1, g + radius);
    for (std::size_t j = lo; j <= hi && peak; ++j) {
      if (j < g && scores[j] >= scores[g]) peak = false;
      if (j > g && scores[j] > scores[g]) peak = false;
    }
    if (peak) cuts.push_back(g + 1);
  }
  // L_min: repeatedly take the leftmost short run and drop its weaker
  // bounding cut (ties toward the earlier one).
  while (!cuts.empty()) {
    std::size_t start = 0;
    std::optional<std::size_t> short_run;  // index into cuts of the run's right cut, or cuts.size()
    for (std::size_t c = 0; c <= cuts.size(); ++c) {
      const std::size_t stop = c < cuts.size() ? cuts[c] : n;
      if (stop - start < params.min_length) {
        short_run = c;
        break;
      }
      start = stop;
    }
    if (!short_run) break;
    const std::size_t c = *short_run;
    std::size_t drop = 0;
    if (c == 0) {
      drop = 0;
    } else if (c == cuts.size()) {
      drop = c - 1;
    } else {
      drop = scores[cuts[c] - 1] < scores[cuts[c - 1] - 1] ? c : c - 1;
    }
    cuts.erase(cuts.begin() + static_cast<std::ptrdiff_t>(drop));
  }
  return cuts;
}

}  // namespace

std::vector<std::size_t> detect_boundaries(const FeatureSet& features, const SegmentationParams& params) {
  params.validate();
  if (features.rows() == 0) throw Error("segmentation: empty feature set");
  if (params.min_length > features.rows()) {
    throw Error("segmentation: minimum event length " + std::to_string(params.min_length) + " exceeds the " +
                std::to_string(features.rows()) + "-frame sequence");
  }
  const auto rows = prepare(features, params.scaling);
  return boundaries_from_scores(scores_of(rows, params.window), rows.size(), params);
}

ClusterManifest segment_events(const FeatureSet& features, const SegmentationParams& params) {
  const auto cuts = detect_boundaries(features, params);
  const auto rows = prepare(features, params.scaling);
  const auto n = rows.size();

  struct Segment {
    std::size_t first;
    std::size_t last;
  };
  std::vector<Segment> segments;
  std::size_t start = 0;
  for (auto c : cuts) {
    segments.push_back({start, c - 1});
    start = c;
  }
  segments.push_back({start, n - 1});

  // Greedy merge: closest adjacent pair first, ties to the earlier pair.
  while (segments.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t at = 0;
    for (std::size_t s = 0; s + 1 < segments.size(); ++s) {
      const double d = cosine_distance(mean_of(rows, segments[s].first, segments[s].last),
                                       mean_of(rows, segments[s + 1].first, segments[s + 1].last));
      if (d < best) {
        best = d;
        at = s;
      }
    }
    if (!(best < params.merge_threshold)) break;
    segments[at].last = segments[at + 1].last;
    segments.erase(segments.begin() + static_cast<std::ptrdiff_t>(at + 1));
  }

  std::vector<int> events(n);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    for (std::size_t i = segments[s].first; i <= segments[s].last; ++i) events[i] = static_cast<int>(s);
  }
  auto manifest = ClusterManifest::from_assignment(features.frame_index, std::move(events));
  for (auto& span : manifest.table) {
    Vec c(features.dim, 0.0);
    for (std::size_t i = span.first; i <= span.last; ++i) {
      for (std::size_t k = 0; k < c.size(); ++k) c[k] += features.row(i)[k];
    }
    for (double& x : c) x /= static_cast<double>(span.last - span.first + 1);
    span.centroid = std::move(c);
  }
  return manifest;
}

void write_manifest(const ClusterManifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    nlohmann::ordered_json j;
    j["frame"] = manifest.frames[i];
    j["event"] = manifest.events[i];
    out << j.dump() << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

ClusterManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::int64_t> frames;
  std::vector<int> events;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      frames.push_back(j.at("frame").get<std::int64_t>());
      events.push_back(j.at("event").get<int>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": malformed manifest line: " + e.what());
    }
  }
  if (frames.empty()) throw Error(path.string() + ": manifest is empty");
  try {
    return ClusterManifest::from_assignment(std::move(frames), std::move(events));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_event_table(const ClusterManifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  auto table = nlohmann::ordered_json::array();
  for (const auto& span : manifest.table) {
    nlohmann::ordered_json e;
    e["id"] = span.id;
    e["start"] = span.start;
    e["end"] = span.end;
    e["size"] = span.last - span.first + 1;
    e["centroid"] = span.centroid;
    table.push_back(e);
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << table.dump(2) << '\n';
}

std::string Alignment::to_json() const {
  nlohmann::ordered_json j;
  j["agreement"] = agreement;
  j["ari"] = metrics.ari;
  j["nmi"] = metrics.nmi;
  j["purity"] = metrics.purity;
  j["matched_label"] = matched_label;
  auto frames = nlohmann::ordered_json::array();
  for (const auto& m : misaligned) {
    nlohmann::ordered_json e;
    e["frame"] = m.frame;
    e["event"] = m.predicted;
    e["matched_label"] = m.matched_label;
    e["true_label"] = m.true_label;
    frames.push_back(e);
  }
  j["misaligned"] = frames;
  return j.dump(2);
}

std::vector<int> max_weight_matching(const std::vector<std::vector<double>>& weights) {
  const std::size_t rows = weights.size();
  const std::size_t cols = rows == 0 ? 0 : weights.front().size();
  for (const auto& r : weights) {
    if (r.size() != cols) throw ShapeError("matching: ragged weight table");
  }
  std::vector<int> result(rows, -1);
  if (rows == 0 || cols == 0) return result;
  // Square Hungarian on costs (max - w), padded with zero-weight dummies.
  const std::size_t n = std::max(rows, cols);
  double top = 0.0;
  for (const auto& r : weights) {
    for (double v : r) top = std::max(top, v);
  }
  auto cost = [&](std::size_t i, std::size_t j) {
    const double w = (i < rows && j < cols) ? weights[i][j] : 0.0;
    return top - w;
  };
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials u (rows), v (cols); p[j] = row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j] - 1;
    if (i < rows && j - 1 < cols) result[i] = static_cast<int>(j - 1);
  }
  return result;
}

Alignment align_to_ground_truth(const ClusterManifest& manifest, std::span<const int> truth) {
  manifest.validate();
  if (truth.size() != manifest.size()) {
    throw ShapeError("alignment: manifest has " + std::to_string(manifest.size()) + " frames but ground truth has " +
                     std::to_string(truth.size()));
  }
  std::map<int, std::size_t> label_ids;
  for (int t : truth) label_ids.emplace(t, 0);
  std::vector<int> labels;
  for (auto& [label, id] : label_ids) {
    id = labels.size();
    labels.push_back(label);
  }
  const std::size_t k = manifest.table.size();
  std::vector<std::vector<double>> counts(k, std::vector<double>(labels.size(), 0.0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    counts[static_cast<std::size_t>(manifest.events[i])][label_ids[truth[i]]] += 1.0;
  }
  const auto match = max_weight_matching(counts);

  Alignment a;
  a.matched_label.resize(k, -1);
  for (std::size_t e = 0; e < k; ++e) {
    if (match[e] >= 0) a.matched_label[e] = labels[static_cast<std::size_t>(match[e])];
  }
  std::size_t agree = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int event = manifest.events[i];
    const int mapped = a.matched_label[static_cast<std::size_t>(event)];
    if (match[static_cast<std::size_t>(event)] >= 0 && mapped == truth[i]) {
      ++agree;
    } else {
      a.misaligned.push_back({manifest.frames[i], event, mapped, truth[i]});
    }
  }
  a.agreement = static_cast<double>(agree) / static_cast<double>(truth.size());
  a.metrics = cluster_metrics(manifest.events, truth);
  return a;
}

}  // namespace egoclust
