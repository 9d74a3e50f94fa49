#pragma once

#include "egoclust/evaluation.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace egoclust {

enum class FeatureScaling { None, Center, Standardize };

FeatureScaling parse_scaling(std::string_view name);
std::string scaling_name(FeatureScaling scaling);

struct SegmentationParams {
  std::size_t window = 5;        // w, frames on each side of a candidate cut
  double threshold = 0.3;        // theta, cosine distance needed to cut
  double merge_threshold = 0.15; // theta_m, centroid distance below which neighbours merge
  std::size_t min_length = 3;    // L_min
  // Per-dimension preprocessing before L2 normalization. Pooled transformer
  // features share a large common direction that hides the differences
  // between events unless the sequence mean is removed; dividing by the
  // per-dimension spread also stops a few high-variance channels from
  // dominating the angle.
  FeatureScaling scaling = FeatureScaling::Standardize;

  void validate() const;
};

struct EventSpan {
  int id = 0;
  std::int64_t start = 0;  // first frame index
  std::int64_t end = 0;    // last frame index, inclusive
  std::size_t first = 0;   // row positions in the manifest
  std::size_t last = 0;
  std::vector<double> centroid;  // empty when read back from JSONL
};

struct ClusterManifest {
  std::vector<std::int64_t> frames;
  std::vector<int> events;
  std::vector<EventSpan> table;

  std::size_t size() const { return frames.size(); }
  /// Contiguous, disjoint, covering events with ids dense from 0 in temporal
  /// order and strictly increasing frame indices. Throws otherwise.
  void validate() const;
  /// Assignment equality (frames and event ids); centroids are not compared.
  bool same_assignment(const ClusterManifest& other) const;

  static ClusterManifest from_assignment(std::vector<std::int64_t> frames, std::vector<int> events);
};

/// Per-gap boundary scores: entry g is the cosine distance between the mean of
/// the w embeddings before the gap (rows g-w+1..g) and the w after it
/// (rows g+1..g+w), clipped at the sequence ends. Size rows-1.
std::vector<double> boundary_scores(const FeatureSet& features, const SegmentationParams& params);

/// Cut positions (row index of the first frame of each new segment) before
/// merging: scores above theta that are local maxima within +-ceil(w/2),
/// then the weakest boundary of each too-short run is dropped.
std::vector<std::size_t> detect_boundaries(const FeatureSet& features, const SegmentationParams& params);

ClusterManifest segment_events(const FeatureSet& features, const SegmentationParams& params = {});

/// JSONL, one {"frame": int, "event": int} per line.
void write_manifest(const ClusterManifest& manifest, const std::filesystem::path& path);
ClusterManifest read_manifest(const std::filesystem::path& path);
/// JSON array of {"id","start","end","size","centroid"}.
void write_event_table(const ClusterManifest& manifest, const std::filesystem::path& path);

struct Misalignment {
  std::int64_t frame = 0;
  int predicted = 0;      // event id in the manifest
  int matched_label = 0;  // ground-truth label the event was matched to (-1 if none)
  int true_label = 0;
};

struct Alignment {
  std::vector<int> matched_label;  // per predicted event id, -1 when unmatched
  double agreement = 0.0;
  ClusterMetrics metrics;
  std::vector<Misalignment> misaligned;

  std::string to_json() const;
};

/// One-to-one event-to-label matching maximizing agreeing frames.
/// Returns assignment[row] = column or -1, for a rows x cols count table.
std::vector<int> max_weight_matching(const std::vector<std::vector<double>>& weights);

Alignment align_to_ground_truth(const ClusterManifest& manifest, std::span<const int> truth);

}  // namespace egoclust
