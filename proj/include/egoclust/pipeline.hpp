#pragma once

#include "egoclust/config.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace egoclust {

// File names inside a run directory.
inline constexpr const char* kFrozenConfig = "config.toml";
inline constexpr const char* kLossLog = "loss_log.jsonl";
inline constexpr const char* kCheckpoint = "checkpoint.egoc";
inline constexpr const char* kSplitFile = "split.json";
inline constexpr const char* kProbeFile = "probe.json";
inline constexpr const char* kMetricsFile = "metrics.json";
inline constexpr const char* kClusterManifest = "clusters.jsonl";
inline constexpr const char* kEventTable = "events.json";
inline constexpr const char* kAlignmentFile = "alignment.json";
inline constexpr const char* kFeaturesCsv = "features.csv";
inline constexpr const char* kProjectionCsv = "projection.csv";
inline constexpr const char* kReportMd = "report.md";
inline constexpr const char* kSummaryCsv = "summary.csv";

/// Creates `dir`, refusing an existing non-empty directory unless `force`.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

void generate_dataset(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& out, bool force);

struct PretrainSummary {
  TrainResult result;
  std::filesystem::path checkpoint;
};

/// Trains on every frame of the dataset (labels unused), writing the frozen
/// config, the JSONL loss log and the checkpoint into `out`.
PretrainSummary pretrain(const RunConfig& config, const std::filesystem::path& data, const std::filesystem::path& out,
                         bool force);

/// Probes a checkpoint on the stratified split (read from `split_file` when
/// given, otherwise drawn from the config and written to out/split.json).
ProbeResult probe(const RunConfig& config, const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                  const std::optional<std::filesystem::path>& split_file, const std::filesystem::path& out);

struct ClusterSummary {
  ClusterManifest manifest;
  std::optional<Alignment> alignment;
};

/// Features -> segment_events -> manifest, event table, features and PCA CSV,
/// plus alignment and metrics when the data is labeled.
ClusterSummary cluster(const RunConfig& config, const std::filesystem::path& checkpoint,
                       const std::filesystem::path& data, const std::filesystem::path& out);

/// Markdown and CSV summary of whatever artifacts the run directory holds.
void write_report(const std::filesystem::path& run_dir);

/// Updates the named fields of metrics.json, keeping the others.
void merge_metrics(const std::filesystem::path& path, const std::optional<ClusterMetrics>& metrics,
                   const std::optional<double>& top1);

}  // namespace egoclust
