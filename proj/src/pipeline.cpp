#include "egoclust/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace egoclust {

namespace fs = std::filesystem;

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw Error(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw Error(dir.string() + " is not empty (use --force to overwrite)");
      for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
    }
  }
  fs::create_directories(dir);
}

void generate_dataset(const SyntheticSpec& spec, std::uint64_t seed, const fs::path& out, bool force) {
  spec.validate();
  prepare_output_dir(out, force);
  save_directory(generate_synthetic(spec, seed), out);
}

namespace {

ImageSequence load_checked(const fs::path& data) {
  auto seq = load_directory(data);
  seq.validate();
  return seq;
}

}  // namespace

PretrainSummary pretrain(const RunConfig& config, const fs::path& data, const fs::path& out, bool force) {
  config.validate();
  const auto seq = load_checked(data);
  prepare_output_dir(out, force);
  write_frozen_config(config, out / kFrozenConfig);

  CmNet<float> model(config.model, config.train.seed);
  std::ofstream log(out / kLossLog);
  if (!log) throw Error("cannot write " + (out / kLossLog).string());
  TrainOutputs outputs;
  outputs.loss_log = &log;
  outputs.run_dir = out;
  PretrainSummary summary;
  summary.result = train(seq.images(), model, config.train, config.augment, outputs);
  summary.checkpoint = out / kCheckpoint;
  return summary;
}

ProbeResult probe(const RunConfig& config, const fs::path& checkpoint, const fs::path& data,
                  const std::optional<fs::path>& split_file, const fs::path& out) {
  config.validate();
  if (!fs::exists(checkpoint)) throw Error("checkpoint not found: " + checkpoint.string());
  const FrozenEncoder<float> frozen(checkpoint);
  const auto seq = load_checked(data);
  if (!seq.labeled) throw Error("probe: " + data.string() + " carries no event labels");
  fs::create_directories(out);

  SplitResult parts;
  if (split_file) {
    parts = read_split(*split_file);
  } else {
    parts = split({seq}, config.data.probe_ratio, config.data.split_seed);
    write_split(parts, out / kSplitFile);
  }
  ProbeResult result;
  if (config.probe.augment) {
    auto pick = [&](const std::vector<std::size_t>& rows) {
      ImageSequence s;
      s.labeled = true;
      for (auto r : rows) {
        if (r >= seq.size()) throw Error("probe: split refers to frame position " + std::to_string(r));
        s.frames.push_back(seq.frames[r]);
      }
      return s;
    };
    result = linear_probe_images(frozen.encoder, pick(parts.probe_train), pick(parts.probe_test),
                                 config.probe.optimizer);
  } else {
    const auto features = extract_features(seq, frozen.encoder);
    result = linear_probe(features.subset(parts.probe_train), features.subset(parts.probe_test),
                          config.probe.optimizer);
  }
  std::ofstream(out / kProbeFile) << result.to_json() << '\n';
  merge_metrics(out / kMetricsFile, std::nullopt, result.top1);
  return result;
}

ClusterSummary cluster(const RunConfig& config, const fs::path& checkpoint, const fs::path& data,
                       const fs::path& out) {
  config.validate();
  if (!fs::exists(checkpoint)) throw Error("checkpoint not found: " + checkpoint.string());
  const FrozenEncoder<float> frozen(checkpoint);
  const auto seq = load_checked(data);
  fs::create_directories(out);

  const auto features = extract_features(seq, frozen.encoder);
  ClusterSummary summary;
  summary.manifest = segment_events(features, config.cluster);
  write_manifest(summary.manifest, out / kClusterManifest);
  write_event_table(summary.manifest, out / kEventTable);
  write_features_csv(features, out / kFeaturesCsv);
  if (features.dim >= 2 && features.rows() >= 2) {
    write_projection_csv(features, pca_project(features, 2), summary.manifest.events, out / kProjectionCsv);
  }
  if (seq.labeled) {
    summary.alignment = align_to_ground_truth(summary.manifest, seq.labels());
    std::ofstream(out / kAlignmentFile) << summary.alignment->to_json() << '\n';
    merge_metrics(out / kMetricsFile, summary.alignment->metrics, std::nullopt);
  }
  return summary;
}

void merge_metrics(const fs::path& path, const std::optional<ClusterMetrics>& metrics,
                   const std::optional<double>& top1) {
  std::optional<ClusterMetrics> m = metrics;
  std::optional<double> t = top1;
  if (fs::exists(path)) {
    std::ifstream in(path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ": malformed metrics file: " + e.what());
    }
    if (!m && j.contains("ari") && !j["ari"].is_null()) {
      m = ClusterMetrics{j["ari"].get<double>(), j["nmi"].get<double>(), j["purity"].get<double>()};
    }
    if (!t && j.contains("top1") && !j["top1"].is_null()) t = j["top1"].get<double>();
  }
  write_metrics_json(path, m, t);
}

namespace {

std::string fixed(double v, int digits = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

struct EpochSummary {
  double joint = 0.0;
  double l_mae = 0.0;
  double l_con = 0.0;
  bool has_mae = false;
  bool has_con = false;
  double lr = 0.0;
  std::size_t batches = 0;
};

std::map<std::size_t, EpochSummary> summarize_log(const fs::path& path) {
  std::ifstream in(path);
  std::map<std::size_t, EpochSummary> epochs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto r = LossRecord::from_json(line);
    auto& e = epochs[r.epoch];
    e.joint += r.joint;
    if (r.l_mae) {
      e.l_mae += *r.l_mae;
      e.has_mae = true;
    }
    if (r.l_con) {
      e.l_con += *r.l_con;
      e.has_con = true;
    }
    e.lr = r.lr;
    ++e.batches;
  }
  for (auto& [epoch, e] : epochs) {
    const auto n = static_cast<double>(e.batches);
    e.joint /= n;
    e.l_mae /= n;
    e.l_con /= n;
  }
  return epochs;
}

}  // namespace

void write_report(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw Error("run directory not found: " + run_dir.string());
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const auto name = entry.path().filename().string();
    if (name == kReportMd || name == kSummaryCsv) continue;
    files.push_back(name);
  }
  if (files.empty()) throw Error("run directory " + run_dir.string() + " holds no artifacts");
  std::sort(files.begin(), files.end());
  auto has = [&](const char* name) { return std::find(files.begin(), files.end(), name) != files.end(); };

  std::ostringstream md;
  md << "# Run report: " << run_dir.filename().string() << "\n\n";

  std::ostringstream csv;
  csv << "epoch,joint,l_mae,l_con,lr\n";
  if (has(kLossLog)) {
    const auto epochs = summarize_log(run_dir / kLossLog);
    md << "## Training (`" << kLossLog << "`)\n\n";
    if (epochs.empty()) {
      md << "Loss log is empty.\n\n";
    } else {
      const auto& first = epochs.begin()->second;
      const auto& last = epochs.rbegin()->second;
      md << "- epochs: " << epochs.size() << "\n- first epoch mean joint loss: " << fixed(first.joint, 6)
         << "\n- last epoch mean joint loss: " << fixed(last.joint, 6) << "\n- ratio last/first: "
         << fixed(last.joint / first.joint) << "\n- epoch means: `" << kSummaryCsv << "`\n\n";
    }
    csv.precision(10);
    for (const auto& [epoch, e] : epochs) {
      csv << epoch << ',' << e.joint << ',' << (e.has_mae ? std::to_string(e.l_mae) : "") << ','
          << (e.has_con ? std::to_string(e.l_con) : "") << ',' << e.lr << '\n';
    }
  }
  if (has(kProbeFile)) {
    const auto j = nlohmann::json::parse(std::ifstream(run_dir / kProbeFile));
    md << "## Linear probe (`" << kProbeFile << "`)\n\n- top-1: " << fixed(j.at("top1").get<double>())
       << "\n- train top-1: " << fixed(j.at("train_top1").get<double>()) << "\n";
    if (has(kSplitFile)) md << "- split: `" << kSplitFile << "`\n";
    md << "\n";
  }
  if (has(kClusterManifest)) {
    const auto manifest = read_manifest(run_dir / kClusterManifest);
    md << "## Events (`" << kClusterManifest << "`)\n\n- frames: " << manifest.size()
       << "\n- events: " << manifest.table.size() << "\n\n| event | start | end | frames |\n|---|---|---|---|\n";
    for (const auto& s : manifest.table) {
      md << "| " << s.id << " | " << s.start << " | " << s.end << " | " << (s.last - s.first + 1) << " |\n";
    }
    md << "\n";
  }
  if (has(kMetricsFile)) {
    const auto j = nlohmann::json::parse(std::ifstream(run_dir / kMetricsFile));
    md << "## Metrics (`" << kMetricsFile << "`)\n\n| metric | value |\n|---|---|\n";
    for (const char* key : {"ari", "nmi", "purity", "top1"}) {
      md << "| " << key << " | " << (j.contains(key) && !j[key].is_null() ? fixed(j[key].get<double>()) : "n/a")
         << " |\n";
    }
    md << "\n";
  }
  if (has(kAlignmentFile)) {
    const auto j = nlohmann::json::parse(std::ifstream(run_dir / kAlignmentFile));
    md << "## Alignment with ground truth (`" << kAlignmentFile << "`)\n\n- frame agreement: "
       << fixed(j.at("agreement").get<double>()) << "\n- misaligned frames: " << j.at("misaligned").size() << "\n\n";
  }
  md << "## Files\n\n";
  for (const auto& f : files) md << "- `" << f << "`\n";

  std::ofstream(run_dir / kReportMd) << md.str();
  std::ofstream(run_dir / kSummaryCsv) << csv.str();
}

}  // namespace egoclust
