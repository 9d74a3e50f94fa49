#pragma once

#include "egoclust/dataset.hpp"
#include "egoclust/evaluation.hpp"
#include "egoclust/events.hpp"
#include "egoclust/model.hpp"
#include "egoclust/trainer.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace egoclust {

/// Pre-training variants: the full model and the three single-branch
/// baselines it is compared against.
enum class Branch { Joint, Mae, ContrastiveMasked, ContrastiveUnmasked };

Branch parse_branch(std::string_view name);
std::string branch_name(Branch branch);

struct DataConfig {
  SyntheticSpec synthetic = SyntheticSpec::well_separated();
  std::uint64_t generate_seed = 0;
  double probe_ratio = 0.8;
  std::uint64_t split_seed = 0;
};

struct ProbeSettings {
  ProbeConfig optimizer;
  bool augment = false;  // recompute features from crop+flip views each epoch
};

/// Everything a command needs, loaded from TOML with sections [model],
/// [train], [augment], [data], [cluster] and [probe]. Missing keys keep their
/// defaults; unknown sections or keys are errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentPolicy augment;
  DataConfig data;
  SegmentationParams cluster;
  ProbeSettings probe;
  Branch branch = Branch::Joint;

  void validate() const;
  /// Adjusts loss weights, masking and batch size for the selected branch.
  void apply_branch(Branch b);
};

RunConfig parse_config(std::string_view toml_text, const std::string& source = "<string>");
RunConfig load_config(const std::filesystem::path& path);
/// Fully resolved config, every key written explicitly; parse_config of the
/// result reproduces the same values.
std::string to_toml(const RunConfig& config);
void write_frozen_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace egoclust
