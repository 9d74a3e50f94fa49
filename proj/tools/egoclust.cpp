// egoclust: generate synthetic sequences, pre-train, probe, cluster and report.
#include "egoclust/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace egoclust;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

RunConfig config_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event clustering for egocentric image sequences"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a labeled synthetic sequence (PNG frames + manifest.jsonl)");
  std::string gen_spec;
  std::string gen_preset;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  bool gen_force = false;
  auto* spec_opt = gen->add_option("--spec", gen_spec, "TOML config whose [data] section describes the sequence")
                       ->check(CLI::ExistingFile);
  gen->add_option("--preset", gen_preset, "Built-in spec instead of --spec")
      ->check(CLI::IsMember({"well-separated"}))
      ->excludes(spec_opt);
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_flag("--force", gen_force, "Overwrite a non-empty output directory");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Self-supervised pre-training");
  std::string pre_config;
  std::string pre_data;
  std::string pre_out;
  std::string pre_branch;
  std::optional<std::size_t> pre_epochs;
  std::optional<std::uint64_t> pre_seed;
  bool pre_force = false;
  pre->add_option("--config", pre_config, "TOML run config")->check(CLI::ExistingFile);
  pre->add_option("--data", pre_data, "Frame directory")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", pre_out, "Run directory")->required();
  pre->add_option("--branch", pre_branch, "joint | mae | contrastive-masked | contrastive-unmasked")
      ->check(CLI::IsMember({"joint", "mae", "contrastive-masked", "contrastive-unmasked"}));
  pre->add_option("--epochs", pre_epochs, "Epoch cap override");
  pre->add_option("--seed", pre_seed, "Training seed override");
  pre->add_flag("--force", pre_force, "Overwrite a non-empty run directory");

  // probe
  auto* prb = app.add_subcommand("probe", "Linear probe on frozen encoder features");
  std::string prb_ckpt;
  std::string prb_data;
  std::string prb_split;
  std::string prb_config;
  std::string prb_out;
  prb->add_option("--checkpoint", prb_ckpt, "Checkpoint from pretrain")->required();
  prb->add_option("--data", prb_data, "Labeled frame directory")->required()->check(CLI::ExistingDirectory);
  prb->add_option("--split", prb_split, "Split descriptor JSON (drawn from the config when omitted)")
      ->check(CLI::ExistingFile);
  prb->add_option("--config", prb_config, "TOML run config ([probe] and [data] sections)")->check(CLI::ExistingFile);
  prb->add_option("--out", prb_out, "Output directory (default: the checkpoint's directory)");

  // cluster
  auto* clu = app.add_subcommand("cluster", "Segment a sequence into events");
  std::string clu_ckpt;
  std::string clu_data;
  std::string clu_params;
  std::string clu_out;
  std::optional<double> clu_threshold;
  clu->add_option("--checkpoint", clu_ckpt, "Checkpoint from pretrain")->required();
  clu->add_option("--data", clu_data, "Frame directory")->required()->check(CLI::ExistingDirectory);
  clu->add_option("--params", clu_params, "TOML config ([cluster] section)")->check(CLI::ExistingFile);
  clu->add_option("--threshold", clu_threshold, "Boundary threshold override");
  clu->add_option("--out", clu_out, "Output directory (default: the checkpoint's directory)");

  // report
  auto* rep = app.add_subcommand("report", "Markdown + CSV summary of a run directory");
  std::string rep_dir;
  rep->add_option("--run-dir", rep_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and --version are "errors" that exit 0.
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) {
      if (gen_spec.empty() && gen_preset.empty()) {
        std::cerr << "generate: one of --spec or --preset is required\n";
        return kExitUsage;
      }
      const auto spec = gen_spec.empty() ? SyntheticSpec::well_separated() : load_config(gen_spec).data.synthetic;
      generate_dataset(spec, gen_seed, gen_out, gen_force);
      std::cout << "wrote " << gen_out << "\n";
    } else if (*pre) {
      auto config = config_or_default(pre_config);
      if (pre_epochs) config.train.epochs = *pre_epochs;
      if (pre_seed) config.train.seed = *pre_seed;
      config.apply_branch(pre_branch.empty() ? config.branch : parse_branch(pre_branch));
      const auto summary = pretrain(config, pre_data, pre_out, pre_force);
      const auto& means = summary.result.epoch_means;
      std::cout << "epochs " << summary.result.epochs_run << (summary.result.converged ? " (converged)" : "")
                << ", joint " << means.front() << " -> " << means.back() << "\ncheckpoint "
                << summary.checkpoint.string() << "\n";
    } else if (*prb) {
      const auto config = config_or_default(prb_config);
      const fs::path out = prb_out.empty() ? fs::path(prb_ckpt).parent_path() : fs::path(prb_out);
      std::optional<fs::path> split;
      if (!prb_split.empty()) split = prb_split;
      const auto result = probe(config, prb_ckpt, prb_data, split, out.empty() ? fs::path(".") : out);
      std::cout << result.to_json() << "\n";
    } else if (*clu) {
      auto config = config_or_default(clu_params);
      if (clu_threshold) config.cluster.threshold = *clu_threshold;
      const fs::path out = clu_out.empty() ? fs::path(clu_ckpt).parent_path() : fs::path(clu_out);
      const auto summary = cluster(config, clu_ckpt, clu_data, out.empty() ? fs::path(".") : out);
      std::cout << summary.manifest.table.size() << " events over " << summary.manifest.size() << " frames\n";
      if (summary.alignment) {
        const auto& m = summary.alignment->metrics;
        std::cout << "ari " << m.ari << " nmi " << m.nmi << " purity " << m.purity << " agreement "
                  << summary.alignment->agreement << "\n";
      }
    } else if (*rep) {
      write_report(rep_dir);
      std::cout << "wrote " << (fs::path(rep_dir) / kReportMd).string() << "\n";
    }
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
