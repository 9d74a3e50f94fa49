#include "egoclust/pipeline.hpp"
#include "support.hpp"
#include "tiny_run.hpp"

#include <doctest.h>

using namespace egoclust;
using testing::slurp;
using testing::TempDir;
using testing::kTinyRun;

TEST_CASE("output directories refuse to clobber") {
  TempDir dir("pipe");
  prepare_output_dir(dir / "new", false);
  CHECK(std::filesystem::is_directory(dir / "new"));
  std::ofstream(dir / "new" / "x") << "1";
  CHECK_THROWS_WITH(prepare_output_dir(dir / "new", false), doctest::Contains("--force"));
  CHECK_NOTHROW(prepare_output_dir(dir / "new", true));
}

TEST_CASE("generate, pretrain, probe, cluster and report") {
  TempDir dir("pipe");
  const auto config = parse_config(kTinyRun);
  generate_dataset(config.data.synthetic, 4, dir / "data", false);
  const auto run = dir / "run";

  const auto summary = pretrain(config, dir / "data", run, false);
  CHECK(summary.result.log.size() == 8);  // 15 frames in batches of 4, 2 epochs
  for (const char* f : {kFrozenConfig, kLossLog, kCheckpoint}) CHECK(std::filesystem::exists(run / f));

  SUBCASE("a rerun from the frozen config reproduces the loss log") {
    const auto frozen = load_config(run / kFrozenConfig);
    pretrain(frozen, dir / "data", dir / "rerun", false);
    CHECK(slurp(dir / "rerun" / kLossLog) == slurp(run / kLossLog));
    CHECK(slurp(dir / "rerun" / kCheckpoint) == slurp(run / kCheckpoint));
    CHECK(slurp(dir / "rerun" / kFrozenConfig) == slurp(run / kFrozenConfig));
  }

  SUBCASE("downstream commands") {
    const auto p = probe(config, run / kCheckpoint, dir / "data", std::nullopt, run);
    CHECK(p.classes == std::vector<int>{0, 1, 2});
    CHECK(std::filesystem::exists(run / kSplitFile));
    CHECK(std::filesystem::exists(run / kProbeFile));
    // The saved split reproduces the same probe.
    const auto again = probe(config, run / kCheckpoint, dir / "data", run / kSplitFile, dir / "probe2");
    CHECK(again.to_json() == p.to_json());

    const auto c = cluster(config, run / kCheckpoint, dir / "data", run);
    CHECK(c.manifest.size() == 15);
    REQUIRE(c.alignment.has_value());
    CHECK(read_manifest(run / kClusterManifest).same_assignment(c.manifest));
    for (const char* f : {kEventTable, kFeaturesCsv, kProjectionCsv, kAlignmentFile, kMetricsFile})
      CHECK(std::filesystem::exists(run / f));
    const auto metrics = slurp(run / kMetricsFile);
    CHECK(metrics.find("\"top1\": null") == std::string::npos);  // probe result kept
    CHECK(metrics.find("\"ari\": null") == std::string::npos);

    write_report(run);
    const auto report = slurp(run / kReportMd);
    CHECK(report.find(kClusterManifest) != std::string::npos);
    CHECK(slurp(run / kSummaryCsv).rfind("epoch,", 0) == 0);
    write_report(run);
    CHECK(slurp(run / kReportMd) == report);
  }
}

TEST_CASE("frames larger than the model input are resized") {
  TempDir dir("pipe");
  auto config = parse_config(kTinyRun);
  auto spec = config.data.synthetic;
  spec.image_size = 16;
  generate_dataset(spec, 1, dir / "data", false);
  pretrain(config, dir / "data", dir / "run", false);
  const auto c = cluster(config, dir / "run" / kCheckpoint, dir / "data", dir / "run");
  CHECK(c.manifest.size() == 15);
  CHECK_THROWS(write_report(dir / "missing"));
}
