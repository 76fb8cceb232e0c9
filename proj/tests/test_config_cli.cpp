#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <fstream>

#include "doctest.h"
#include "mtcl/errors.hpp"
#include "json.hpp"
#include "mtcl/cli.hpp"
#include "mtcl/config.hpp"
#include "mtcl/metrics.hpp"
#include "testutil.hpp"

using namespace mtcl;
using namespace mtcl::testutil;
namespace fs = std::filesystem;

namespace {

fs::path write_config(const fs::path& dir, const std::string& body) {
  fs::create_directories(dir);
  const fs::path path = dir / "run.toml";
  std::ofstream out(path);
  out << body;
  return path;
}

// Small synthetic corpus shared by the CLI flow tests. Prevalences are high
// enough that every stratum is populated at n = 60.
const std::string kSynthConfig =
    "[model]\n"
    "scale = tiny\n"
    "feature_channels = 16\n"
    "embed_dim = 4\n"
    "in_shape = 16,16,8\n"
    "warmup_epochs = 1\n"
    "\n"
    "[train]\n"
    "epochs = 2\n"
    "batch_size = 16\n"
    "eval_every = 1\n"
    "seeds = 1\n"
    "\n"
    "[data]\n"
    "augment = false\n"
    "split_seed = 5\n"
    "train_fractions = 0.6,0.6,0.6\n"
    "\n"
    "[synth]\n"
    "n = 60\n"
    "shape = 16,16,8\n"
    "prevalence_grade = 0.5\n"
    "prevalence_invasion = 0.25\n"
    "signal_common = 1.2\n"
    "signal_grade = 0.8\n"
    "signal_invasion = 0.8\n"
    "noise_sigma = 0.4\n"
    "seed = 3\n";

}  // namespace

TEST_CASE("config parsing, precedence and the resolved snapshot") {
  ConfigStore store = ConfigStore::parse_text(
      "# comment\n[model]\nscale = tiny\nseed = 4\n\n[train]\nepochs = 7\n", "inline");
  store.apply_override("train.epochs=9");
  store.apply_override("model.feature_channels=16");

  const ResolvedRun run = resolve_run(store);
  CHECK(run.train.epochs == 9);  // override beats the file
  CHECK(run.train.model.seed == 4);
  CHECK(run.train.model.feature_channels == 16);
  CHECK(run.train.model.embed_dim == 8);  // tiny default

  const std::string resolved = store.resolved_text();
  CHECK(resolved.find("[model]") != std::string::npos);
  CHECK(resolved.find("epochs = 9") != std::string::npos);

  // The snapshot reparses to the identical configuration.
  ConfigStore again = ConfigStore::parse_text(resolved, "resolved");
  const ResolvedRun run2 = resolve_run(again);
  CHECK(run2.train.epochs == run.train.epochs);
  CHECK(run2.train.model.temperature == run.train.model.temperature);
  CHECK(run2.synth.noise_sigma == run.synth.noise_sigma);
}

TEST_CASE("unknown keys and malformed values are configuration errors") {
  ConfigStore bad = ConfigStore::parse_text("[model]\nscael = tiny\n", "inline");
  CHECK_THROWS_WITH_AS(resolve_run(bad), doctest::Contains("model.scael"), ConfigError);

  ConfigStore bad_override = ConfigStore::parse_text("[model]\nscale = tiny\n", "inline");
  bad_override.apply_override("train.epoch=3");  // typo: epochs
  CHECK_THROWS_AS(resolve_run(bad_override), ConfigError);

  ConfigStore bad_value = ConfigStore::parse_text("[train]\nepochs = soon\n", "inline");
  CHECK_THROWS_AS(resolve_run(bad_value), ConfigError);

  CHECK_THROWS_AS(ConfigStore::parse_text("key_without_section = 1\n", "inline"), ConfigError);
  CHECK_THROWS_AS(ConfigStore().apply_override("no_dot=3"), ConfigError);

  ConfigStore bad_flags = ConfigStore::parse_text("[train]\ntc = false\nl_con = true\n", "inline");
  CHECK_THROWS_AS(resolve_run(bad_flags), ConfigError);
}

TEST_CASE("cli synth is reproducible and stratified as requested") {
  const auto dir = fresh_dir("cli_synth");
  const auto cfg = write_config(dir, kSynthConfig);

  const auto out1 = dir / "d1";
  const auto out2 = dir / "d2";
  CHECK(run_cli({"synth", "--config", cfg.string(), "--out", out1.string()}) == 0);
  CHECK(run_cli({"synth", "--config", cfg.string(), "--out", out2.string()}) == 0);
  CHECK(fs::exists(out1 / "manifest.csv"));
  CHECK(hash_file((out1 / "manifest.csv").string()) ==
        hash_file((out2 / "manifest.csv").string()));
  CHECK(fs::exists(out1 / "config.resolved"));

  const DatasetManifest m = load_manifest(out1 / "manifest.csv");
  CHECK(m.rows.size() == 60);
  long invasion = 0;
  for (const auto& r : m.rows) invasion += r.invasion;
  CHECK(invasion > 0);

  // n = 0 must fail before writing anything.
  const auto out3 = dir / "d3";
  CHECK(run_cli({"synth", "--config", cfg.string(), "--out", out3.string(), "--set",
                 "synth.n=0"}) == 2);
  CHECK_FALSE(fs::exists(out3 / "manifest.csv"));
}

TEST_CASE("cli train, eval and report round trip") {
  const auto dir = fresh_dir("cli_train");
  const auto cfg = write_config(dir, kSynthConfig);
  const auto data_dir = dir / "data";
  REQUIRE(run_cli({"synth", "--config", cfg.string(), "--out", data_dir.string()}) == 0);
  const std::string manifest = (data_dir / "manifest.csv").string();

  const auto run_dir = dir / "run1";
  CHECK(run_cli({"train", "--config", cfg.string(), "--out", run_dir.string(), "--set",
                 "data.manifest=" + manifest}) == 0);
  CHECK(fs::exists(run_dir / "config.resolved"));
  CHECK(fs::exists(run_dir / "history.ndjson"));
  CHECK(fs::exists(run_dir / "checkpoints" / "ckpt_final.mtc"));
  CHECK(fs::exists(run_dir / "metrics_invasion.json"));
  CHECK(fs::exists(run_dir / "metrics_meningioma.json"));

  {
    std::ifstream in(run_dir / "metrics_invasion.json");
    nlohmann::json j;
    in >> j;
    CHECK(j.at("task") == "invasion");
    CHECK(j.at("method") == "proposed");
    CHECK(j.at("scale") == "tiny");
    CHECK_NOTHROW(MetricReport::from_json(j));
  }

  // Epoch override is honored.
  const auto run_short = dir / "run_short";
  CHECK(run_cli({"train", "--config", cfg.string(), "--out", run_short.string(), "--set",
                 "data.manifest=" + manifest, "--set", "train.epochs=1"}) == 0);
  std::ifstream hist(run_short / "history.ndjson");
  long lines = 0;
  std::string line;
  while (std::getline(hist, line)) ++lines;
  CHECK(lines == 1);

  // Deterministic rerun reproduces the history bytes.
  const auto run_again = dir / "run_again";
  CHECK(run_cli({"train", "--config", cfg.string(), "--out", run_again.string(), "--set",
                 "data.manifest=" + manifest}) == 0);
  CHECK(hash_file((run_dir / "history.ndjson").string()) ==
        hash_file((run_again / "history.ndjson").string()));

  // Standalone evaluation of the final checkpoint.
  const auto eval_dir = dir / "eval1";
  CHECK(run_cli({"eval", "--ckpt", (run_dir / "checkpoints" / "ckpt_final.mtc").string(),
                 "--manifest", manifest, "--out", eval_dir.string()}) == 0);
  CHECK(fs::exists(eval_dir / "metrics_invasion.json"));

  // Comparison table across two runs.
  const auto report_dir = dir / "report";
  CHECK(run_cli({"report", run_dir.string(), run_short.string(), "--out",
                 report_dir.string()}) == 0);
  CHECK(fs::exists(report_dir / "report.csv"));
  std::ifstream rep(report_dir / "report.csv");
  std::string header;
  std::getline(rep, header);
  CHECK(header.find("run1 (proposed, tiny)") != std::string::npos);
  CHECK(header.find("run_short (proposed, tiny)") != std::string::npos);

  // Single run: single column.
  const auto report_one = dir / "report_one";
  CHECK(run_cli({"report", run_dir.string(), "--out", report_one.string()}) == 0);
}

TEST_CASE("cli exit codes distinguish config, data and runtime failures") {
  const auto dir = fresh_dir("cli_codes");
  const auto cfg = write_config(dir, kSynthConfig);

  // Missing manifest: data error, message names the path.
  CHECK(run_cli({"train", "--config", cfg.string(), "--out", (dir / "x").string(), "--set",
                 "data.manifest=/nonexistent/manifest.csv"}) == 2);
  // No manifest configured at all: config error.
  CHECK(run_cli({"train", "--config", cfg.string(), "--out", (dir / "y").string()}) == 1);
  // Unknown key: config error.
  CHECK(run_cli({"synth", "--config", cfg.string(), "--out", (dir / "z").string(), "--set",
                 "synth.nn=4"}) == 1);
  // Missing --out: config error.
  CHECK(run_cli({"synth", "--config", cfg.string()}) == 1);
  // Unknown flag: CLI parse error maps to config error.
  CHECK(run_cli({"synth", "--config", cfg.string(), "--frobnicate"}) == 1);
  // eval without a checkpoint.
  CHECK(run_cli({"eval", "--manifest", "m.csv", "--out", (dir / "w").string()}) == 1);
  // report on a directory without metrics.
  fs::create_directories(dir / "empty_run");
  CHECK(run_cli({"report", (dir / "empty_run").string(), "--out", (dir / "r").string()}) == 2);
}

TEST_CASE("cli ablate emits the grid artifacts") {
  const auto dir = fresh_dir("cli_ablate");
  const auto cfg = write_config(dir, kSynthConfig);
  const auto data_dir = dir / "data";
  REQUIRE(run_cli({"synth", "--config", cfg.string(), "--out", data_dir.string()}) == 0);

  const auto out = dir / "grid";
  CHECK(run_cli({"ablate", "--config", cfg.string(), "--out", out.string(), "--set",
                 "data.manifest=" + (data_dir / "manifest.csv").string(), "--set",
                 "ablation.rows=baseline1,proposed", "--set", "train.epochs=1", "--set",
                 "train.eval_every=0"}) == 0);
  CHECK(fs::exists(out / "ablation.csv"));
  CHECK(fs::exists(out / "ablation.txt"));

  std::ifstream csv(out / "ablation.csv");
  std::string header, row1, row2;
  std::getline(csv, header);
  std::getline(csv, row1);
  std::getline(csv, row2);
  CHECK(header.find("invasion_auc_mean") != std::string::npos);
  CHECK(row1.rfind("baseline1,", 0) == 0);
  CHECK(row2.rfind("proposed,", 0) == 0);

  // Custom matrix omitting rows yields fewer rows.
  std::ifstream csv_again(out / "ablation.csv");
  long csv_lines = 0;
  std::string line;
  while (std::getline(csv_again, line)) ++csv_lines;
  CHECK(csv_lines == 3);  // header + 2 rows
}

TEST_CASE("seed flag is shorthand for the model seed and train seeds") {
  const auto dir = fresh_dir("cli_seed");
  const auto cfg = write_config(dir, kSynthConfig);
  const auto out = dir / "synth_seeded";
  CHECK(run_cli({"synth", "--config", cfg.string(), "--out", out.string(), "--seed", "99"}) == 0);
  std::ifstream in(out / "config.resolved");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("seed = 99") != std::string::npos);
  CHECK(text.find("seeds = 99") != std::string::npos);
}
