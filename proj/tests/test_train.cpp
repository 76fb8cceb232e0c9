#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "mtcl/errors.hpp"
#include "mtcl/metrics.hpp"
#include "mtcl/train.hpp"
#include "testutil.hpp"

using namespace mtcl;
using namespace mtcl::testutil;
namespace fs = std::filesystem;

namespace {

TrainConfig quick_config(uint64_t seed, long epochs) {
  TrainConfig cfg;
  cfg.model = ModelConfig::tiny_defaults();
  cfg.model.feature_channels = 16;
  cfg.model.embed_dim = 4;
  cfg.model.seed = seed;
  cfg.model.warmup_epochs = 2;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.augment.enabled = false;
  cfg.eval_every = 1;
  return cfg;
}

std::vector<MultiModalSample> strong_signal_set(long n, uint64_t seed) {
  SyntheticSpec spec;
  spec.n_samples = n;
  spec.shape = {16, 16, 8};
  spec.prevalence_grade = 0.5;
  spec.prevalence_invasion = 0.25;
  spec.signal_common = 1.2;
  spec.signal_grade = 0.8;
  spec.signal_invasion = 0.8;
  spec.noise_sigma = 0.3;
  spec.seed = seed;
  auto data = synthesize_dataset(spec);
  for (auto& s : data)
    for (Modality m : {Modality::t1c, Modality::flairc, Modality::adc})
      s.volume(m) = preprocess(s.volume(m), spec.shape);
  return data;
}

std::vector<MultiModalSample> zero_signal_set(long n, uint64_t seed) {
  SyntheticSpec spec;
  spec.n_samples = n;
  spec.shape = {16, 16, 8};
  spec.prevalence_grade = 0.5;
  spec.prevalence_invasion = 0.25;
  spec.signal_common = 0.0;
  spec.signal_grade = 0.0;
  spec.signal_invasion = 0.0;
  spec.noise_sigma = 1.0;
  spec.seed = seed;
  auto data = synthesize_dataset(spec);
  for (auto& s : data)
    for (Modality m : {Modality::t1c, Modality::flairc, Modality::adc})
      s.volume(m) = preprocess(s.volume(m), spec.shape);
  return data;
}

}  // namespace

TEST_CASE("zero epochs returns the initialization checkpoint and an empty history") {
  const auto dir = fresh_dir("epochs0");
  const auto data = strong_signal_set(24, 1);
  TrainConfig cfg = quick_config(1, 0);
  const TrainResult result = train(cfg, data, {}, dir);
  CHECK(result.history.epochs.empty());
  CHECK(fs::exists(result.final_checkpoint));
  CHECK(result.best_checkpoint.empty());
  const LoadedCheckpoint loaded = load_checkpoint(result.final_checkpoint);
  CHECK(loaded.epoch == 0);
  // History file exists and is empty.
  std::ifstream hist(dir / "history.ndjson");
  std::string line;
  CHECK_FALSE(std::getline(hist, line));
}

TEST_CASE("identically seeded runs are bit-reproducible") {
  const auto data = strong_signal_set(32, 2);
  std::vector<MultiModalSample> train_set(data.begin(), data.begin() + 24);
  std::vector<MultiModalSample> eval_set(data.begin() + 24, data.end());

  const auto dir_a = fresh_dir("det_a");
  const auto dir_b = fresh_dir("det_b");
  TrainConfig cfg = quick_config(7, 3);
  cfg.augment.enabled = true;  // augmentation draws must reproduce too
  const TrainResult a = train(cfg, train_set, eval_set, dir_a);
  const TrainResult b = train(cfg, train_set, eval_set, dir_b);

  REQUIRE(a.history.epochs.size() == 3);
  for (size_t e = 0; e < 3; ++e) {
    CHECK(a.history.epochs[e].loss.total == b.history.epochs[e].loss.total);
    CHECK(a.history.epochs[e].wall_s == 0.0);
  }
  CHECK(hash_file((dir_a / "history.ndjson").string()) ==
        hash_file((dir_b / "history.ndjson").string()));
  CHECK(hash_file(a.final_checkpoint.string()) == hash_file(b.final_checkpoint.string()));
}

TEST_CASE("training on a strong signal halves the loss") {
  const auto data = strong_signal_set(48, 3);
  const auto dir = fresh_dir("progress");
  TrainConfig cfg = quick_config(5, 30);
  cfg.eval_every = 0;
  const TrainResult result = train(cfg, data, {}, dir);
  REQUIRE(result.history.epochs.size() == 30);
  const double first = result.history.epochs.front().loss.total;
  const double last = result.history.epochs.back().loss.total;
  CHECK(last < 0.5 * first);
}

TEST_CASE("history tracks the warm-up gate") {
  const auto data = strong_signal_set(24, 4);
  const auto dir = fresh_dir("warmup");
  TrainConfig cfg = quick_config(9, 4);  // warmup_epochs = 2
  cfg.eval_every = 0;
  const TrainResult result = train(cfg, data, {}, dir);
  for (const auto& rec : result.history.epochs) {
    CHECK(rec.loss.contrastive_active == (rec.epoch >= 2));
    CHECK(rec.loss.has_contrastive);
    // Weighted-total identity holds on the aggregated epoch report.
    CHECK(rec.loss.total == doctest::Approx(rec.loss.recomposed(1.0, 0.7)).epsilon(1e-9));
    if (rec.epoch < 2)
      CHECK(rec.loss.total ==
            doctest::Approx(rec.loss.cls_inv + rec.loss.cls_men +
                            0.7 * (rec.loss.aux_inv + rec.loss.aux_men))
                .epsilon(1e-9));
  }
}

TEST_CASE("regularized objective is strictly monotone in the decay coefficient") {
  auto model = build_model(ModelConfig::tiny_defaults(), AblationFlags{}, BaselineMode::proposed);
  const double at_zero = regularized_objective(1.0, *model, 0.0);
  const double small = regularized_objective(1.0, *model, 1e-3);
  const double large = regularized_objective(1.0, *model, 1e-2);
  CHECK(at_zero == doctest::Approx(1.0));
  CHECK(small > at_zero);
  CHECK(large > small);
}

TEST_CASE("evaluation is deterministic and propagates single-class flags") {
  const auto data = strong_signal_set(20, 5);
  auto model = build_model(quick_config(3, 1).model, AblationFlags{}, BaselineMode::proposed);
  const auto [inv1, men1] = evaluate(*model, data, 0.5);
  const auto [inv2, men2] = evaluate(*model, data, 0.5);
  CHECK(inv1.auc.value == inv2.auc.value);
  CHECK(men1.accuracy.value == men2.accuracy.value);

  // All labels forced to one class: AUC undefined, flagged.
  std::vector<MultiModalSample> single = data;
  for (auto& s : single) {
    s.label_grade = 1;
    s.label_invasion = 0;
  }
  const auto [inv3, men3] = evaluate(*model, single, 0.5);
  CHECK_FALSE(inv3.auc.defined);
  CHECK_FALSE(men3.auc.defined);
  CHECK_FALSE(inv3.sensitivity.defined);  // no invasion positives
}

TEST_CASE("a non-finite volume aborts training with the last-good checkpoint retained") {
  auto data = strong_signal_set(24, 6);
  data[5].t1c[10] = std::numeric_limits<double>::quiet_NaN();
  const auto dir = fresh_dir("diverge");
  TrainConfig cfg = quick_config(11, 3);
  cfg.eval_every = 0;
  CHECK_THROWS_AS(train(cfg, data, {}, dir), TrainError);
  CHECK(fs::exists(dir / "checkpoints" / "ckpt_final.mtc"));
  CHECK(fs::exists(dir / "history.ndjson"));
  // The retained parameters are usable.
  const LoadedCheckpoint loaded = load_checkpoint(dir / "checkpoints" / "ckpt_final.mtc");
  CHECK(loaded.model->parameters().size() > 0);
}

TEST_CASE("training requires both classes per task") {
  auto data = strong_signal_set(16, 7);
  for (auto& s : data) s.label_invasion = 0;
  const auto dir = fresh_dir("oneclass");
  TrainConfig cfg = quick_config(13, 1);
  CHECK_THROWS_AS(train(cfg, data, {}, dir), DataError);
}

TEST_CASE("baselines train with classification terms only") {
  const auto data = strong_signal_set(32, 8);
  std::vector<MultiModalSample> train_set(data.begin(), data.begin() + 24);
  std::vector<MultiModalSample> eval_set(data.begin() + 24, data.end());
  for (BaselineMode mode : {BaselineMode::efmt, BaselineMode::mfmt}) {
    const auto dir = fresh_dir(std::string("baseline_") + to_string(mode));
    TrainConfig cfg = quick_config(17, 2);
    cfg.baseline = mode;
    const TrainResult result = train(cfg, train_set, eval_set, dir);
    for (const auto& rec : result.history.epochs) {
      CHECK_FALSE(rec.loss.has_contrastive);
      CHECK_FALSE(rec.loss.has_aux);
      CHECK(rec.loss.con_inv == 0.0);
      CHECK(rec.loss.aux_inv == 0.0);
      CHECK(rec.loss.total ==
            doctest::Approx(rec.loss.cls_inv + rec.loss.cls_men).epsilon(1e-9));
    }
    const LoadedCheckpoint loaded = load_checkpoint(result.final_checkpoint);
    CHECK(loaded.model->kind() == std::string(to_string(mode)));
  }
  CHECK_THROWS_AS(build_baseline(BaselineMode::proposed, ModelConfig::tiny_defaults()),
                  ConfigError);
}

TEST_CASE("untrained models score near chance on signal-free data") {
  const auto data = zero_signal_set(200, 9);
  std::vector<MultiModalSample> eval_set(data.begin(), data.begin() + 120);
  double auc_sum = 0.0;
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    ModelConfig cfg = ModelConfig::tiny_defaults();
    cfg.feature_channels = 16;
    cfg.embed_dim = 4;
    cfg.seed = seed;
    auto model = build_model(cfg, AblationFlags{}, BaselineMode::proposed);
    const auto [inv, men] = evaluate(*model, eval_set, 0.5);
    REQUIRE(inv.auc.defined);
    auc_sum += 0.5 * (inv.auc.value + men.auc.value);
  }
  CHECK(auc_sum / 3.0 == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("ablation grid bookkeeping, error containment and row semantics") {
  const auto data = strong_signal_set(48, 10);
  const auto dir = fresh_dir("ablation");
  TrainConfig base = quick_config(19, 2);
  base.eval_every = 0;

  std::vector<AblationRowSpec> rows = {
      ablation_row_by_name("baseline1"),
      ablation_row_by_name("proposed"),
      {"broken", AblationFlags{false, true, false}},  // invalid: l_con without tc
  };
  const std::vector<uint64_t> seeds{1, 2};
  const AblationTable table =
      run_ablation(base, data, {0.6, 0.6, 0.6}, rows, seeds, 1, dir);

  REQUIRE(table.cells.size() == 6);
  for (size_t k = 0; k < seeds.size(); ++k) {
    CHECK(table.cell(0, k).ok);
    CHECK(table.cell(1, k).ok);
    CHECK_FALSE(table.cell(2, k).ok);
    CHECK(table.cell(2, k).error.find("task-common") != std::string::npos);
  }

  // Baseline1 cells trained without contrastive terms in any epoch.
  std::ifstream hist(dir / "cells" / "baseline1_seed1" / "history.ndjson");
  REQUIRE(hist.good());
  std::string line;
  while (std::getline(hist, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("loss").at("has_contrastive").get<bool>() == false);
    CHECK(j.at("loss").at("con_inv").get<double>() == 0.0);
  }

  // Aggregation: mean defined for the healthy rows, sd present with 2 seeds.
  const auto [mean, sd] = table.aggregate(0, Task::invasion, 7);  // AUC column
  CHECK(std::isfinite(mean));
  CHECK(std::isfinite(sd));
  const auto [broken_mean, broken_sd] = table.aggregate(2, Task::invasion, 7);
  CHECK(std::isnan(broken_mean));
  (void)broken_sd;

  const std::string csv = table.to_csv();
  CHECK(csv.find("baseline1,0,0,0,2,0") != std::string::npos);
  CHECK(csv.find("broken,0,1,0,2,2") != std::string::npos);
  const std::string text = table.to_text();
  CHECK(text.find("invasion") != std::string::npos);
  CHECK(text.find("[failed] broken") != std::string::npos);

  // Identical per-seed splits across rows: the two ok rows saw the same data.
  CHECK(fs::exists(dir / "cells" / "proposed_seed2" / "checkpoints" / "ckpt_final.mtc"));
}

TEST_CASE("thread fan-out reproduces the sequential ablation grid") {
  const auto data = strong_signal_set(32, 11);
  TrainConfig base = quick_config(23, 1);
  base.eval_every = 0;
  const std::vector<AblationRowSpec> rows = {ablation_row_by_name("baseline1"),
                                             ablation_row_by_name("baseline2")};
  const std::vector<uint64_t> seeds{4};
  const AblationTable seq =
      run_ablation(base, data, {0.6, 0.6, 0.6}, rows, seeds, 1, fresh_dir("grid_seq"));
  const AblationTable par =
      run_ablation(base, data, {0.6, 0.6, 0.6}, rows, seeds, 4, fresh_dir("grid_par"));
  REQUIRE(seq.cells.size() == par.cells.size());
  for (size_t i = 0; i < seq.cells.size(); ++i) {
    REQUIRE(seq.cells[i].ok == par.cells[i].ok);
    CHECK(seq.cells[i].invasion.auc.value == par.cells[i].invasion.auc.value);
    CHECK(seq.cells[i].meningioma.accuracy.value == par.cells[i].meningioma.accuracy.value);
  }
  // Single seed: no sd anywhere.
  const auto [mean, sd] = seq.aggregate(0, Task::invasion, 7);
  CHECK(std::isfinite(mean));
  CHECK(std::isnan(sd));
}
