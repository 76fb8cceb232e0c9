#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <chrono>
#include <cmath>
#include <set>

#include "doctest.h"
#include "mtcl/errors.hpp"
#include "mtcl/model.hpp"
#include "testutil.hpp"

using namespace mtcl;
using namespace mtcl::testutil;

namespace {

ModelConfig tiny_config(uint64_t seed = 1) {
  ModelConfig cfg = ModelConfig::tiny_defaults();
  cfg.seed = seed;
  return cfg;
}

std::vector<MultiModalSample> tiny_samples(long n, const std::array<long, 3>& shape,
                                           uint64_t seed = 3) {
  SyntheticSpec spec;
  spec.n_samples = n;
  spec.shape = shape;
  spec.seed = seed;
  spec.prevalence_grade = 0.5;
  spec.prevalence_invasion = 0.25;
  return synthesize_dataset(spec);
}

VolumeBatch batch_of(const std::vector<MultiModalSample>& samples) {
  std::vector<const MultiModalSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return make_batch(ptrs);
}

}  // namespace

TEST_CASE("tiny feature map shapes are deterministic functions of the config") {
  ModelConfig cfg = tiny_config();
  MultiTaskModel model(cfg, AblationFlags{});
  CHECK(model.feature_map_shape() == std::array<long, 4>{32, 2, 2, 2});

  ModelConfig wide = tiny_config();
  wide.in_shape = {32, 32, 8};
  MultiTaskModel model2(wide, AblationFlags{});
  CHECK(model2.feature_map_shape() == std::array<long, 4>{32, 4, 4, 2});
}

TEST_CASE("shape closure over randomized tiny configs") {
  Rng rng(99);
  for (int trial = 0; trial < 8; ++trial) {
    ModelConfig cfg = tiny_config(100 + static_cast<uint64_t>(trial));
    const long channels[] = {8, 16, 32};
    cfg.feature_channels = channels[rng.uniform_int(3)];
    cfg.embed_dim = std::max<long>(2, cfg.feature_channels / 4);
    cfg.in_shape = {static_cast<long>(16 + 4 * rng.uniform_int(3)),
                    static_cast<long>(16 + 4 * rng.uniform_int(3)),
                    static_cast<long>(8 + 2 * rng.uniform_int(2))};
    MultiTaskModel model(cfg, AblationFlags{});
    const auto fs = model.feature_map_shape();
    CHECK(fs[0] == cfg.feature_channels);

    const auto samples = tiny_samples(2, cfg.in_shape, 50 + trial);
    const VolumeBatch batch = batch_of(samples);
    const BatchOutputs out = model.forward(nullptr, batch, false);
    CHECK(out.feature_maps[0].v.shape() ==
          std::vector<long>{2, fs[0], fs[1], fs[2], fs[3]});
    CHECK(out.task_inv->v.shape() == std::vector<long>{2, cfg.feature_channels});
    CHECK(out.common->v.shape() == std::vector<long>{2, cfg.feature_channels});
    CHECK(out.common_inv->v.shape() == std::vector<long>{2, cfg.embed_dim});
    CHECK(out.proj_men->v.shape() == std::vector<long>{2, cfg.embed_dim});
    CHECK(out.main_inv.v.shape() == std::vector<long>{2, 2});
    CHECK(out.aux_men->v.shape() == std::vector<long>{2, 2});
  }
}

TEST_CASE("parameter registry is disjoint and hierarchically named") {
  MultiTaskModel model(tiny_config(), AblationFlags{});
  NamedTensors named;
  model.collect(named);

  std::set<std::string> names;
  std::set<const void*> buffers;
  for (const auto& [name, p] : named.params) {
    CHECK(names.insert(name).second);
    CHECK(buffers.insert(p->value.data()).second);
  }
  for (const auto& [name, t] : named.buffers) {
    CHECK(names.insert(name).second);
    CHECK(buffers.insert(t->data()).second);
  }
  // Spot checks of the naming scheme.
  CHECK(names.count("encoder.t1c.stem.weight"));
  CHECK(names.count("disentangle.common.weight"));
  CHECK(names.count("align.invasion.weight"));
  CHECK(names.count("project.meningioma.bias"));
  CHECK(names.count("main.invasion.fc0.weight"));
  CHECK(names.count("aux.meningioma.fc3.bias"));
  CHECK(names.count("encoder.adc.stage4.block0.bn2.running_var"));
}

TEST_CASE("ablating the task-common branch removes its heads and shrinks the main input") {
  ModelConfig cfg = tiny_config();
  MultiTaskModel model(cfg, AblationFlags{false, false, false});
  NamedTensors named;
  model.collect(named);
  for (const auto& [name, p] : named.params) {
    (void)p;
    CHECK(name.find("align.") == std::string::npos);
    CHECK(name.find("project.") == std::string::npos);
    CHECK(name.find("disentangle.common") == std::string::npos);
    CHECK(name.find("aux.") == std::string::npos);
  }

  const auto samples = tiny_samples(2, cfg.in_shape);
  const BatchOutputs out = model.forward(nullptr, batch_of(samples), false);
  CHECK_FALSE(out.common.has_value());
  CHECK_FALSE(out.common_inv.has_value());
  CHECK_FALSE(out.aux_inv.has_value());
  CHECK(out.main_inv.v.shape() == std::vector<long>{2, 2});

  // Main heads consume only the task-specific vector: input width C.
  Var spec_vec{Tensor::zeros({2, cfg.feature_channels}), -1};
  const Var logits = model.predict_main(nullptr, spec_vec, std::nullopt, Task::invasion, false);
  CHECK(logits.v.shape() == std::vector<long>{2, 2});
  CHECK_THROWS_AS(model.align_common(nullptr, spec_vec, Task::invasion), ConfigError);
  CHECK_THROWS_AS(model.predict_aux(nullptr, spec_vec, Task::invasion, false), ConfigError);
}

TEST_CASE("aligned common feed uses the embedding width in the main heads") {
  ModelConfig cfg = tiny_config();
  cfg.common_feed = CommonFeed::aligned_common;
  MultiTaskModel model(cfg, AblationFlags{});
  const auto samples = tiny_samples(2, cfg.in_shape);
  const BatchOutputs out = model.forward(nullptr, batch_of(samples), false);
  CHECK(out.main_inv.v.shape() == std::vector<long>{2, 2});

  Var spec_vec{Tensor::zeros({1, cfg.feature_channels}), -1};
  Var aligned{Tensor::zeros({1, cfg.embed_dim}), -1};
  CHECK_NOTHROW(model.predict_main(nullptr, spec_vec, aligned, Task::invasion, false));
  Var raw{Tensor::zeros({1, cfg.feature_channels}), -1};
  CHECK_THROWS_AS(model.predict_main(nullptr, spec_vec, raw, Task::invasion, false), ConfigError);
}

TEST_CASE("l_con requires the task-common branch") {
  const AblationFlags contradictory{false, true, false};
  CHECK_THROWS_AS(contradictory.validate(), ConfigError);
  const AblationFlags no_tc{false, true, true};
  CHECK_THROWS_AS(MultiTaskModel(tiny_config(), no_tc), ConfigError);
}

TEST_CASE("eval-mode forward is bitwise deterministic; dropout makes training stochastic") {
  ModelConfig cfg = tiny_config(11);
  MultiTaskModel model(cfg, AblationFlags{});
  const auto samples = tiny_samples(2, cfg.in_shape, 17);
  const VolumeBatch batch = batch_of(samples);

  const BatchOutputs a = model.forward(nullptr, batch, false);
  const BatchOutputs b = model.forward(nullptr, batch, false);
  CHECK(tensors_equal(a.main_inv.v, b.main_inv.v));
  CHECK(tensors_equal(a.main_men.v, b.main_men.v));
  CHECK(tensors_equal(a.common->v, b.common->v));

  // Live dropout: over repeated training-mode passes at fixed weights the
  // logits do not all coincide.
  bool any_differ = false;
  const BatchOutputs first = model.forward(nullptr, batch, true);
  for (int i = 0; i < 100 && !any_differ; ++i) {
    const BatchOutputs next = model.forward(nullptr, batch, true);
    any_differ = !tensors_equal(first.main_inv.v, next.main_inv.v);
  }
  CHECK(any_differ);
}

TEST_CASE("all-zero volumes produce finite outputs") {
  ModelConfig cfg = tiny_config();
  MultiTaskModel model(cfg, AblationFlags{});
  MultiModalSample zero;
  zero.patient_id = "zero";
  zero.t1c = Tensor::zeros({cfg.in_shape[0], cfg.in_shape[1], cfg.in_shape[2]});
  zero.flairc = zero.t1c.clone();
  zero.adc = zero.t1c.clone();
  const ModelOutputs out = model.forward_sample(zero, Mode::eval);
  CHECK(out.main_logits_inv.all_finite());
  CHECK(out.main_logits_men.all_finite());
  CHECK(out.features.feat_t1c.all_finite());

  // Training mode exercises batch statistics on the constant batch.
  const ModelOutputs train_out = model.forward_sample(zero, Mode::train);
  CHECK(train_out.main_logits_inv.all_finite());
}

TEST_CASE("independent heads and encoders actually differ") {
  ModelConfig cfg = tiny_config(23);
  MultiTaskModel model(cfg, AblationFlags{});
  const auto samples = tiny_samples(2, cfg.in_shape, 29);
  const VolumeBatch batch = batch_of(samples);
  const BatchOutputs out = model.forward(nullptr, batch, false);

  // Distinct disentangling heads on the same fused input.
  CHECK_FALSE(tensors_equal(out.task_inv->v, out.task_men->v));
  CHECK_FALSE(tensors_equal(out.task_inv->v, out.common->v));

  // Per-task alignment of the same common vector differs.
  CHECK_FALSE(tensors_equal(out.common_inv->v, out.common_men->v));

  // Non-shared encoders: same volume through two modality encoders differs.
  Var same_vol{batch.t1c, -1};
  const Var f1 = model.encode_modality(nullptr, same_vol, Modality::t1c, false);
  const Var f2 = model.encode_modality(nullptr, same_vol, Modality::flairc, false);
  CHECK_FALSE(tensors_equal(f1.v, f2.v));
}

TEST_CASE("forward_sample matches the batched row") {
  ModelConfig cfg = tiny_config(31);
  MultiTaskModel model(cfg, AblationFlags{});
  const auto samples = tiny_samples(3, cfg.in_shape, 37);
  const BatchOutputs full = model.forward(nullptr, batch_of(samples), false);
  const ModelOutputs single = model.forward_sample(samples[1], Mode::eval);
  const ModelOutputs row = extract_sample(full, 1);
  // Batch statistics do not enter eval mode, so the rows agree exactly.
  CHECK(tensors_equal(single.main_logits_inv, row.main_logits_inv));
  CHECK(tensors_equal(single.features.common, row.features.common));
  CHECK(single.main_logits_inv.shape() == std::vector<long>{2});
  CHECK(single.features.task_inv.shape() == std::vector<long>{cfg.feature_channels});
  CHECK(single.features.common_inv.shape() == std::vector<long>{cfg.embed_dim});
}

TEST_CASE("mismatched volume extents are a configuration error") {
  ModelConfig cfg = tiny_config();
  MultiTaskModel model(cfg, AblationFlags{});
  const auto samples = tiny_samples(1, {32, 32, 8});
  CHECK_THROWS_AS(model.forward(nullptr, batch_of(samples), false), ConfigError);
}

TEST_CASE("tiny end-to-end forward on a 32x32x8 volume completes quickly") {
  ModelConfig cfg = tiny_config();
  cfg.in_shape = {32, 32, 8};
  MultiTaskModel model(cfg, AblationFlags{});
  const auto samples = tiny_samples(1, cfg.in_shape, 41);
  const auto t0 = std::chrono::steady_clock::now();
  const ModelOutputs out = model.forward_sample(samples[0], Mode::eval);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(out.main_logits_inv.all_finite());
  CHECK(secs < 1.0);
}

TEST_CASE("checkpoint round trip is bitwise and validates names and shapes") {
  const auto dir = fresh_dir("ckpt");
  ModelConfig cfg = tiny_config(43);
  MultiTaskModel model(cfg, AblationFlags{});
  const auto samples = tiny_samples(2, cfg.in_shape, 47);
  const VolumeBatch batch = batch_of(samples);
  const BatchOutputs before = model.forward(nullptr, batch, false);

  save_checkpoint(dir / "m.mtc", model, 12);
  LoadedCheckpoint loaded = load_checkpoint(dir / "m.mtc");
  CHECK(loaded.epoch == 12);
  CHECK(loaded.model->kind() == "proposed");
  CHECK(loaded.model->config().feature_channels == cfg.feature_channels);

  const BatchOutputs after = loaded.model->forward(nullptr, batch, false);
  CHECK(tensors_equal(before.main_inv.v, after.main_inv.v));
  CHECK(tensors_equal(before.main_men.v, after.main_men.v));

  // A checkpoint from a different architecture must not load into silence.
  MultiTaskModel ablated(cfg, AblationFlags{false, false, false});
  save_checkpoint(dir / "ablated.mtc", ablated, 0);
  // Loading it succeeds standalone (config travels along)...
  CHECK_NOTHROW(load_checkpoint(dir / "ablated.mtc"));
  // ...but corrupt magic is rejected.
  {
    std::ofstream bad(dir / "bad.mtc", std::ios::binary);
    bad << "NOTACKPT";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.mtc"), DataError);
}

TEST_CASE("baseline models expose the published fusion widths") {
  ModelConfig cfg = tiny_config(53);
  const auto samples = tiny_samples(2, cfg.in_shape, 59);
  const VolumeBatch batch = batch_of(samples);

  BaselineModel efmt(BaselineMode::efmt, cfg);
  const BatchOutputs eo = efmt.forward(nullptr, batch, false);
  CHECK(eo.feature_maps.size() == 1);
  CHECK(eo.main_inv.v.shape() == std::vector<long>{2, 2});
  CHECK_FALSE(eo.aux_inv.has_value());
  CHECK_FALSE(eo.common.has_value());

  NamedTensors enamed;
  efmt.collect(enamed);
  long encoder_count = 0;
  for (const auto& [name, p] : enamed.params) {
    (void)p;
    CHECK(name.find("align.") == std::string::npos);
    CHECK(name.find("project.") == std::string::npos);
    if (name == "encoder.stacked.stem.weight") ++encoder_count;
  }
  CHECK(encoder_count == 1);

  BaselineModel mfmt(BaselineMode::mfmt, cfg);
  const BatchOutputs mo = mfmt.forward(nullptr, batch, false);
  CHECK(mo.feature_maps.size() == 3);
  CHECK(mo.main_inv.v.shape() == std::vector<long>{2, 2});
  NamedTensors mnamed;
  mfmt.collect(mnamed);
  bool saw_fused_width = false;
  for (const auto& [name, p] : mnamed.params)
    if (name == "classifier.invasion.fc0.weight") {
      CHECK(p->value.shape() ==
            std::vector<long>{cfg.feature_channels, 3 * cfg.feature_channels});
      saw_fused_width = true;
    }
  CHECK(saw_fused_width);
}
