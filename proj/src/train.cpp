#include "mtcl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "mtcl/errors.hpp"

namespace mtcl {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kShuffleStreamBase = 2000;
constexpr uint64_t kAugmentStreamBase = 100000;
constexpr uint64_t kSplitStreamOffset = 0x517a1ULL;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void require_both_classes(const std::vector<MultiModalSample>& set, const char* which) {
  int grade[2] = {0, 0}, invasion[2] = {0, 0};
  for (const auto& s : set) {
    ++grade[s.label_grade];
    ++invasion[s.label_invasion];
  }
  if (!grade[0] || !grade[1] || !invasion[0] || !invasion[1])
    throw DataError(std::string(which) +
                    " set must contain both classes for both tasks (grade " +
                    std::to_string(grade[0]) + "/" + std::to_string(grade[1]) + ", invasion " +
                    std::to_string(invasion[0]) + "/" + std::to_string(invasion[1]) + ")");
}

struct ParamSnapshot {
  std::vector<Tensor> params, buffers;

  static ParamSnapshot take(JointModel& model) {
    NamedTensors named;
    model.collect(named);
    ParamSnapshot s;
    s.params.reserve(named.params.size());
    for (const auto& [name, p] : named.params) s.params.push_back(p->value.clone());
    for (const auto& [name, b] : named.buffers) s.buffers.push_back(b->clone());
    return s;
  }

  void restore(JointModel& model) const {
    NamedTensors named;
    model.collect(named);
    for (size_t i = 0; i < named.params.size(); ++i) {
      Tensor& dst = named.params[i].second->value;
      std::copy(params[i].data(), params[i].data() + params[i].numel(), dst.data());
    }
    for (size_t i = 0; i < named.buffers.size(); ++i) {
      Tensor& dst = *named.buffers[i].second;
      std::copy(buffers[i].data(), buffers[i].data() + buffers[i].numel(), dst.data());
    }
  }
};

double positive_probability(const Tensor& logits, long row) {
  const double z0 = logits[2 * row], z1 = logits[2 * row + 1];
  return 1.0 / (1.0 + std::exp(z0 - z1));
}

}  // namespace

long TrainConfig::effective_batch_size() const {
  if (batch_size > 0) return batch_size;
  return model.scale == Scale::full ? 8 : 16;
}

void TrainConfig::validate() const {
  model.validate();
  ablation.validate();
  if (lr <= 0.0) throw ConfigError("train: lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be non-negative");
  if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
  if (batch_size < 0) throw ConfigError("train: batch_size must be positive (or 0 for default)");
  if (eval_every < 0) throw ConfigError("train: eval_every must be non-negative");
  if (threshold <= 0.0 || threshold >= 1.0)
    throw ConfigError("train: threshold must lie in (0, 1)");
  if (seeds.empty()) throw ConfigError("train: at least one seed is required");
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["loss"] = loss.to_json();
  if (eval_invasion && eval_meningioma) {
    j["eval"] = {{"invasion", eval_invasion->to_json()},
                 {"meningioma", eval_meningioma->to_json()}};
  }
  j["wall_s"] = wall_s;
  return j;
}

void TrainHistory::write_ndjson(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw TrainError("cannot write history " + path.string());
  for (const auto& rec : epochs) out << rec.to_json().dump() << '\n';
}

std::pair<MetricReport, MetricReport> evaluate(JointModel& model,
                                               const std::vector<MultiModalSample>& samples,
                                               double threshold) {
  if (samples.empty()) throw DataError("evaluate: empty sample set");
  std::vector<double> scores_inv, scores_men;
  std::vector<int> labels_inv, labels_men;
  scores_inv.reserve(samples.size());
  scores_men.reserve(samples.size());

  const long chunk = 32;
  for (size_t start = 0; start < samples.size(); start += chunk) {
    std::vector<const MultiModalSample*> ptrs;
    for (size_t i = start; i < std::min(samples.size(), start + chunk); ++i)
      ptrs.push_back(&samples[i]);
    const VolumeBatch batch = make_batch(ptrs);
    BatchOutputs out = model.forward(nullptr, batch, false);
    for (long r = 0; r < batch.size(); ++r) {
      scores_inv.push_back(positive_probability(out.main_inv.v, r));
      scores_men.push_back(positive_probability(out.main_men.v, r));
      labels_inv.push_back(batch.invasion[static_cast<size_t>(r)]);
      labels_men.push_back(batch.grade[static_cast<size_t>(r)]);
    }
  }
  return {evaluate_task(scores_inv, labels_inv, threshold),
          evaluate_task(scores_men, labels_men, threshold)};
}

std::pair<MetricReport, MetricReport> evaluate_checkpoint(
    const fs::path& checkpoint, const std::vector<MultiModalSample>& samples, double threshold) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  return evaluate(*loaded.model, samples, threshold);
}

std::unique_ptr<JointModel> build_baseline(BaselineMode mode, const ModelConfig& cfg) {
  if (mode == BaselineMode::proposed)
    throw ConfigError("build_baseline: mode must be efmt or mfmt");
  return std::make_unique<BaselineModel>(mode, cfg);
}

double regularized_objective(double loss, JointModel& model, double weight_decay) {
  auto params = model.parameters();
  return loss + weight_decay * l2_penalty(params);
}

TrainResult train(const TrainConfig& cfg, const std::vector<MultiModalSample>& train_set,
                  const std::vector<MultiModalSample>& eval_set, const fs::path& out_dir) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  require_both_classes(train_set, "training");

  fs::create_directories(out_dir / "checkpoints");
  auto model = build_model(cfg.model, cfg.ablation, cfg.baseline);
  Adam optimizer(model->parameters(), cfg.lr, cfg.weight_decay);
  const LossWeights weights = cfg.model.loss_weights();

  TrainResult result;
  result.final_checkpoint = out_dir / "checkpoints" / "ckpt_final.mtc";
  const fs::path best_path = out_dir / "checkpoints" / "ckpt_best.mtc";

  const long n = static_cast<long>(train_set.size());
  const long bs = cfg.effective_batch_size();

  if (cfg.epochs == 0) {
    save_checkpoint(result.final_checkpoint, *model, 0);
    result.history.write_ndjson(out_dir / "history.ndjson");
    return result;
  }

  ParamSnapshot last_good = ParamSnapshot::take(*model);
  std::vector<size_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0u);

  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double t0 = now_seconds();
    Rng shuffle_rng = Rng::stream(cfg.model.seed, kShuffleStreamBase + static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    Rng augment_rng = Rng::stream(cfg.model.seed, kAugmentStreamBase + static_cast<uint64_t>(epoch));

    double sum_cls_inv = 0.0, sum_cls_men = 0.0, sum_con_inv = 0.0, sum_con_men = 0.0;
    double sum_aux_inv = 0.0, sum_aux_men = 0.0, sum_total = 0.0;
    LossReport flags_probe;

    for (long start = 0; start < n; start += bs) {
      const long take = std::min(bs, n - start);
      std::vector<MultiModalSample> augmented;
      std::vector<const MultiModalSample*> ptrs;
      ptrs.reserve(static_cast<size_t>(take));
      if (cfg.augment.enabled) {
        augmented.reserve(static_cast<size_t>(take));
        for (long i = 0; i < take; ++i)
          augmented.push_back(
              augment(train_set[order[static_cast<size_t>(start + i)]], cfg.augment, augment_rng));
        for (const auto& s : augmented) ptrs.push_back(&s);
      } else {
        for (long i = 0; i < take; ++i)
          ptrs.push_back(&train_set[order[static_cast<size_t>(start + i)]]);
      }
      const VolumeBatch batch = make_batch(ptrs);

      try {
        Tape tape;
        BatchOutputs out = model->forward(&tape, batch, true);
        auto [total, report] =
            total_loss(&tape, to_loss_args(out, model->ablation()), batch.invasion, batch.grade,
                       weights, epoch);
        const double w = static_cast<double>(take);
        sum_cls_inv += report.cls_inv * w;
        sum_cls_men += report.cls_men * w;
        sum_con_inv += report.con_inv * w;
        sum_con_men += report.con_men * w;
        sum_aux_inv += report.aux_inv * w;
        sum_aux_men += report.aux_men * w;
        sum_total += report.total * w;
        flags_probe = report;

        tape.backward(total);
        optimizer.step();
        optimizer.zero_grad();
      } catch (const NumericError& e) {
        // Divergence: fall back to the last completed epoch and stop.
        last_good.restore(*model);
        save_checkpoint(result.final_checkpoint, *model, epoch);
        result.history.write_ndjson(out_dir / "history.ndjson");
        throw TrainError("training diverged at epoch " + std::to_string(epoch) + " (" + e.what() +
                         "); last-good checkpoint retained at " +
                         result.final_checkpoint.string());
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = flags_probe;
    rec.loss.cls_inv = sum_cls_inv / static_cast<double>(n);
    rec.loss.cls_men = sum_cls_men / static_cast<double>(n);
    rec.loss.con_inv = sum_con_inv / static_cast<double>(n);
    rec.loss.con_men = sum_con_men / static_cast<double>(n);
    rec.loss.aux_inv = sum_aux_inv / static_cast<double>(n);
    rec.loss.aux_men = sum_aux_men / static_cast<double>(n);
    rec.loss.total = sum_total / static_cast<double>(n);

    const bool eval_now = cfg.eval_every > 0 && !eval_set.empty() &&
                          (epoch % cfg.eval_every == 0 || epoch == cfg.epochs - 1);
    if (eval_now) {
      auto [inv, men] = evaluate(*model, eval_set, cfg.threshold);
      double auc_sum = 0.0;
      int auc_n = 0;
      if (inv.auc.defined) {
        auc_sum += inv.auc.value;
        ++auc_n;
      }
      if (men.auc.defined) {
        auc_sum += men.auc.value;
        ++auc_n;
      }
      if (auc_n > 0) {
        const double mean_auc = auc_sum / auc_n;
        if (result.best_epoch < 0 || mean_auc > result.best_eval_auc) {
          result.best_eval_auc = mean_auc;
          result.best_epoch = epoch;
          save_checkpoint(best_path, *model, epoch);
          result.best_checkpoint = best_path;
        }
      }
      rec.eval_invasion = std::move(inv);
      rec.eval_meningioma = std::move(men);
    }
    rec.wall_s = cfg.deterministic ? 0.0 : now_seconds() - t0;
    result.history.epochs.push_back(std::move(rec));
    last_good = ParamSnapshot::take(*model);
  }

  save_checkpoint(result.final_checkpoint, *model, cfg.epochs);
  result.history.write_ndjson(out_dir / "history.ndjson");
  return result;
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

std::vector<AblationRowSpec> default_ablation_rows() {
  return {
      {"baseline1", AblationFlags{false, false, false}},
      {"baseline2", AblationFlags{true, false, false}},
      {"baseline3", AblationFlags{true, true, false}},
      {"baseline4", AblationFlags{true, false, true}},
      {"proposed", AblationFlags{true, true, true}},
  };
}

AblationRowSpec ablation_row_by_name(const std::string& name) {
  for (const auto& row : default_ablation_rows())
    if (row.name == name) return row;
  throw ConfigError("unknown ablation row '" + name +
                    "' (expected baseline1|baseline2|baseline3|baseline4|proposed)");
}

std::pair<double, double> AblationTable::aggregate(size_t row, Task task,
                                                   size_t metric_index) const {
  std::vector<double> values;
  for (size_t k = 0; k < seeds.size(); ++k) {
    const AblationCell& c = cell(row, k);
    if (!c.ok) continue;
    const MetricReport& r = task == Task::invasion ? c.invasion : c.meningioma;
    const double v = r.values_in_order()[metric_index].value;
    if (!std::isnan(v)) values.push_back(v);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (values.empty()) return {nan, nan};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, nan};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << "row,tc,l_con,aux,seeds,errors";
  for (const char* task : {"invasion", "meningioma"})
    for (const auto& metric : MetricReport::metric_names()) {
      std::string key = metric;
      for (auto& ch : key) {
        if (ch == ' ') ch = '_';
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      }
      key.erase(std::remove(key.begin(), key.end(), '-'), key.end());
      os << ',' << task << '_' << key << "_mean," << task << '_' << key << "_sd";
    }
  os << '\n';
  for (size_t r = 0; r < rows.size(); ++r) {
    long failed = 0;
    for (size_t k = 0; k < seeds.size(); ++k)
      if (!cell(r, k).ok) ++failed;
    os << rows[r].name << ',' << (rows[r].flags.tc ? 1 : 0) << ',' << (rows[r].flags.l_con ? 1 : 0)
       << ',' << (rows[r].flags.aux ? 1 : 0) << ',' << seeds.size() << ',' << failed;
    for (Task task : {Task::invasion, Task::meningioma})
      for (size_t m = 0; m < MetricReport::metric_names().size(); ++m) {
        const auto [mean, sd] = aggregate(r, task, m);
        char buf[64];
        if (std::isnan(mean))
          os << ",NA";
        else {
          std::snprintf(buf, sizeof(buf), ",%.6f", mean);
          os << buf;
        }
        if (std::isnan(sd))
          os << ",NA";
        else {
          std::snprintf(buf, sizeof(buf), ",%.6f", sd);
          os << buf;
        }
      }
    os << '\n';
  }
  return os.str();
}

std::string AblationTable::to_text() const {
  std::ostringstream os;
  os << "Ablation over " << seeds.size() << " seed(s)";
  if (seeds.size() < 2) os << " [single run: no sd]";
  os << "\n\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-28s", "");
  os << buf;
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), " %-17s", row.name.c_str());
    os << buf;
  }
  os << '\n';
  auto toggle_line = [&](const char* label, auto getter) {
    std::snprintf(buf, sizeof(buf), "%-28s", label);
    os << buf;
    for (const auto& row : rows) {
      std::snprintf(buf, sizeof(buf), " %-17s", getter(row.flags) ? "yes" : "-");
      os << buf;
    }
    os << '\n';
  };
  toggle_line("TC", [](const AblationFlags& f) { return f.tc; });
  toggle_line("L_con", [](const AblationFlags& f) { return f.l_con; });
  toggle_line("Aux", [](const AblationFlags& f) { return f.aux; });
  for (Task task : {Task::invasion, Task::meningioma}) {
    os << '\n' << to_string(task) << '\n';
    const auto& names = MetricReport::metric_names();
    for (size_t m = 0; m < names.size(); ++m) {
      std::snprintf(buf, sizeof(buf), "  %-26s", names[m].c_str());
      os << buf;
      for (size_t r = 0; r < rows.size(); ++r) {
        const auto [mean, sd] = aggregate(r, task, m);
        std::string cell_text;
        if (std::isnan(mean)) {
          cell_text = "NA";
        } else if (std::isnan(sd)) {
          std::snprintf(buf, sizeof(buf), "%.4f", mean);
          cell_text = buf;
        } else {
          std::snprintf(buf, sizeof(buf), "%.4f+-%.4f", mean, sd);
          cell_text = buf;
        }
        std::snprintf(buf, sizeof(buf), " %-17s", cell_text.c_str());
        os << buf;
      }
      os << '\n';
    }
  }
  for (const auto& c : cells)
    if (!c.ok)
      os << "\n[failed] " << c.row << " seed " << c.seed << ": " << c.error << '\n';
  return os.str();
}

AblationTable run_ablation(const TrainConfig& base, const std::vector<MultiModalSample>& dataset,
                           const std::array<double, 3>& train_fractions,
                           const std::vector<AblationRowSpec>& rows,
                           const std::vector<uint64_t>& seeds, int parallelism,
                           const fs::path& out_dir) {
  if (seeds.empty()) throw ConfigError("run_ablation: at least one seed is required");
  if (rows.empty()) throw ConfigError("run_ablation: at least one row is required");

  AblationTable table;
  table.rows = rows;
  table.seeds = seeds;
  table.cells.resize(rows.size() * seeds.size());

  // One split per seed, shared by every row so methods are compared on the
  // same data draw.
  std::vector<std::vector<MultiModalSample>> train_sets(seeds.size()), test_sets(seeds.size());
  for (size_t k = 0; k < seeds.size(); ++k) {
    const SplitResult split =
        stratified_split_samples(dataset, train_fractions, seeds[k] + kSplitStreamOffset);
    for (size_t idx : split.train_indices) train_sets[k].push_back(dataset[idx]);
    for (size_t idx : split.test_indices) test_sets[k].push_back(dataset[idx]);
  }

  auto run_cell = [&](size_t cell_idx) {
    const size_t r = cell_idx / seeds.size();
    const size_t k = cell_idx % seeds.size();
    AblationCell& cell = table.cells[cell_idx];
    cell.row = rows[r].name;
    cell.seed = seeds[k];
    try {
      TrainConfig cfg = base;
      cfg.ablation = rows[r].flags;
      cfg.baseline = BaselineMode::proposed;
      cfg.model.seed = seeds[k];
      cfg.seeds = {seeds[k]};
      const fs::path cell_dir =
          out_dir / "cells" / (rows[r].name + "_seed" + std::to_string(seeds[k]));
      fs::create_directories(cell_dir);
      TrainResult tr = train(cfg, train_sets[k], test_sets[k], cell_dir);
      auto [inv, men] = evaluate_checkpoint(tr.final_checkpoint, test_sets[k], cfg.threshold);
      cell.invasion = inv;
      cell.meningioma = men;
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  };

  const size_t total = table.cells.size();
  const int workers = std::max(1, std::min<int>(parallelism, static_cast<int>(total)));
  if (workers == 1) {
    for (size_t i = 0; i < total; ++i) run_cell(i);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (size_t i = static_cast<size_t>(w); i < total; i += static_cast<size_t>(workers))
          run_cell(i);
      });
    for (auto& t : pool) t.join();
  }
  return table;
}

}  // namespace mtcl
