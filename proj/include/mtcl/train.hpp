#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtcl/data.hpp"
#include "mtcl/metrics.hpp"
#include "mtcl/model.hpp"

namespace mtcl {

struct TrainConfig {
  ModelConfig model;
  double lr = 1e-3;
  double weight_decay = 1e-3;
  long epochs = 100;
  long batch_size = 0;  // 0 picks the scale default: 8 full, 16 tiny
  AblationFlags ablation;
  BaselineMode baseline = BaselineMode::proposed;
  std::vector<uint64_t> seeds{1, 2, 3};
  AugmentConfig augment;
  long eval_every = 1;  // 0 disables per-epoch evaluation
  bool deterministic = true;
  double threshold = 0.5;

  long effective_batch_size() const;
  void validate() const;
};

struct EpochRecord {
  long epoch = 0;
  LossReport loss;
  std::optional<MetricReport> eval_invasion, eval_meningioma;
  // Zeroed in deterministic mode so identically seeded runs produce
  // byte-identical logs.
  double wall_s = 0.0;

  nlohmann::json to_json() const;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  void write_ndjson(const std::filesystem::path& path) const;
};

struct TrainResult {
  TrainHistory history;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;  // empty when no evaluation ever ran
  long best_epoch = -1;
  double best_eval_auc = 0.0;  // mean of the per-task AUCs at best_epoch
};

// Adam with the configured L2 penalty, per-epoch reshuffled batches, the
// contrastive warm-up gate, and final + best-by-eval-AUC checkpoints under
// out_dir/checkpoints. A non-finite loss aborts the run with the last
// completed epoch's parameters retained in the final checkpoint.
TrainResult train(const TrainConfig& cfg, const std::vector<MultiModalSample>& train_set,
                  const std::vector<MultiModalSample>& eval_set,
                  const std::filesystem::path& out_dir);

// Eval-mode forward over all samples; softmax positive-class probabilities of
// the main heads are scored per task.
std::pair<MetricReport, MetricReport> evaluate(JointModel& model,
                                               const std::vector<MultiModalSample>& samples,
                                               double threshold);
std::pair<MetricReport, MetricReport> evaluate_checkpoint(
    const std::filesystem::path& checkpoint, const std::vector<MultiModalSample>& samples,
    double threshold);

std::unique_ptr<JointModel> build_baseline(BaselineMode mode, const ModelConfig& cfg);

// loss + weight_decay * (0.5 * sum of squared parameters).
double regularized_objective(double loss, JointModel& model, double weight_decay);

// ---------------------------------------------------------------------------
// Ablation grid.
// ---------------------------------------------------------------------------

struct AblationRowSpec {
  std::string name;
  AblationFlags flags;
};

// Baseline1 (none), Baseline2 (TC), Baseline3 (TC + contrastive),
// Baseline4 (TC + aux), Proposed (all).
std::vector<AblationRowSpec> default_ablation_rows();
AblationRowSpec ablation_row_by_name(const std::string& name);

struct AblationCell {
  std::string row;
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricReport invasion, meningioma;
};

struct AblationTable {
  std::vector<AblationRowSpec> rows;
  std::vector<uint64_t> seeds;
  std::vector<AblationCell> cells;  // rows-major, one cell per (row, seed)

  const AblationCell& cell(size_t row, size_t seed_idx) const {
    return cells[row * seeds.size() + seed_idx];
  }
  // Mean and sample sd across seeds for one metric of one row; sd is NaN for
  // fewer than two usable cells, mean is NaN for none.
  std::pair<double, double> aggregate(size_t row, Task task, size_t metric_index) const;

  std::string to_csv() const;
  std::string to_text() const;
};

// Trains and evaluates every (row, seed) cell. Each seed re-draws the
// stratified split, mirroring repeated random data divisions; every method
// row sees the same draw at a given seed. Cell failures are recorded and do
// not abort the grid. parallelism > 1 fans cells out across threads.
AblationTable run_ablation(const TrainConfig& base, const std::vector<MultiModalSample>& dataset,
                           const std::array<double, 3>& train_fractions,
                           const std::vector<AblationRowSpec>& rows,
                           const std::vector<uint64_t>& seeds, int parallelism,
                           const std::filesystem::path& out_dir);

}  // namespace mtcl
