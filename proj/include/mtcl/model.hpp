#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mtcl/data.hpp"
#include "mtcl/encoder.hpp"
#include "mtcl/losses.hpp"
#include "mtcl/nn.hpp"
#include "mtcl/types.hpp"

namespace mtcl {

// What the main heads concatenate next to the task-specific vector: the raw
// task-common vector (default) or the per-task aligned embedding.
enum class CommonFeed { raw_common, aligned_common };

enum class BaselineMode { proposed, efmt, mfmt };

inline const char* to_string(CommonFeed f) {
  return f == CommonFeed::raw_common ? "raw" : "aligned";
}
inline const char* to_string(BaselineMode m) {
  switch (m) {
    case BaselineMode::proposed: return "proposed";
    case BaselineMode::efmt: return "efmt";
    default: return "mfmt";
  }
}
CommonFeed parse_common_feed(const std::string& s);
BaselineMode parse_baseline_mode(const std::string& s);

struct ModelConfig {
  Scale scale = Scale::tiny;
  std::array<long, 3> in_shape{16, 16, 8};
  long feature_channels = 32;  // 512 at full scale
  long embed_dim = 8;          // 128 at full scale
  int num_tasks = 2;
  double dropout_rate = 0.5;
  long warmup_epochs = 30;
  double alpha = 1.0;
  double beta = 0.7;
  double temperature = 0.07;
  uint64_t seed = 1;
  CommonFeed common_feed = CommonFeed::raw_common;
  long disentangle_kernel_depth = 2;  // depth extent of the fusion conv kernel (2 or 1)

  static ModelConfig full_defaults();
  static ModelConfig tiny_defaults();
  void validate() const;

  // Head widths scale with the feature width; at C=512 these are the
  // published (256, 32) main and (512, 256, 32) auxiliary stacks.
  std::vector<long> main_hidden() const;
  std::vector<long> aux_hidden() const;
  LossWeights loss_weights() const {
    return LossWeights{alpha, beta, temperature, warmup_epochs};
  }
};

struct AblationFlags {
  bool tc = true;
  bool l_con = true;
  bool aux = true;

  void validate() const;  // the contrastive loss requires the task-common branch
};

// Per-sample feature snapshot; undefined tensors mark branches removed by the
// ablation configuration.
struct FeatureBundle {
  Tensor feat_t1c, feat_flairc, feat_adc;  // [C, h, w, d]
  Tensor task_inv, task_men, common;       // [C]
  Tensor common_inv, common_men;           // [embed_dim]
  Tensor proj_inv, proj_men;               // [embed_dim]
};

struct ModelOutputs {
  Tensor main_logits_inv, main_logits_men;  // [2]
  Tensor aux_logits_inv, aux_logits_men;    // [2]; undefined when aux is off
  FeatureBundle features;
};

// Batched, tape-connected counterpart used during training.
struct BatchOutputs {
  Var main_inv, main_men;                              // [N, 2]
  std::optional<Var> aux_inv, aux_men;                 // [N, 2]
  std::optional<Var> task_inv, task_men, common;       // [N, C]
  std::optional<Var> common_inv, common_men;           // [N, E]
  std::optional<Var> proj_inv, proj_men;               // [N, E]
  std::vector<Var> feature_maps;                       // per-encoder [N, C, h, w, d]
};

// Assembles the loss inputs honoring the ablation flags: contrastive vectors
// are forwarded only when both the task-common branch and the contrastive
// loss are enabled, auxiliary logits only when the auxiliary branch is.
TotalLossArgs to_loss_args(const BatchOutputs& out, const AblationFlags& ab);

ModelOutputs extract_sample(const BatchOutputs& out, long row);

class JointModel {
 public:
  virtual ~JointModel() = default;
  virtual BatchOutputs forward(Tape* tape, const VolumeBatch& batch, bool training) = 0;
  virtual void collect(NamedTensors& out) = 0;
  virtual const ModelConfig& config() const = 0;
  virtual AblationFlags ablation() const = 0;
  virtual std::string kind() const = 0;
  virtual void freeze_stats(bool frozen) = 0;

  std::vector<Parameter*> parameters();
  ModelOutputs forward_sample(const MultiModalSample& sample, Mode mode);
};

// The task-aware contrastive multi-task network: three independent residual
// encoders, channel-concatenated middle fusion, disentanglement into
// invasion-specific / grading-specific / task-common vectors, per-task
// alignment and projection embeddings for the contrastive losses, and main
// plus auxiliary classification heads.
class MultiTaskModel : public JointModel {
 public:
  MultiTaskModel(const ModelConfig& cfg, const AblationFlags& ablation);

  // One residual encoder per modality, non-shared weights.
  Var encode_modality(Tape* tape, const Var& volume, Modality modality, bool training);

  struct Disentangled {
    Var task_inv, task_men;
    std::optional<Var> common;
  };
  // Channel concat to 3C, one 2x2xK conv head per factor, spatial average
  // pooling down to length-C vectors.
  Disentangled fuse_and_disentangle(Tape* tape, const Var& feat_t1c, const Var& feat_flairc,
                                    const Var& feat_adc);

  Var align_common(Tape* tape, const Var& common, Task task);
  Var project_specific(Tape* tape, const Var& task_specific, Task task);
  // `common` carries the raw task-common vector (raw_common feed) or the
  // task-aligned embedding (aligned_common feed); absent when TC is off.
  Var predict_main(Tape* tape, const Var& task_specific, const std::optional<Var>& common,
                   Task task, bool training);
  Var predict_aux(Tape* tape, const Var& task_specific, Task task, bool training);

  BatchOutputs forward(Tape* tape, const VolumeBatch& batch, bool training) override;
  void collect(NamedTensors& out) override;
  const ModelConfig& config() const override { return cfg_; }
  AblationFlags ablation() const override { return ablation_; }
  std::string kind() const override { return "proposed"; }
  void freeze_stats(bool frozen) override { stats_frozen_ = frozen; }

  // {C, h, w, d} of each per-modality feature map for this configuration.
  std::array<long, 4> feature_map_shape() const;

 private:
  ResNet3dEncoder& encoder(Modality m);

  ModelConfig cfg_;
  AblationFlags ablation_;
  std::unique_ptr<ResNet3dEncoder> enc_t1c_, enc_flairc_, enc_adc_;
  std::unique_ptr<Conv3d> dis_inv_, dis_men_, dis_common_;
  std::unique_ptr<Linear> align_inv_, align_men_;
  std::unique_ptr<Linear> project_inv_, project_men_;
  std::unique_ptr<Mlp> main_inv_, main_men_;
  std::unique_ptr<Mlp> aux_inv_, aux_men_;
  Rng dropout_rng_;
  bool stats_frozen_ = false;
};

// Comparison baselines sharing the encoder family. EFMT stacks the three
// modalities as input channels of a single encoder; MFMT keeps three encoders
// and concatenates their pooled features. Both feed two classifiers with the
// auxiliary-branch architecture, input width adjusted to the fused width.
class BaselineModel : public JointModel {
 public:
  BaselineModel(BaselineMode mode, const ModelConfig& cfg);

  BatchOutputs forward(Tape* tape, const VolumeBatch& batch, bool training) override;
  void collect(NamedTensors& out) override;
  const ModelConfig& config() const override { return cfg_; }
  AblationFlags ablation() const override { return AblationFlags{false, false, false}; }
  std::string kind() const override { return to_string(mode_); }
  void freeze_stats(bool frozen) override { stats_frozen_ = frozen; }

 private:
  BaselineMode mode_;
  ModelConfig cfg_;
  std::vector<std::unique_ptr<ResNet3dEncoder>> encoders_;
  std::unique_ptr<Mlp> clf_inv_, clf_men_;
  Rng dropout_rng_;
  bool stats_frozen_ = false;
};

// ---------------------------------------------------------------------------
// Checkpointing: single binary archive holding the config as key-value text,
// the epoch counter, and every named tensor. Loading rebuilds the model from
// the stored config and verifies that names and shapes match exactly.
// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, JointModel& model, long epoch);

struct LoadedCheckpoint {
  std::unique_ptr<JointModel> model;
  long epoch = 0;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

std::unique_ptr<JointModel> build_model(const ModelConfig& cfg, const AblationFlags& ablation,
                                        BaselineMode mode);

}  // namespace mtcl
