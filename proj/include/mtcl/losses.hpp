#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtcl/autograd.hpp"

namespace mtcl {

// ---------------------------------------------------------------------------
// Scalar forms, operating on single feature vectors.
// ---------------------------------------------------------------------------

// dot(a,b) / (|a| |b|), clamped to [-1, 1]. A zero-norm argument is an error
// naming which side was degenerate.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Two-way softmax contrast: -log of the probability assigned to the positive
// similarity. Evaluated as softplus((sim_neg - sim_pos) / tau), which is the
// max-subtracted log-sum-exp form.
double contrastive_loss(std::span<const double> anchor, std::span<const double> positive,
                        std::span<const double> negative, double tau);

// Softmax cross entropy over two logits.
double classification_loss(std::span<const double> logits, int label);

// ---------------------------------------------------------------------------
// Batched graph operations ([N, ...] inputs, scalar mean outputs).
// ---------------------------------------------------------------------------

Var cross_entropy_mean(Tape* tape, const Var& logits, const std::vector<int>& labels,
                       const std::string& term_name);

Var contrastive_mean(Tape* tape, const Var& anchor, const Var& positive, const Var& negative,
                     double tau, const std::string& term_name);

// ---------------------------------------------------------------------------
// Total objective.
// ---------------------------------------------------------------------------

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.7;
  double tau = 0.07;
  long warmup_epochs = 30;
};

struct LossReport {
  double cls_inv = 0.0, cls_men = 0.0;
  double con_inv = 0.0, con_men = 0.0;
  double aux_inv = 0.0, aux_men = 0.0;
  double total = 0.0;
  bool contrastive_active = false;  // epoch has passed the warm-up gate
  bool has_contrastive = false;     // contrastive branch exists in this configuration
  bool has_aux = false;

  // total re-derived from the parts; equals `total` up to rounding.
  double recomposed(double alpha, double beta) const;
  nlohmann::json to_json() const;
};

// The vectors feeding the two contrastive terms and the optional auxiliary
// logits. Tasks: the invasion contrast anchors the invasion-aligned common
// vector against the two projected task vectors, the grading contrast swaps
// the roles.
struct TotalLossArgs {
  Var main_inv, main_men;                        // [N, 2]
  std::optional<Var> aux_inv, aux_men;           // [N, 2]
  std::optional<Var> common_inv, common_men;     // [N, E] aligned common vectors
  std::optional<Var> proj_inv, proj_men;         // [N, E] projected task vectors
};

// Computes every available term and combines them. Contrastive terms are
// evaluated (and reported) whenever the branch exists, but enter the total
// only from epoch >= warmup_epochs; the gate is inclusive and 0-based.
std::pair<Var, LossReport> total_loss(Tape* tape, const TotalLossArgs& args,
                                      const std::vector<int>& invasion_labels,
                                      const std::vector<int>& grade_labels, const LossWeights& w,
                                      long epoch);

}  // namespace mtcl
