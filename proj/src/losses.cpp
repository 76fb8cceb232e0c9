#include "mtcl/losses.hpp"

#include <cmath>

#include "mtcl/errors.hpp"
#include "mtcl/nn.hpp"

namespace mtcl {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))); }

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double norm_of(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void check_label(int label, const std::string& where) {
  if (label != 0 && label != 1)
    throw DataError(where + ": label must be 0 or 1, got " + std::to_string(label));
}

struct RowSims {
  double sim_pos, sim_neg;
  double norm_anchor, norm_pos, norm_neg;
};

RowSims row_similarities(const double* a, const double* p, const double* n, long f,
                         const std::string& where, long row) {
  auto norm = [f](const double* v) {
    double acc = 0.0;
    for (long i = 0; i < f; ++i) acc += v[i] * v[i];
    return std::sqrt(acc);
  };
  RowSims r{};
  r.norm_anchor = norm(a);
  r.norm_pos = norm(p);
  r.norm_neg = norm(n);
  if (r.norm_anchor == 0.0)
    throw NumericError(where + ": anchor vector has zero norm (row " + std::to_string(row) + ")");
  if (r.norm_pos == 0.0)
    throw NumericError(where + ": positive vector has zero norm (row " + std::to_string(row) + ")");
  if (r.norm_neg == 0.0)
    throw NumericError(where + ": negative vector has zero norm (row " + std::to_string(row) + ")");
  double sp = 0.0, sn = 0.0;
  for (long i = 0; i < f; ++i) {
    sp += a[i] * p[i];
    sn += a[i] * n[i];
  }
  r.sim_pos = sp / (r.norm_anchor * r.norm_pos);
  r.sim_neg = sn / (r.norm_anchor * r.norm_neg);
  return r;
}

}  // namespace

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw NumericError("cosine_similarity: length mismatch " + std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()));
  if (a.empty()) throw NumericError("cosine_similarity: empty vectors");
  const double na = norm_of(a);
  if (na == 0.0) throw NumericError("cosine_similarity: first argument has zero norm");
  const double nb = norm_of(b);
  if (nb == 0.0) throw NumericError("cosine_similarity: second argument has zero norm");
  const double s = dot(a, b) / (na * nb);
  return std::min(1.0, std::max(-1.0, s));
}

double contrastive_loss(std::span<const double> anchor, std::span<const double> positive,
                        std::span<const double> negative, double tau) {
  if (tau <= 0.0) throw ConfigError("contrastive_loss: temperature must be positive");
  if (anchor.size() != positive.size() || anchor.size() != negative.size())
    throw NumericError("contrastive_loss: vector length mismatch");
  if (anchor.empty()) throw NumericError("contrastive_loss: empty vectors");
  const RowSims r =
      row_similarities(anchor.data(), positive.data(), negative.data(),
                       static_cast<long>(anchor.size()), "contrastive_loss", 0);
  return softplus((r.sim_neg - r.sim_pos) / tau);
}

double classification_loss(std::span<const double> logits, int label) {
  if (logits.size() != 2)
    throw NumericError("classification_loss: expected 2 logits, got " +
                       std::to_string(logits.size()));
  check_label(label, "classification_loss");
  for (double z : logits)
    if (!std::isfinite(z)) throw NumericError("classification_loss: non-finite logit");
  const double m = std::max(logits[0], logits[1]);
  const double lse = m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m));
  return lse - logits[static_cast<size_t>(label)];
}

Var cross_entropy_mean(Tape* tape, const Var& logits, const std::vector<int>& labels,
                       const std::string& term_name) {
  if (logits.v.ndim() != 2 || logits.v.dim(1) != 2)
    throw NumericError(term_name + ": logits must be [N, 2], got " + shape_str(logits.v.shape()));
  const long n = logits.v.dim(0);
  if (n == 0 || static_cast<long>(labels.size()) != n)
    throw NumericError(term_name + ": labels/logits row mismatch");
  const double* zp = logits.v.data();
  double total = 0.0;
  for (long r = 0; r < n; ++r) {
    check_label(labels[static_cast<size_t>(r)], term_name);
    const double z0 = zp[2 * r], z1 = zp[2 * r + 1];
    if (!std::isfinite(z0) || !std::isfinite(z1))
      throw NumericError(term_name + ": non-finite logit (row " + std::to_string(r) + ")");
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    total += lse - (labels[static_cast<size_t>(r)] == 0 ? z0 : z1);
  }
  Var out = make_output(tape, Tensor::scalar(total / static_cast<double>(n)));
  if (tape && logits.id >= 0) {
    const Tensor zsaved = logits.v;
    const int zid = logits.id, oid = out.id;
    const std::vector<int> ysaved = labels;
    tape->record([zsaved, ysaved, zid, oid, n](Tape& tp) {
      const Tensor* gy = tp.grad_ptr(oid);
      if (!gy) return;
      const double g = (*gy)[0] / static_cast<double>(n);
      Tensor gz({n, 2});
      const double* zp = zsaved.data();
      double* gp = gz.data();
      for (long r = 0; r < n; ++r) {
        const double z0 = zp[2 * r], z1 = zp[2 * r + 1];
        const double m = std::max(z0, z1);
        const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
        const double p0 = e0 / (e0 + e1);
        const int y = ysaved[static_cast<size_t>(r)];
        gp[2 * r] = g * (p0 - (y == 0 ? 1.0 : 0.0));
        gp[2 * r + 1] = g * ((1.0 - p0) - (y == 1 ? 1.0 : 0.0));
      }
      tp.add_grad(zid, std::move(gz));
    });
  }
  return out;
}

Var contrastive_mean(Tape* tape, const Var& anchor, const Var& positive, const Var& negative,
                     double tau, const std::string& term_name) {
  if (tau <= 0.0) throw ConfigError(term_name + ": temperature must be positive");
  if (anchor.v.ndim() != 2 || !anchor.v.same_shape(positive.v) || !anchor.v.same_shape(negative.v))
    throw NumericError(term_name + ": inputs must share an [N, F] shape");
  const long n = anchor.v.dim(0), f = anchor.v.dim(1);
  if (n == 0 || f == 0) throw NumericError(term_name + ": empty input");

  std::vector<RowSims> sims(static_cast<size_t>(n));
  const double* ap = anchor.v.data();
  const double* pp = positive.v.data();
  const double* np = negative.v.data();
  double total = 0.0;
  for (long r = 0; r < n; ++r) {
    sims[static_cast<size_t>(r)] =
        row_similarities(ap + r * f, pp + r * f, np + r * f, f, term_name, r);
    const RowSims& s = sims[static_cast<size_t>(r)];
    total += softplus((s.sim_neg - s.sim_pos) / tau);
  }
  Var out = make_output(tape, Tensor::scalar(total / static_cast<double>(n)));

  if (tape && (anchor.id >= 0 || positive.id >= 0 || negative.id >= 0)) {
    const Tensor a = anchor.v, p = positive.v, q = negative.v;
    const int aid = anchor.id, pid = positive.id, nid = negative.id, oid = out.id;
    auto saved = std::make_shared<std::vector<RowSims>>(std::move(sims));
    tape->record([a, p, q, saved, aid, pid, nid, oid, n, f, tau](Tape& tp) {
      const Tensor* gy = tp.grad_ptr(oid);
      if (!gy) return;
      const double gscale = (*gy)[0] / static_cast<double>(n);
      Tensor ga, gp_, gn;
      if (aid >= 0) ga = Tensor::zeros(a.shape());
      if (pid >= 0) gp_ = Tensor::zeros(p.shape());
      if (nid >= 0) gn = Tensor::zeros(q.shape());
      const double* ap = a.data();
      const double* pp = p.data();
      const double* np = q.data();
      for (long r = 0; r < n; ++r) {
        const RowSims& s = (*saved)[static_cast<size_t>(r)];
        const double z = (s.sim_neg - s.sim_pos) / tau;
        const double c = gscale * sigmoid(z) / tau;  // dL/dsim_neg = c, dL/dsim_pos = -c
        const double* ar = ap + r * f;
        const double* pr = pp + r * f;
        const double* nr = np + r * f;
        const double inv_ap = 1.0 / (s.norm_anchor * s.norm_pos);
        const double inv_an = 1.0 / (s.norm_anchor * s.norm_neg);
        const double inv_a2 = 1.0 / (s.norm_anchor * s.norm_anchor);
        const double inv_p2 = 1.0 / (s.norm_pos * s.norm_pos);
        const double inv_n2 = 1.0 / (s.norm_neg * s.norm_neg);
        if (aid >= 0) {
          double* gar = ga.data() + r * f;
          for (long i = 0; i < f; ++i) {
            const double d_pos = pr[i] * inv_ap - s.sim_pos * ar[i] * inv_a2;
            const double d_neg = nr[i] * inv_an - s.sim_neg * ar[i] * inv_a2;
            gar[i] += c * (d_neg - d_pos);
          }
        }
        if (pid >= 0) {
          double* gpr = gp_.data() + r * f;
          for (long i = 0; i < f; ++i)
            gpr[i] += -c * (ar[i] * inv_ap - s.sim_pos * pr[i] * inv_p2);
        }
        if (nid >= 0) {
          double* gnr = gn.data() + r * f;
          for (long i = 0; i < f; ++i)
            gnr[i] += c * (ar[i] * inv_an - s.sim_neg * nr[i] * inv_n2);
        }
      }
      if (aid >= 0) tp.add_grad(aid, std::move(ga));
      if (pid >= 0) tp.add_grad(pid, std::move(gp_));
      if (nid >= 0) tp.add_grad(nid, std::move(gn));
    });
  }
  return out;
}

double LossReport::recomposed(double alpha, double beta) const {
  double t = cls_inv + cls_men;
  if (has_contrastive && contrastive_active) t += alpha * (con_inv + con_men);
  if (has_aux) t += beta * (aux_inv + aux_men);
  return t;
}

nlohmann::json LossReport::to_json() const {
  return nlohmann::json{{"cls_inv", cls_inv},
                        {"cls_men", cls_men},
                        {"con_inv", con_inv},
                        {"con_men", con_men},
                        {"aux_inv", aux_inv},
                        {"aux_men", aux_men},
                        {"total", total},
                        {"contrastive_active", contrastive_active},
                        {"has_contrastive", has_contrastive},
                        {"has_aux", has_aux}};
}

std::pair<Var, LossReport> total_loss(Tape* tape, const TotalLossArgs& args,
                                      const std::vector<int>& invasion_labels,
                                      const std::vector<int>& grade_labels, const LossWeights& w,
                                      long epoch) {
  if (epoch < 0) throw ConfigError("total_loss: epoch must be non-negative");
  if (args.aux_inv.has_value() != args.aux_men.has_value())
    throw ConfigError("total_loss: auxiliary logits must come in pairs");
  const bool has_con = args.common_inv && args.common_men && args.proj_inv && args.proj_men;
  if (!has_con && (args.common_inv || args.common_men || args.proj_inv || args.proj_men))
    throw ConfigError("total_loss: contrastive inputs are incomplete");

  LossReport report;
  report.has_aux = args.aux_inv.has_value();
  report.has_contrastive = has_con;
  report.contrastive_active = has_con && epoch >= w.warmup_epochs;

  auto term_check = [](const Var& v, const char* name) {
    if (!std::isfinite(v.v.item()))
      throw NumericError(std::string("total_loss: term ") + name + " is non-finite");
    return v;
  };

  Var cls_inv = term_check(cross_entropy_mean(tape, args.main_inv, invasion_labels, "cls-inv"),
                           "cls-inv");
  Var cls_men =
      term_check(cross_entropy_mean(tape, args.main_men, grade_labels, "cls-men"), "cls-men");
  report.cls_inv = cls_inv.v.item();
  report.cls_men = cls_men.v.item();

  std::vector<std::pair<Var, double>> combo{{cls_inv, 1.0}, {cls_men, 1.0}};

  if (has_con) {
    // Invasion contrast: anchor = invasion-aligned common, positive = projected
    // invasion feature, negative = projected grading feature. Grading swaps roles.
    Var con_inv = term_check(
        contrastive_mean(tape, *args.common_inv, *args.proj_inv, *args.proj_men, w.tau, "con-inv"),
        "con-inv");
    Var con_men = term_check(
        contrastive_mean(tape, *args.common_men, *args.proj_men, *args.proj_inv, w.tau, "con-men"),
        "con-men");
    report.con_inv = con_inv.v.item();
    report.con_men = con_men.v.item();
    if (report.contrastive_active) {
      combo.emplace_back(con_inv, w.alpha);
      combo.emplace_back(con_men, w.alpha);
    }
  }
  if (report.has_aux) {
    Var aux_inv = term_check(cross_entropy_mean(tape, *args.aux_inv, invasion_labels, "aux-inv"),
                             "aux-inv");
    Var aux_men =
        term_check(cross_entropy_mean(tape, *args.aux_men, grade_labels, "aux-men"), "aux-men");
    report.aux_inv = aux_inv.v.item();
    report.aux_men = aux_men.v.item();
    combo.emplace_back(aux_inv, w.beta);
    combo.emplace_back(aux_men, w.beta);
  }

  Var total = affine_combination(tape, combo);
  report.total = total.v.item();
  if (!std::isfinite(report.total)) throw NumericError("total_loss: term total is non-finite");
  return {total, report};
}

}  // namespace mtcl
