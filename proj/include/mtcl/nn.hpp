#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mtcl/autograd.hpp"
#include "mtcl/rng.hpp"
#include "mtcl/tensor.hpp"

namespace mtcl {

// Trainable tensor plus its gradient accumulator. The gradient buffer is
// allocated on first use so that inference-only models stay lean.
struct Parameter {
  Tensor value;
  Tensor grad;

  Tensor& grad_buffer() {
    if (!grad.defined()) grad = Tensor::zeros(value.shape());
    return grad;
  }
  void zero_grad() {
    if (grad.defined()) grad.fill(0.0);
  }
  void accum_grad(const Tensor& g) { grad_buffer().add_scaled_(g, 1.0); }
};

// Flat registry of named parameters and state buffers, used for the
// optimizer, checkpointing, and parameter-disjointness audits.
struct NamedTensors {
  std::vector<std::pair<std::string, Parameter*>> params;
  std::vector<std::pair<std::string, Tensor*>> buffers;

  void add_param(const std::string& name, Parameter& p) { params.emplace_back(name, &p); }
  void add_buffer(const std::string& name, Tensor& t) { buffers.emplace_back(name, &t); }
  std::vector<Parameter*> param_ptrs() const {
    std::vector<Parameter*> out;
    out.reserve(params.size());
    for (const auto& [name, p] : params) out.push_back(p);
    return out;
  }
};

struct Dims3 {
  long h = 1, w = 1, d = 1;
};

// ---------------------------------------------------------------------------
// Layers. All activations are [N, C, H, W, D] (5-d) or [N, F] (2-d), batch
// first. Forward methods record backward closures when a tape is passed.
// Layer objects must stay at a fixed address once any forward has run.
// ---------------------------------------------------------------------------

class Linear {
 public:
  Linear(long in_features, long out_features, Rng& rng);

  Var forward(Tape* tape, const Var& x);
  void collect(const std::string& prefix, NamedTensors& out);

  long in_features() const { return in_; }
  long out_features() const { return out_; }

  Parameter weight;  // [out, in]
  Parameter bias;    // [out]

 private:
  long in_, out_;
};

class Conv3d {
 public:
  Conv3d(long in_channels, long out_channels, Dims3 kernel, Dims3 stride, Dims3 pad, Rng& rng);

  Var forward(Tape* tape, const Var& x);
  void collect(const std::string& prefix, NamedTensors& out);

  // {out_channels, oh, ow, od}; throws ConfigError when the input is too
  // small for the kernel.
  std::array<long, 4> output_shape(long ih, long iw, long id) const;

  long in_channels() const { return in_ch_; }
  long out_channels() const { return out_ch_; }

  Parameter weight;  // [oc, ic, kh, kw, kd]
  Parameter bias;    // [oc]

 private:
  long in_ch_, out_ch_;
  Dims3 kernel_, stride_, pad_;
};

class BatchNorm3d {
 public:
  explicit BatchNorm3d(long channels);

  // training=true normalizes with batch statistics; update_stats controls
  // whether the running estimates move (frozen during gradient checks).
  Var forward(Tape* tape, const Var& x, bool training, bool update_stats = true);
  void collect(const std::string& prefix, NamedTensors& out);

  Parameter gamma;  // [C]
  Parameter beta;   // [C]
  Tensor running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

 private:
  long channels_;
};

class MaxPool3d {
 public:
  MaxPool3d(Dims3 kernel, Dims3 stride, Dims3 pad) : kernel_(kernel), stride_(stride), pad_(pad) {}

  Var forward(Tape* tape, const Var& x);
  std::array<long, 3> output_shape(long ih, long iw, long id) const;

 private:
  Dims3 kernel_, stride_, pad_;
};

class Dropout {
 public:
  explicit Dropout(double rate) : rate_(rate) {}

  // Inverted dropout; identity when !training or rate == 0. Consumes `rng`
  // only when a mask is actually drawn, keeping eval forwards pure.
  Var forward(Tape* tape, const Var& x, bool training, Rng& rng);

  double rate() const { return rate_; }

 private:
  double rate_;
};

// Fully connected stack: Linear -> ReLU -> Dropout on every hidden layer,
// bare Linear for the output.
class Mlp {
 public:
  Mlp(long in_features, const std::vector<long>& hidden, long out_features, double dropout_rate,
      Rng& rng);

  Var forward(Tape* tape, const Var& x, bool training, Rng& dropout_rng);
  void collect(const std::string& prefix, NamedTensors& out);

  long in_features() const { return in_; }

 private:
  long in_;
  std::vector<Linear> layers_;
  Dropout dropout_;
};

// ---------------------------------------------------------------------------
// Free operations.
// ---------------------------------------------------------------------------

Var relu(Tape* tape, const Var& x);
Var add(Tape* tape, const Var& a, const Var& b);
// Concatenation along dim 1 (channels of 5-d maps or features of 2-d rows).
Var concat_dim1(Tape* tape, const std::vector<Var>& xs);
// [N, C, H, W, D] -> [N, C], mean over the spatial extent.
Var global_avg_pool(Tape* tape, const Var& x);
// Scalar combination sum_k w_k * terms_k; all terms must be scalars.
Var affine_combination(Tape* tape, const std::vector<std::pair<Var, double>>& terms);

// ---------------------------------------------------------------------------
// Optimization.
// ---------------------------------------------------------------------------

// Adam with the L2 term folded into the gradient (g += weight_decay * w),
// matching a 0.5 * weight_decay * ||w||^2 penalty added to the objective.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, double lr, double weight_decay);

  void step();
  void zero_grad();

  double lr;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay;

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

// 0.5 * sum of squared parameter entries; the objective's L2 term is
// weight_decay * l2_penalty(params).
double l2_penalty(const std::vector<Parameter*>& params);

// Variance-scaled (He) initialization helpers.
void init_he_normal(Tensor& w, long fan_in, Rng& rng);

}  // namespace mtcl
