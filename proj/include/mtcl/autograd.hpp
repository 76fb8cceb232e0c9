#pragma once

#include <functional>
#include <vector>

#include "mtcl/tensor.hpp"

namespace mtcl {

// A value flowing through the computation. `id` indexes the tape slot that
// will hold its gradient; id == -1 marks a constant outside the graph.
struct Var {
  Tensor v;
  int id = -1;
};

// Reverse-mode tape. Operations append a backward closure at creation time;
// creation order is a topological order, so backward() simply replays the
// closures in reverse. Gradients of intermediate values live in tape slots,
// gradients of parameters accumulate directly into Parameter::grad.
//
// A Tape is built for one step and discarded. Passing a null Tape* to any
// operation runs it in inference mode (nothing is recorded or saved).
class Tape {
 public:
  int alloc_slot() {
    slots_.emplace_back();
    return static_cast<int>(slots_.size()) - 1;
  }

  void record(std::function<void(Tape&)> back) { ops_.push_back(std::move(back)); }

  // Gradient accumulated for a slot, or nullptr if no downstream consumer
  // contributed one (dead branch).
  const Tensor* grad_ptr(int id) const {
    const Tensor& g = slots_[static_cast<size_t>(id)].grad;
    return g.defined() ? &g : nullptr;
  }

  void add_grad(int id, Tensor&& g) {
    Tensor& slot = slots_[static_cast<size_t>(id)].grad;
    if (!slot.defined())
      slot = std::move(g);
    else
      slot.add_scaled_(g, 1.0);
  }

  void add_grad(int id, const Tensor& g) {
    Tensor& slot = slots_[static_cast<size_t>(id)].grad;
    if (!slot.defined())
      slot = g.clone();
    else
      slot.add_scaled_(g, 1.0);
  }

  // Seeds d(loss)/d(loss) = 1 and replays the tape. `loss` must be scalar.
  void backward(const Var& loss);

  size_t num_ops() const { return ops_.size(); }

 private:
  struct Slot {
    Tensor grad;
  };
  std::vector<Slot> slots_;
  std::vector<std::function<void(Tape&)>> ops_;
};

// Wraps a freshly computed tensor as an output Var, registering a slot when
// a tape is active.
inline Var make_output(Tape* tape, Tensor value) {
  Var out{std::move(value), -1};
  if (tape) out.id = tape->alloc_slot();
  return out;
}

}  // namespace mtcl
