#include "mtcl/autograd.hpp"

#include "mtcl/errors.hpp"

namespace mtcl {

void Tape::backward(const Var& loss) {
  if (loss.id < 0) throw NumericError("backward() on a constant (loss not on the tape)");
  if (loss.v.numel() != 1)
    throw NumericError("backward() requires a scalar loss, got " + shape_str(loss.v.shape()));
  add_grad(loss.id, Tensor::scalar(1.0));
  for (size_t i = ops_.size(); i > 0; --i) ops_[i - 1](*this);
}

}  // namespace mtcl
