#include "mtcl/tensor.hpp"

#include <cmath>
#include <sstream>

#include "mtcl/errors.hpp"

namespace mtcl {

std::string shape_str(const std::vector<long>& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
long shape_numel(const std::vector<long>& shape) {
  long n = 1;
  for (long d : shape) {
    if (d < 0) throw ConfigError("negative tensor dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<long> shape)
    : shape_(std::move(shape)),
      numel_(shape_numel(shape_)),
      data_(std::make_shared<std::vector<double>>(static_cast<size_t>(numel_), 0.0)) {}

Tensor::Tensor(std::vector<long> shape, double fill_value)
    : shape_(std::move(shape)),
      numel_(shape_numel(shape_)),
      data_(std::make_shared<std::vector<double>>(static_cast<size_t>(numel_), fill_value)) {}

Tensor Tensor::scalar(double v) {
  Tensor t(std::vector<long>{1});
  (*t.data_)[0] = v;
  return t;
}

Tensor Tensor::from_values(std::vector<long> shape, std::vector<double> values) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = shape_numel(t.shape_);
  if (t.numel_ != static_cast<long>(values.size()))
    throw ConfigError("from_values: " + shape_str(t.shape_) + " does not hold " +
                      std::to_string(values.size()) + " values");
  t.data_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

double Tensor::item() const {
  if (numel_ != 1) throw NumericError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.numel_ = numel_;
  t.data_ = data_ ? std::make_shared<std::vector<double>>(*data_) : nullptr;
  return t;
}

Tensor Tensor::reshaped(std::vector<long> new_shape) const {
  if (shape_numel(new_shape) != numel_)
    throw ConfigError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape));
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.numel_ = numel_;
  t.data_ = data_;
  return t;
}

void Tensor::fill(double v) {
  for (auto& x : *data_) x = v;
}

void Tensor::add_scaled_(const Tensor& other, double s) {
  if (!same_shape(other))
    throw NumericError("add_scaled_: shape mismatch " + shape_str(shape_) + " vs " +
                       shape_str(other.shape_));
  const double* src = other.data();
  double* dst = data();
  for (long i = 0; i < numel_; ++i) dst[i] += s * src[i];
}

double Tensor::sum() const {
  double acc = 0.0;
  const double* p = data();
  for (long i = 0; i < numel_; ++i) acc += p[i];
  return acc;
}

bool Tensor::all_finite() const {
  const double* p = data();
  for (long i = 0; i < numel_; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

}  // namespace mtcl
