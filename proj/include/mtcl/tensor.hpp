#pragma once

#include <memory>
#include <string>
#include <vector>

namespace mtcl {

std::string shape_str(const std::vector<long>& shape);

// Dense row-major tensor of doubles.
//
// Copies are shallow: they share the underlying buffer. The convention across
// the library is that a tensor published as the output of an operation is
// never mutated afterwards; clone() gives an independent buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<long> shape);
  Tensor(std::vector<long> shape, double fill_value);

  static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(double v);
  static Tensor from_values(std::vector<long> shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(data_); }
  const std::vector<long>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  long dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  long numel() const { return numel_; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double& operator[](long i) { return (*data_)[static_cast<size_t>(i)]; }
  double operator[](long i) const { return (*data_)[static_cast<size_t>(i)]; }

  // Value of a single-element tensor.
  double item() const;

  Tensor clone() const;
  // Same buffer, new shape; element count must match.
  Tensor reshaped(std::vector<long> new_shape) const;

  void fill(double v);
  void add_scaled_(const Tensor& other, double s);  // this += s * other

  double sum() const;
  bool all_finite() const;

 private:
  std::vector<long> shape_;
  long numel_ = 0;
  std::shared_ptr<std::vector<double>> data_;
};

}  // namespace mtcl
