#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sfbd {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. A scalar is a tensor of shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix views; both require ndim() == 2.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r) { return data().subspan(r * shape_[1], shape_[1]); }
  std::span<const double> row(std::size_t r) const {
    return data().subspan(r * shape_[1], shape_[1]);
  }

  double item() const;
  bool all_finite() const;

  Tensor reshaped(Shape shape) const;
  Tensor transposed() const;
  Tensor rows_slice(std::size_t begin, std::size_t end) const;
  Tensor gather_rows(std::span<const std::size_t> indices) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

void require_matrix(const Tensor& t, const char* what);

// Plain numeric kernels shared by the tape ops and the non-differentiable paths.
Tensor matmul_values(const Tensor& a, const Tensor& b);
Tensor matmul_nt_values(const Tensor& a, const Tensor& b);  // a * b^T
Tensor matmul_tn_values(const Tensor& a, const Tensor& b);  // a^T * b

double frobenius_norm(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace sfbd
