#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace eli {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with value semantics.
///
/// Storage is shared and immutable once built, so copies are cheap and a
/// Tensor may be read concurrently from several threads. Public constructors
/// reject NaN/Inf; ops that produce results internally go through adopt().
class Tensor {
 public:
  /// Rank-0 tensor holding 0.
  Tensor();
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor eye(std::size_t n);

  /// Takes ownership without the finiteness check. Internal results and
  /// debugging paths only.
  static Tensor adopt(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_->size(); }

  std::span<const double> values() const { return *data_; }
  const double* data() const { return data_->data(); }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t i, std::size_t j) const;
  /// Value of a rank-0 or single-element tensor.
  double item() const;

  /// Same storage, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  /// Copy of the values, for building a modified tensor.
  std::vector<double> to_vector() const { return *data_; }

  bool all_finite() const;

 private:
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data);

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

Tensor zeros_like(const Tensor& t);
Tensor ones_like(const Tensor& t);

/// Elementwise helpers on plain tensors (no differentiation).
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);

double max_abs_diff(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);
double frobenius_norm(const Tensor& a);
/// Plain (non-graph) matrix product of rank-2 tensors.
Tensor matmul_values(const Tensor& a, const Tensor& b);
Tensor transpose_values(const Tensor& a);

/// Throws std::invalid_argument naming both shapes.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace eli
