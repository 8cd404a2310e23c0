#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace adadec {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Whole-computation floating point mode. In F32 mode every primitive output
// is rounded to the nearest float, so values stay exactly float-representable.
enum class Precision { F32, F64 };

inline double quantize(double x, Precision p) {
  return p == Precision::F32 ? static_cast<double>(static_cast<float>(x)) : x;
}

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major tensor of rank 0, 1 or 2.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool is_scalar() const { return data_.size() == 1 && shape_.size() <= 1; }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double item() const;

  void fill(double v);
  /// Throws NumericError naming `where` on the first NaN or infinity.
  void check_finite(const char* where) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);
double l2_norm(std::span<const double> v);

}  // namespace adadec
