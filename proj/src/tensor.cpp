#include "adadec/tensor.hpp"

#include <cmath>
#include <sstream>

#include "adadec/random.hpp"

namespace adadec {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> v) {
  Shape s{v.size()};
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw ShapeError("rows() on non-matrix " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw ShapeError("cols() on non-matrix " + shape_string(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

void Tensor::check_finite(const char* where) const {
  for (double x : data_) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("numeric overflow: non-finite value produced by ") + where);
    }
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::uint64_t RandomStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("RandomStream::below(0)");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

}  // namespace adadec
