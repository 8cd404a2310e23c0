#include "adadec/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace adadec {

// ---------------------------------------------------------------------------
// ParameterSet / Gradients
// ---------------------------------------------------------------------------

std::size_t ParameterSet::add(std::string name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  std::size_t id = values_.size();
  index_.emplace(name, id);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return id;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParameterSet::id(std::string_view name) const {
  auto found = find(name);
  if (!found) throw std::out_of_range("unknown parameter: " + std::string(name));
  return *found;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

Gradients::Gradients(const ParameterSet& params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grads_.emplace_back(params.value(i).shape());
}

double Gradients::global_norm() const {
  double s = 0.0;
  for (const auto& g : grads_)
    for (double x : g.data()) s += x * x;
  return std::sqrt(s);
}

void Gradients::scale(double factor) {
  for (auto& g : grads_)
    for (double& x : g.data()) x *= factor;
}

void Gradients::add(const Gradients& other) {
  if (other.size() != size()) throw ShapeError("Gradients::add: parameter count mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    auto dst = grads_[i].data();
    auto src = other.grads_[i].data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Parameter: return "parameter";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Outer: return "outer";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::Log: return "log";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Reshape: return "reshape";
    case Op::Sum: return "sum";
    case Op::Scale: return "scale";
    case Op::Normalize: return "normalize";
    case Op::DropoutMask: return "dropout";
    case Op::EmbedLookup: return "embed";
    case Op::Scatter: return "scatter";
    case Op::Pick: return "pick";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace {

struct MatView {
  const double* data;
  std::size_t rows;
  std::size_t cols;
};

// C[m x n] += op(A) * op(B), where op(X) = X or Xᵀ.
void gemm(MatView a, bool ta, MatView b, bool tb, double* c) {
  const std::size_t m = ta ? a.cols : a.rows;
  const std::size_t k = ta ? a.rows : a.cols;
  const std::size_t n = tb ? b.rows : b.cols;
  if (!ta && !tb) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      const double* arow = a.data + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b.data + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a.data + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b.data + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        c[i * n + j] += s;
      }
    }
  } else if (ta && !tb) {
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = a.data + p * m;
      const double* brow = b.data + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = arow[i];
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a.data[p * a.cols + i] * b.data[j * b.cols + p];
        c[i * n + j] += s;
      }
  }
}

// Left operand as a matrix: vectors become a single row.
MatView lhs_view(const Tensor& t) {
  if (t.rank() == 1) return {t.data().data(), 1, t.size()};
  return {t.data().data(), t.shape()[0], t.shape()[1]};
}

// Right operand as a matrix: vectors become a single column.
MatView rhs_view(const Tensor& t) {
  if (t.rank() == 1) return {t.data().data(), t.size(), 1};
  return {t.data().data(), t.shape()[0], t.shape()[1]};
}

[[noreturn]] void shape_fail(Op op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + shape_string(a) +
                   " and " + shape_string(b));
}

Tensor& accum(std::vector<Tensor>& grads, std::uint32_t i, const Shape& shape) {
  if (grads[i].size() == 0 || grads[i].shape() != shape) grads[i] = Tensor(shape);
  return grads[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape forward
// ---------------------------------------------------------------------------

const Tensor& Tape::val(std::uint32_t i) const {
  const Node& n = nodes_[i];
  return n.external ? *n.external : n.value;
}

const Tensor& Tape::value(Var v) const {
  if (v.index >= nodes_.size()) throw std::out_of_range("Tape::value: stale Var");
  return val(v.index);
}

void Tape::finish(Tensor& t, Op op) const {
  if (precision_ == Precision::F32)
    for (double& x : t.data()) x = quantize(x, precision_);
  t.check_finite(op_name(op));
}

Var Tape::push(Node node) {
  finish(node.value, node.op);
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(const ParameterSet& params, std::size_t id) {
  auto it = param_nodes_.find(id);
  if (it != param_nodes_.end()) return Var{it->second};
  Node n(Op::Parameter);
  n.external = &params.value(id);
  n.param_id = id;
  n.external->check_finite("parameter");
  nodes_.push_back(std::move(n));
  auto idx = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(id, idx);
  return Var{idx};
}

Var Tape::constant(Tensor value) {
  Node n(Op::Constant);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b, bool transpose_rhs) {
  const Tensor& ta = val(a.index);
  const Tensor& tb = val(b.index);
  if (ta.rank() < 1 || ta.rank() > 2 || tb.rank() < 1 || tb.rank() > 2 ||
      (ta.rank() == 1 && tb.rank() == 1) || (transpose_rhs && tb.rank() != 2)) {
    shape_fail(Op::MatMul, ta.shape(), tb.shape());
  }
  MatView av = lhs_view(ta);
  MatView bv = rhs_view(tb);
  const std::size_t inner_b = transpose_rhs ? bv.cols : bv.rows;
  const std::size_t n_out = transpose_rhs ? bv.rows : bv.cols;
  if (av.cols != inner_b) shape_fail(Op::MatMul, ta.shape(), tb.shape());
  Shape out;
  if (ta.rank() == 1) out = {n_out};
  else if (tb.rank() == 1) out = {av.rows};
  else out = {av.rows, n_out};
  Node n(Op::MatMul, a.index, b.index);
  n.flag = transpose_rhs;
  n.value = Tensor(out);
  gemm(av, false, bv, transpose_rhs, n.value.data().data());
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Tensor& ta = val(a.index);
  const Tensor& tb = val(b.index);
  Node n(Op::Add, a.index, b.index);
  if (ta.shape() == tb.shape()) {
    n.value = ta;
    for (std::size_t i = 0; i < ta.size(); ++i) n.value[i] += tb[i];
  } else if (tb.size() == 1) {
    n.value = ta;
    for (double& x : n.value.data()) x += tb[0];
  } else if (ta.size() == 1) {
    n.value = tb;
    for (double& x : n.value.data()) x += ta[0];
  } else {
    shape_fail(Op::Add, ta.shape(), tb.shape());
  }
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& ta = val(a.index);
  const Tensor& tb = val(b.index);
  Node n(Op::Mul, a.index, b.index);
  if (ta.shape() == tb.shape()) {
    n.value = ta;
    for (std::size_t i = 0; i < ta.size(); ++i) n.value[i] *= tb[i];
  } else if (tb.size() == 1) {
    n.value = ta;
    for (double& x : n.value.data()) x *= tb[0];
  } else if (ta.size() == 1) {
    n.value = tb;
    for (double& x : n.value.data()) x *= ta[0];
  } else if (ta.rank() == 2 && tb.rank() == 1 && ta.shape()[1] == tb.size()) {
    n.value = ta;
    const std::size_t cols = tb.size();
    for (std::size_t i = 0; i < ta.size(); ++i) n.value[i] *= tb[i % cols];
  } else {
    shape_fail(Op::Mul, ta.shape(), tb.shape());
  }
  return push(std::move(n));
}

Var Tape::outer(Var a, Var b) {
  const Tensor& ta = val(a.index);
  const Tensor& tb = val(b.index);
  if (ta.rank() != 1 || tb.rank() != 1) shape_fail(Op::Outer, ta.shape(), tb.shape());
  Node n(Op::Outer, a.index, b.index);
  n.value = Tensor({ta.size(), tb.size()});
  for (std::size_t i = 0; i < ta.size(); ++i)
    for (std::size_t j = 0; j < tb.size(); ++j) n.value.at(i, j) = ta[i] * tb[j];
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  Node n(Op::Tanh, a.index);
  n.value = val(a.index);
  for (double& x : n.value.data()) x = std::tanh(x);
  return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
  Node n(Op::Sigmoid, a.index);
  n.value = val(a.index);
  for (double& x : n.value.data()) x = 1.0 / (1.0 + std::exp(-x));
  return push(std::move(n));
}

namespace {
void require_vector(Op op, const Tensor& t) {
  if (t.rank() != 1 || t.size() == 0) {
    throw ShapeError(std::string(op_name(op)) + ": expected non-empty vector, got " +
                     shape_string(t.shape()));
  }
}
}  // namespace

Var Tape::softmax(Var a) {
  const Tensor& ta = val(a.index);
  require_vector(Op::Softmax, ta);
  Node n(Op::Softmax, a.index);
  n.value = ta;
  const double mx = *std::max_element(ta.data().begin(), ta.data().end());
  double s = 0.0;
  for (double& x : n.value.data()) {
    x = std::exp(x - mx);
    s += x;
  }
  for (double& x : n.value.data()) x /= s;
  return push(std::move(n));
}

Var Tape::log_softmax(Var a) {
  const Tensor& ta = val(a.index);
  require_vector(Op::LogSoftmax, ta);
  Node n(Op::LogSoftmax, a.index);
  n.value = ta;
  const double mx = *std::max_element(ta.data().begin(), ta.data().end());
  double s = 0.0;
  for (double x : ta.data()) s += std::exp(x - mx);
  const double lse = mx + std::log(s);
  for (double& x : n.value.data()) x -= lse;
  return push(std::move(n));
}

Var Tape::log(Var a) {
  Node n(Op::Log, a.index);
  n.value = val(a.index);
  for (double& x : n.value.data()) x = std::log(x);
  return push(std::move(n));
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Node n(Op::Concat);
  std::vector<double> data;
  for (Var p : parts) {
    const Tensor& t = val(p.index);
    if (t.rank() > 1) throw ShapeError("concat: expected vectors or scalars, got " + shape_string(t.shape()));
    data.insert(data.end(), t.data().begin(), t.data().end());
    n.inputs.push_back(p.index);
  }
  n.value = Tensor::vector(std::move(data));
  return push(std::move(n));
}

Var Tape::slice(Var a, std::size_t offset, std::size_t length) {
  const Tensor& ta = val(a.index);
  if (ta.rank() != 1 || offset + length > ta.size() || length == 0) {
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " +
                     std::to_string(offset + length) + ") out of " + shape_string(ta.shape()));
  }
  Node n(Op::Slice, a.index);
  n.attr = offset;
  n.value = Tensor::vector(std::vector<double>(ta.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                               ta.data().begin() + static_cast<std::ptrdiff_t>(offset + length)));
  return push(std::move(n));
}

Var Tape::reshape(Var a, Shape shape) {
  const Tensor& ta = val(a.index);
  if (shape_size(shape) != ta.size()) shape_fail(Op::Reshape, ta.shape(), shape);
  Node n(Op::Reshape, a.index);
  n.value = Tensor(std::move(shape), ta.values());
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double x : val(a.index).data()) s += x;
  Node n(Op::Sum, a.index);
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  Node n(Op::Scale, a.index);
  n.scalar = factor;
  n.value = val(a.index);
  for (double& x : n.value.data()) x *= factor;
  return push(std::move(n));
}

Var Tape::normalize(Var a, double target_norm) {
  const Tensor& ta = val(a.index);
  const double norm = l2_norm(ta.data());
  if (!(norm >= 1e-12)) {
    throw NumericError("degenerate coefficients: norm " + std::to_string(norm) +
                       " is below 1e-12 and cannot be rescaled");
  }
  Node n(Op::Normalize, a.index);
  n.scalar = target_norm;
  n.value = ta;
  for (double& x : n.value.data()) x *= target_norm / norm;
  return push(std::move(n));
}

Var Tape::dropout(Var a, Tensor mask) {
  const Tensor& ta = val(a.index);
  if (mask.shape() != ta.shape()) shape_fail(Op::DropoutMask, ta.shape(), mask.shape());
  Node n(Op::DropoutMask, a.index);
  n.value = ta;
  for (std::size_t i = 0; i < ta.size(); ++i) n.value[i] *= mask[i];
  n.aux = std::move(mask);
  return push(std::move(n));
}

Var Tape::embed(Var table, std::vector<std::int32_t> ids, bool as_vector) {
  const Tensor& tt = val(table.index);
  if (tt.rank() != 2) throw ShapeError("embed: table must be a matrix, got " + shape_string(tt.shape()));
  if (as_vector && ids.size() != 1) throw ShapeError("embed: vector lookup needs exactly one id");
  const std::size_t cols = tt.shape()[1];
  Node n(Op::EmbedLookup, table.index);
  std::vector<double> data;
  data.reserve(ids.size() * cols);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= tt.shape()[0]) {
      throw ShapeError("embed: id " + std::to_string(id) + " outside table " + shape_string(tt.shape()));
    }
    auto row = tt.data().subspan(static_cast<std::size_t>(id) * cols, cols);
    data.insert(data.end(), row.begin(), row.end());
  }
  n.value = as_vector ? Tensor::vector(std::move(data)) : Tensor::matrix(ids.size(), cols, std::move(data));
  n.ids = std::move(ids);
  return push(std::move(n));
}

Var Tape::scatter(Var a, std::vector<std::int32_t> ids, std::size_t size) {
  const Tensor& ta = val(a.index);
  if (ta.rank() != 1 || ta.size() != ids.size()) {
    throw ShapeError("scatter: " + shape_string(ta.shape()) + " values for " + std::to_string(ids.size()) + " ids");
  }
  Node n(Op::Scatter, a.index);
  n.value = Tensor({size});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= size) {
      throw ShapeError("scatter: id " + std::to_string(ids[i]) + " outside [0, " + std::to_string(size) + ")");
    }
    n.value[static_cast<std::size_t>(ids[i])] += ta[i];
  }
  n.ids = std::move(ids);
  return push(std::move(n));
}

Var Tape::pick(Var a, std::size_t index) {
  const Tensor& ta = val(a.index);
  if (index >= ta.size()) {
    throw ShapeError("pick: index " + std::to_string(index) + " outside " + shape_string(ta.shape()));
  }
  Node n(Op::Pick, a.index);
  n.attr = index;
  n.value = Tensor::scalar(ta[index]);
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Backward sweep
// ---------------------------------------------------------------------------

Gradients Tape::backprop(Var loss, const ParameterSet& params) const {
  Gradients grads(params);
  backprop_into(loss, grads);
  return grads;
}

void Tape::backprop_into(Var loss, Gradients& out, double seed) const {
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ShapeError("backprop: loss must be a scalar, got " + shape_string(lv.shape()));

  std::vector<Tensor> grads(loss.index + 1);
  grads[loss.index] = Tensor(lv.shape(), {seed});

  for (std::uint32_t idx = loss.index + 1; idx-- > 0;) {
    if (grads[idx].size() == 0) continue;
    const Node& n = nodes_[idx];
    Tensor& g = grads[idx];
    if (precision_ == Precision::F32)
      for (double& x : g.data()) x = quantize(x, precision_);
    const Tensor& y = val(idx);

    switch (n.op) {
      case Op::Parameter: {
        Tensor& dst = out[n.param_id];
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        break;
      }
      case Op::Constant:
        break;
      case Op::MatMul: {
        const Tensor& a = val(n.lhs);
        const Tensor& b = val(n.rhs);
        MatView av = lhs_view(a);
        MatView bv = rhs_view(b);
        MatView gv{g.data().data(), av.rows, n.flag ? bv.rows : bv.cols};
        Tensor& ga = accum(grads, n.lhs, a.shape());
        Tensor& gb = accum(grads, n.rhs, b.shape());
        // dA = dC * op(B)ᵀ
        gemm(gv, false, bv, !n.flag, ga.data().data());
        // dB = Aᵀ dC, or dCᵀ A when B was used transposed
        if (n.flag) gemm(gv, true, av, false, gb.data().data());
        else gemm(av, true, gv, false, gb.data().data());
        break;
      }
      case Op::Add: {
        const Tensor& a = val(n.lhs);
        const Tensor& b = val(n.rhs);
        Tensor& ga = accum(grads, n.lhs, a.shape());
        if (a.shape() == g.shape()) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        else for (double x : g.data()) ga[0] += x;
        Tensor& gb = accum(grads, n.rhs, b.shape());
        if (b.shape() == g.shape()) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        else for (double x : g.data()) gb[0] += x;
        break;
      }
      case Op::Mul: {
        const Tensor& a = val(n.lhs);
        const Tensor& b = val(n.rhs);
        Tensor& ga = accum(grads, n.lhs, a.shape());
        Tensor& gb = accum(grads, n.rhs, b.shape());
        if (a.shape() == b.shape()) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * b[i];
            gb[i] += g[i] * a[i];
          }
        } else if (b.size() == 1) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * b[0];
            gb[0] += g[i] * a[i];
          }
        } else if (a.size() == 1) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            gb[i] += g[i] * a[0];
            ga[0] += g[i] * b[i];
          }
        } else {
          const std::size_t cols = b.size();
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * b[i % cols];
            gb[i % cols] += g[i] * a[i];
          }
        }
        break;
      }
      case Op::Outer: {
        const Tensor& a = val(n.lhs);
        const Tensor& b = val(n.rhs);
        Tensor& ga = accum(grads, n.lhs, a.shape());
        Tensor& gb = accum(grads, n.rhs, b.shape());
        for (std::size_t i = 0; i < a.size(); ++i)
          for (std::size_t j = 0; j < b.size(); ++j) {
            ga[i] += g.at(i, j) * b[j];
            gb[j] += g.at(i, j) * a[i];
          }
        break;
      }
      case Op::Tanh: {
        Tensor& ga = accum(grads, n.lhs, y.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::Sigmoid: {
        Tensor& ga = accum(grads, n.lhs, y.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::Softmax: {
        Tensor& ga = accum(grads, n.lhs, y.shape());
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - dot);
        break;
      }
      case Op::LogSoftmax: {
        Tensor& ga = accum(grads, n.lhs, y.shape());
        double total = 0.0;
        for (double x : g.data()) total += x;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] - std::exp(y[i]) * total;
        break;
      }
      case Op::Log: {
        const Tensor& a = val(n.lhs);
        Tensor& ga = accum(grads, n.lhs, a.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
        break;
      }
      case Op::Concat: {
        std::size_t offset = 0;
        for (auto in : n.inputs) {
          const Tensor& t = val(in);
          Tensor& gi = accum(grads, in, t.shape());
          for (std::size_t i = 0; i < t.size(); ++i) gi[i] += g[offset + i];
          offset += t.size();
        }
        break;
      }
      case Op::Slice: {
        const Tensor& a = val(n.lhs);
        Tensor& ga = accum(grads, n.lhs, a.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[n.attr + i] += g[i];
        break;
      }
      case Op::Reshape: {
        const Tensor& a = val(n.lhs);
        Tensor& ga = accum(grads, n.lhs, a.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        break;
      }
      case Op::Sum: {
        const Tensor& a = val(n.lhs);
        Tensor& ga = accum(grads, n.lhs, a.shape());
        for (double& x : ga.data()) x += g[0];
        break;
      }
      case Op::Scale: {
        Tensor& ga = accum(grads, n.lhs, y.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.scalar;
        break;
      }
      case Op::Normalize: {
        const Tensor& a = val(n.lhs);
        Tensor& ga = accum(grads, n.lhs, a.shape());
        const double norm = l2_norm(a.data());
        double a_dot_g = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) a_dot_g += a[i] * g[i];
        const double k = n.scalar / norm;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * (g[i] - a[i] * a_dot_g / (norm * norm));
        break;
      }
      case Op::DropoutMask: {
        Tensor& ga = accum(grads, n.lhs, y.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.aux[i];
        break;
      }
      case Op::EmbedLookup: {
        const Tensor& table = val(n.lhs);
        Tensor& gt = accum(grads, n.lhs, table.shape());
        const std::size_t cols = table.shape()[1];
        for (std::size_t r = 0; r < n.ids.size(); ++r) {
          double* dst = gt.data().data() + static_cast<std::size_t>(n.ids[r]) * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += g[r * cols + c];
        }
        break;
      }
      case Op::Scatter: {
        const Tensor& a = val(n.lhs);
        Tensor& ga = accum(grads, n.lhs, a.shape());
        for (std::size_t i = 0; i < n.ids.size(); ++i) ga[i] += g[static_cast<std::size_t>(n.ids[i])];
        break;
      }
      case Op::Pick: {
        const Tensor& a = val(n.lhs);
        Tensor& ga = accum(grads, n.lhs, a.shape());
        ga[n.attr] += g[0];
        break;
      }
    }
    grads[idx] = Tensor();  // release
  }
}

}  // namespace adadec
