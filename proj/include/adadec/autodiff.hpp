#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adadec/tensor.hpp"

namespace adadec {

/// Named, ordered collection of trainable tensors.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor init);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t id) const { return names_[id]; }
  const Tensor& value(std::size_t id) const { return values_[id]; }
  Tensor& value(std::size_t id) { return values_[id]; }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t id(std::string_view name) const;

  std::size_t scalar_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradient buffers aligned with a ParameterSet, zero-initialised.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet& params);

  std::size_t size() const { return grads_.size(); }
  Tensor& operator[](std::size_t id) { return grads_[id]; }
  const Tensor& operator[](std::size_t id) const { return grads_[id]; }

  double global_norm() const;
  void scale(double factor);
  void add(const Gradients& other);

 private:
  std::vector<Tensor> grads_;
};

enum class Op : std::uint8_t {
  Parameter,
  Constant,
  MatMul,
  Add,
  Mul,
  Outer,
  Tanh,
  Sigmoid,
  Softmax,
  LogSoftmax,
  Log,
  Concat,
  Slice,
  Reshape,
  Sum,
  Scale,
  Normalize,
  DropoutMask,
  EmbedLookup,
  Scatter,
  Pick,
};

const char* op_name(Op op);

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t index = 0;
};

/// Reverse-mode computation record over a fixed primitive set.
///
/// Every primitive call computes its forward value eagerly and appends one
/// node. Nodes are appended in evaluation order, so the record is always
/// topologically sorted and backprop is a single reverse sweep.
class Tape {
 public:
  explicit Tape(Precision precision = Precision::F64) : precision_(precision) {}

  Precision precision() const { return precision_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Leaf bound to parameter `id`; repeated calls return the same node.
  Var param(const ParameterSet& params, std::size_t id);
  Var param(const ParameterSet& params, std::string_view name) {
    return param(params, params.id(name));
  }
  Var constant(Tensor value);

  /// 2-D x 2-D, 2-D x 1-D (matrix-vector), 1-D x 2-D (vector-matrix).
  /// With `transpose_rhs` the right operand must be 2-D and is used as Bᵀ.
  Var matmul(Var a, Var b, bool transpose_rhs = false);
  /// Same shapes, or one operand holding a single element.
  Var add(Var a, Var b);
  /// Same shapes, a single-element operand, or [m x n] times [n] (column scaling).
  Var mul(Var a, Var b);
  Var outer(Var a, Var b);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var softmax(Var a);
  Var log_softmax(Var a);
  Var log(Var a);
  Var concat(std::span<const Var> parts);
  Var concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
  }
  Var slice(Var a, std::size_t offset, std::size_t length);
  Var reshape(Var a, Shape shape);
  Var sum(Var a);
  Var scale(Var a, double factor);
  /// a * (target_norm / ||a||); throws NumericError when ||a|| < 1e-12.
  Var normalize(Var a, double target_norm);
  /// Elementwise product with a fixed mask (already carrying inverted scaling).
  Var dropout(Var a, Tensor mask);
  /// Rows of `table` selected by `ids`: [n x cols] matrix, or [cols] for one id
  /// when `as_vector` is set.
  Var embed(Var table, std::vector<std::int32_t> ids, bool as_vector = false);
  /// out[ids[i]] += a[i] over an output of length `size`.
  Var scatter(Var a, std::vector<std::int32_t> ids, std::size_t size);
  Var pick(Var a, std::size_t index);

  const Tensor& value(Var v) const;
  Op op(Var v) const { return nodes_[v.index].op; }

  /// Gradient of scalar `loss` with respect to every parameter leaf.
  Gradients backprop(Var loss, const ParameterSet& params) const;
  /// Accumulates seed * d(loss)/d(param) into `grads`.
  void backprop_into(Var loss, Gradients& grads, double seed = 1.0) const;

 private:
  struct Node {
    explicit Node(Op o, std::uint32_t l = 0, std::uint32_t r = 0) : op(o), lhs(l), rhs(r) {}
    Op op;
    std::uint32_t lhs = 0;
    std::uint32_t rhs = 0;
    Tensor value;
    const Tensor* external = nullptr;  // parameter leaves point at live storage
    std::size_t param_id = 0;
    std::size_t attr = 0;              // slice offset, pick index, ...
    double scalar = 0.0;               // scale factor, target norm, ...
    bool flag = false;                 // matmul transpose
    std::vector<std::uint32_t> inputs; // concat
    std::vector<std::int32_t> ids;     // embed/scatter
    Tensor aux;                        // dropout mask
  };

  Var push(Node node);
  const Tensor& val(std::uint32_t i) const;
  void finish(Tensor& t, Op op) const;

  Precision precision_;
  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, std::uint32_t> param_nodes_;
};

}  // namespace adadec
