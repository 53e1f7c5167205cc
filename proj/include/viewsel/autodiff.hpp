#pragma once

// Dense reverse-mode differentiation for the fusion model. Tensors are rank 0-2
// (row-major); a Graph records each forward op with its backward closure and
// replays them in exact reverse order.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "viewsel/random.hpp"

namespace viewsel::ad {

template <class Real>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, Real fill = Real(0));
  Tensor(std::vector<std::size_t> shape, std::vector<Real> data);
  Tensor(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : Tensor(std::vector<std::size_t>{rows, cols}, fill) {}

  static Tensor scalar(Real value) { return Tensor({1, 1}, std::vector<Real>{value}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  /// Length of the last axis (1 for rank 0).
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const Real& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  std::vector<Real>& storage() { return data_; }

  void fill(Real value);
  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

enum class ParamGroup { fusion, head };

template <class Real>
struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::fusion;
  Tensor<Real> value;
  Tensor<Real> grad;

  Parameter() = default;
  Parameter(std::string n, ParamGroup g, Tensor<Real> v)
      : name(std::move(n)), group(g), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(Real(0)); }
};

/// Handle to a node of a Graph.
struct Var {
  std::size_t id = 0;
};

template <class Real>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor<Real> value);
  /// Leaf bound to a parameter; backward() adds into param.grad.
  Var param(Parameter<Real>& p);

  const Tensor<Real>& value(Var v) const { return nodes_[v.id].value; }
  const Tensor<Real>& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  // (n x k) . (k x m)
  Var matmul(Var a, Var b);
  // (n x k) . (m x k)^T
  Var matmul_nt(Var a, Var b);
  /// Elementwise sum; b may also be a single row broadcast over a's rows.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// Elementwise product; b may be a single row broadcast over a's rows.
  Var mul(Var a, Var b);
  Var scale(Var a, Real s);
  /// Normalizes each row to zero mean and unit variance; no affine part.
  Var layer_norm(Var x, Real eps);
  /// axis 1: per row (last axis); axis 0: per column.
  Var softmax(Var x, int axis = 1);
  /// x for x > 0, slope * x otherwise; slope is one value per column.
  Var prelu(Var x, Var slope);
  Var gelu(Var x);
  /// Inverted dropout. Returns x unchanged when !train or rate == 0.
  Var dropout(Var x, Real rate, bool train, Rng& rng);
  /// axis 0 averages over rows (-> 1 x cols); axis 1 over columns (-> rows x 1).
  Var mean(Var x, int axis);
  Var sum(Var x);
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var x, std::size_t begin, std::size_t end);
  Var gather_rows(Var table, std::span<const std::size_t> rows);
  /// mean |pred - target| / mean (pred - target)^2 as a 1x1 scalar.
  Var l1_loss(Var pred, Var target);
  Var l2_loss(Var pred, Var target);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward in reverse.
  void backward(Var loss);

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    std::function<void(Graph&, Var self)> backward;
    Parameter<Real>* param = nullptr;
  };

  Var push(Tensor<Real> value, std::function<void(Graph&, Var)> backward, const char* op);
  Tensor<Real>& g(Var v) { return nodes_[v.id].grad; }
  const Tensor<Real>& val(Var v) const { return nodes_[v.id].value; }

  std::vector<Node> nodes_;
};

/// Builds a fresh graph over the given parameters and returns a scalar loss.
template <class Real>
using LossClosure = std::function<Var(Graph<Real>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Central-difference check of every parameter element. Relative error is
/// |a - n| / max(1, |a|, |n|). Throws DeterminismError if two evaluations at
/// the same point disagree.
GradCheckResult grad_check(const LossClosure<double>& loss,
                           std::span<Parameter<double>* const> params, double eps = 1e-5);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace viewsel::ad
