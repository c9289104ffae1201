#pragma once

// Tensor-level reverse-mode differentiation.
//
// A Graph is an append-only tape of matrix-valued nodes. Every node records
// its op kind, parent indices and cached value; parents always precede
// children, so backward() is a single reverse sweep over the tape.

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace rdrl::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ParamSet;

enum class OpKind : std::uint8_t {
  Constant,
  Leaf,
  Linear,
  MatMul,
  AddRowBroadcast,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Relu,
  Tanh,
  Exp,
  Log,
  Softplus,
  Square,
  Sqrt,
  Clamp,
  Sum,
  Mean,
  RowSum,
  RowMean,
  RowStd,
  ConcatCols,
  SliceCols,
  GatherBlocks,
  GaussianLogDensity,
  QuantileHuber,
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  Graph() { nodes_.reserve(64); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Value that never receives gradient.
  Var constant(Matrix value);
  /// Free leaf that receives gradient (used by gradient checks).
  Var leaf(Matrix value);
  /// Leaves referencing the tensors of `params` without copying them. The
  /// ParamSet must outlive the graph. With `trainable = false` the tensors
  /// enter as constants (no gradient is computed for them).
  std::vector<Var> bind(const ParamSet& params, bool trainable = true);

  /// Reverse sweep from a 1x1 output. Throws InvalidArgument otherwise.
  void backward(Var output);

  /// backward(output), then the gradient of every tensor of `params`,
  /// summed over all of its bindings in this graph. Unbound tensors get zeros.
  std::vector<Matrix> gradients(Var output, const ParamSet& params);

  /// Gradients of `params` from the most recent backward() sweep.
  std::vector<Matrix> collect(const ParamSet& params) const;

  /// Low-level node construction used by the op functions below.
  struct NodeInit {
    OpKind op;
    std::initializer_list<Var> parents;
    Matrix value;
    double s0 = 0.0;
    double s1 = 0.0;
    std::vector<std::size_t> indices = {};
    Matrix aux = {};
  };
  Var append(NodeInit init);

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(Var v) const { return nodes_[v.id()].op; }
  const Matrix& value(Var v) const;
  const Matrix& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

 private:
  struct Node {
    OpKind op = OpKind::Constant;
    std::array<std::size_t, 3> parents{};
    std::uint8_t n_parents = 0;
    bool requires_grad = false;
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;  // allocated on first accumulation
    double s0 = 0.0, s1 = 0.0;
    std::vector<std::size_t> indices;
    Matrix aux;
    const ParamSet* owner = nullptr;
    std::size_t slot = 0;

    const Matrix& val() const { return external ? *external : value; }
  };

  Var push(Node node);
  template <class Expr>
  void accumulate(std::size_t id, const Expr& g);
  void backprop(std::size_t id);

  std::vector<Node> nodes_;
};

/// x W + b, with b broadcast over rows.
Var linear(Var x, Var w, Var b);
Var matmul(Var a, Var b);
/// a (n x m) + b (1 x m) broadcast over rows.
Var add_row_broadcast(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
/// Elementwise product.
Var operator*(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator+(Var a, double s) { return add_scalar(a, s); }

Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
/// log(1 + e^x), computed stably.
Var softplus(Var a);
Var square(Var a);
Var sqrt(Var a);
/// Gradient passes only where lo < x < hi.
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);
Var row_mean(Var a);
/// Per-row population standard deviation; divides by the column count when
/// `normalize` is set, otherwise uses the raw sum of squares. The gradient
/// at zero deviation is taken as zero.
Var row_std(Var a, bool normalize);

Var concat_cols(Var a, Var b);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
/// Row i of the result is columns [idx[i]*block, (idx[i]+1)*block) of a.
Var gather_blocks(Var a, std::span<const std::size_t> idx, Eigen::Index block);

/// Per-row log N(x; mean, exp(log_std)^2) summed over columns -> (n x 1).
Var gaussian_log_density(Var x, Var mean, Var log_std);

/// Batch mean of the quantile Huber loss between predicted atoms (n x M,
/// fractions (2j-1)/(2M)) and target samples (n x K, no gradient):
///   1/(n M K) sum_r sum_j sum_i |tau_j - 1{y_ri < theta_rj}| huber(y_ri - theta_rj, kappa)
Var quantile_huber(Var pred, const Matrix& targets, double kappa);

/// Classic Huber loss: u^2/2 for |u| <= kappa, kappa (|u| - kappa/2) otherwise.
double huber(double u, double kappa);
/// d huber / du = clamp(u, -kappa, kappa).
double huber_derivative(double u, double kappa);

}  // namespace rdrl::ad
