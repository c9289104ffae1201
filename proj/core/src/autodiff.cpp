#include "rdrl/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "rdrl/errors.hpp"
#include "rdrl/mlp.hpp"

namespace rdrl::ad {

namespace {

void require(bool ok, const char* op, const char* what) {
  if (!ok) {
    std::ostringstream os;
    os << op << ": " << what;
    throw InvalidArgument(os.str());
  }
}

void same_graph(Var a, Var b, const char* op) {
  require(a.graph() != nullptr && a.graph() == b.graph(), op, "operands belong to different graphs");
}

void same_shape(Var a, Var b, const char* op) {
  same_graph(a, b, op);
  require(a.rows() == b.rows() && a.cols() == b.cols(), op, "shape mismatch");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

double huber(double u, double kappa) {
  const double a = std::abs(u);
  return a <= kappa ? 0.5 * u * u : kappa * (a - 0.5 * kappa);
}

double huber_derivative(double u, double kappa) { return std::clamp(u, -kappa, kappa); }

const Matrix& Var::value() const { return graph_->value(*this); }
const Matrix& Var::grad() const { return graph_->grad(*this); }

const Matrix& Graph::value(Var v) const { return nodes_[v.id()].val(); }

const Matrix& Graph::grad(Var v) const {
  static const Matrix kEmpty;
  return nodes_[v.id()].grad.size() ? nodes_[v.id()].grad : kEmpty;
}

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::append(NodeInit init) {
  Node n;
  n.op = init.op;
  for (Var p : init.parents) {
    require(p.graph() == this, "graph", "parent from another graph");
    n.parents[n.n_parents++] = p.id();
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  n.value = std::move(init.value);
  n.s0 = init.s0;
  n.s1 = init.s1;
  n.indices = std::move(init.indices);
  n.aux = std::move(init.aux);
  return push(std::move(n));
}

Var Graph::constant(Matrix value) {
  Node n;
  n.op = OpKind::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::leaf(Matrix value) {
  Node n;
  n.op = OpKind::Leaf;
  n.requires_grad = true;
  n.value = std::move(value);
  return push(std::move(n));
}

std::vector<Var> Graph::bind(const ParamSet& params, bool trainable) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Node n;
    n.op = trainable ? OpKind::Leaf : OpKind::Constant;
    n.requires_grad = trainable;
    n.external = &params[i];
    n.owner = trainable ? &params : nullptr;
    n.slot = i;
    out.push_back(push(std::move(n)));
  }
  return out;
}

template <class Expr>
void Graph::accumulate(std::size_t id, const Expr& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Graph::backward(Var output) {
  require(output.graph() == this, "backward", "output from another graph");
  const Matrix& out = value(output);
  require(out.rows() == 1 && out.cols() == 1, "backward", "gradients require a scalar (1x1) output");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[output.id()].requires_grad) return;
  nodes_[output.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.n_parents == 0 || n.grad.size() == 0 || !n.requires_grad) continue;
    backprop(i);
  }
}

std::vector<Matrix> Graph::gradients(Var output, const ParamSet& params) {
  backward(output);
  return collect(params);
}

std::vector<Matrix> Graph::collect(const ParamSet& params) const {
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads.push_back(Matrix::Zero(params[i].rows(), params[i].cols()));
  }
  for (const Node& n : nodes_) {
    if (n.owner == &params && n.grad.size() != 0) grads[n.slot] += n.grad;
  }
  return grads;
}

void Graph::backprop(std::size_t id) {
  // accumulate() only writes parent grads and never resizes the tape.
  const Node& n = nodes_[id];
  const Matrix& g = n.grad;
  const std::size_t p0 = n.parents[0], p1 = n.parents[1], p2 = n.parents[2];
  auto pv = [&](std::size_t p) -> const Matrix& { return nodes_[p].val(); };

  switch (n.op) {
    case OpKind::Constant:
    case OpKind::Leaf:
      break;
    case OpKind::Linear:
      if (nodes_[p0].requires_grad) accumulate(p0, g * pv(p1).transpose());
      if (nodes_[p1].requires_grad) accumulate(p1, pv(p0).transpose() * g);
      if (nodes_[p2].requires_grad) accumulate(p2, g.colwise().sum());
      break;
    case OpKind::MatMul:
      if (nodes_[p0].requires_grad) accumulate(p0, g * pv(p1).transpose());
      if (nodes_[p1].requires_grad) accumulate(p1, pv(p0).transpose() * g);
      break;
    case OpKind::AddRowBroadcast:
      accumulate(p0, g);
      if (nodes_[p1].requires_grad) accumulate(p1, g.colwise().sum());
      break;
    case OpKind::Add:
      accumulate(p0, g);
      accumulate(p1, g);
      break;
    case OpKind::Sub:
      accumulate(p0, g);
      if (nodes_[p1].requires_grad) accumulate(p1, -g);
      break;
    case OpKind::Mul:
      if (nodes_[p0].requires_grad) accumulate(p0, g.cwiseProduct(pv(p1)));
      if (nodes_[p1].requires_grad) accumulate(p1, g.cwiseProduct(pv(p0)));
      break;
    case OpKind::Scale:
      accumulate(p0, n.s0 * g);
      break;
    case OpKind::AddScalar:
      accumulate(p0, g);
      break;
    case OpKind::Relu:
      accumulate(p0, g.cwiseProduct(
                         (pv(p0).array() > 0.0).cast<double>().matrix()));
      break;
    case OpKind::Tanh:
      accumulate(p0, (g.array() * (1.0 - n.value.array().square())).matrix());
      break;
    case OpKind::Exp:
      accumulate(p0, g.cwiseProduct(n.value));
      break;
    case OpKind::Log:
      accumulate(p0, g.cwiseQuotient(pv(p0)));
      break;
    case OpKind::Softplus:
      accumulate(p0, (g.array() * pv(p0).array().unaryExpr(&sigmoid)).matrix());
      break;
    case OpKind::Square:
      accumulate(p0, (2.0 * g.array() * pv(p0).array()).matrix());
      break;
    case OpKind::Sqrt:
      accumulate(p0, (g.array() * (n.value.array() > 0.0)
                                      .select(0.5 / n.value.array(), 0.0))
                         .matrix());
      break;
    case OpKind::Clamp: {
      const auto x = pv(p0).array();
      accumulate(p0, (g.array() * ((x > n.s0) && (x < n.s1)).cast<double>()).matrix());
      break;
    }
    case OpKind::Sum:
      accumulate(p0, Matrix::Constant(pv(p0).rows(), pv(p0).cols(), g(0, 0)));
      break;
    case OpKind::Mean: {
      const auto& x = pv(p0);
      accumulate(p0, Matrix::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
      break;
    }
    case OpKind::RowSum: {
      const auto& x = pv(p0);
      accumulate(p0, g.replicate(1, x.cols()));
      break;
    }
    case OpKind::RowMean: {
      const auto& x = pv(p0);
      accumulate(p0, (g / static_cast<double>(x.cols())).replicate(1, x.cols()));
      break;
    }
    case OpKind::RowStd: {
      // aux holds the centred input; s0 the denominator.
      Matrix d = n.aux;
      for (Eigen::Index r = 0; r < d.rows(); ++r) {
        const double y = n.value(r, 0);
        const double coef = y > 0.0 ? g(r, 0) / (n.s0 * y) : 0.0;
        d.row(r) *= coef;
      }
      accumulate(p0, d);
      break;
    }
    case OpKind::ConcatCols: {
      const Eigen::Index ca = pv(p0).cols(), cb = pv(p1).cols();
      if (nodes_[p0].requires_grad) accumulate(p0, g.leftCols(ca));
      if (nodes_[p1].requires_grad) accumulate(p1, g.rightCols(cb));
      break;
    }
    case OpKind::SliceCols: {
      const auto& x = pv(p0);
      Matrix full = Matrix::Zero(x.rows(), x.cols());
      full.middleCols(static_cast<Eigen::Index>(n.s0), g.cols()) = g;
      accumulate(p0, full);
      break;
    }
    case OpKind::GatherBlocks: {
      const auto& x = pv(p0);
      const Eigen::Index block = g.cols();
      Matrix full = Matrix::Zero(x.rows(), x.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        full.row(r).segment(static_cast<Eigen::Index>(n.indices[r]) * block, block) = g.row(r);
      }
      accumulate(p0, full);
      break;
    }
    case OpKind::GaussianLogDensity: {
      // aux holds z / sigma = (x - mean) / sigma^2; per-element z^2 is rebuilt.
      const auto& x = pv(p0);
      const auto& mu = pv(p1);
      const Matrix gb = g.replicate(1, x.cols());
      const Matrix zs = n.aux;
      if (nodes_[p0].requires_grad) accumulate(p0, -(gb.array() * zs.array()).matrix());
      if (nodes_[p1].requires_grad) accumulate(p1, (gb.array() * zs.array()).matrix());
      if (nodes_[p2].requires_grad) {
        const Matrix z2 = ((x - mu).array() * zs.array()).matrix();  // ((x-mu)/sigma)^2
        accumulate(p2, (gb.array() * (z2.array() - 1.0)).matrix());
      }
      break;
    }
    case OpKind::QuantileHuber:
      accumulate(p0, g(0, 0) * n.aux);
      break;
  }
}

// ---- op functions ---------------------------------------------------------

Var linear(Var x, Var w, Var b) {
  same_graph(x, w, "linear");
  same_graph(x, b, "linear");
  require(x.cols() == w.rows(), "linear", "input width does not match weight rows");
  require(b.rows() == 1 && b.cols() == w.cols(), "linear", "bias must be 1 x fan_out");
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return x.graph()->append({OpKind::Linear, {x, w, b}, std::move(out)});
}

Var matmul(Var a, Var b) {
  same_graph(a, b, "matmul");
  require(a.cols() == b.rows(), "matmul", "inner dimensions differ");
  return a.graph()->append({OpKind::MatMul, {a, b}, a.value() * b.value()});
}

Var add_row_broadcast(Var a, Var b) {
  same_graph(a, b, "add_row_broadcast");
  require(b.rows() == 1 && b.cols() == a.cols(), "add_row_broadcast", "expects a 1 x cols row");
  Matrix out = a.value();
  out.rowwise() += b.value().row(0);
  return a.graph()->append({OpKind::AddRowBroadcast, {a, b}, std::move(out)});
}

Var operator+(Var a, Var b) {
  same_shape(a, b, "add");
  return a.graph()->append({OpKind::Add, {a, b}, a.value() + b.value()});
}

Var operator-(Var a, Var b) {
  same_shape(a, b, "sub");
  return a.graph()->append({OpKind::Sub, {a, b}, a.value() - b.value()});
}

Var operator*(Var a, Var b) {
  same_shape(a, b, "mul");
  return a.graph()->append({OpKind::Mul, {a, b}, a.value().cwiseProduct(b.value())});
}

Var scale(Var a, double s) {
  return a.graph()->append({OpKind::Scale, {a}, s * a.value(), s});
}

Var add_scalar(Var a, double s) {
  return a.graph()->append({OpKind::AddScalar, {a}, (a.value().array() + s).matrix(), s});
}

Var relu(Var a) {
  return a.graph()->append({OpKind::Relu, {a}, a.value().cwiseMax(0.0)});
}

Var tanh(Var a) {
  return a.graph()->append({OpKind::Tanh, {a}, a.value().array().tanh().matrix()});
}

Var exp(Var a) {
  return a.graph()->append({OpKind::Exp, {a}, a.value().array().exp().matrix()});
}

Var log(Var a) {
  return a.graph()->append({OpKind::Log, {a}, a.value().array().log().matrix()});
}

Var softplus(Var a) {
  return a.graph()->append(
      {OpKind::Softplus, {a}, a.value().array().unaryExpr(&softplus_scalar).matrix()});
}

Var square(Var a) {
  return a.graph()->append({OpKind::Square, {a}, a.value().array().square().matrix()});
}

Var sqrt(Var a) {
  return a.graph()->append({OpKind::Sqrt, {a}, a.value().array().sqrt().matrix()});
}

Var clamp(Var a, double lo, double hi) {
  require(lo <= hi, "clamp", "lo must not exceed hi");
  return a.graph()->append(
      {OpKind::Clamp, {a}, a.value().cwiseMax(lo).cwiseMin(hi), lo, hi});
}

Var sum(Var a) {
  return a.graph()->append({OpKind::Sum, {a}, Matrix::Constant(1, 1, a.value().sum())});
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean", "empty input");
  return a.graph()->append({OpKind::Mean, {a}, Matrix::Constant(1, 1, a.value().mean())});
}

Var row_sum(Var a) {
  return a.graph()->append({OpKind::RowSum, {a}, a.value().rowwise().sum()});
}

Var row_mean(Var a) {
  require(a.cols() > 0, "row_mean", "empty rows");
  return a.graph()->append({OpKind::RowMean, {a}, a.value().rowwise().mean()});
}

Var row_std(Var a, bool normalize) {
  require(a.cols() > 0, "row_std", "empty rows");
  const Matrix& x = a.value();
  Matrix centred = x.colwise() - x.rowwise().mean();
  const double denom = normalize ? static_cast<double>(x.cols()) : 1.0;
  Matrix out = (centred.rowwise().squaredNorm() / denom).array().sqrt().matrix();
  return a.graph()->append({OpKind::RowStd, {a}, std::move(out), denom, 0.0, {}, std::move(centred)});
}

Var concat_cols(Var a, Var b) {
  same_graph(a, b, "concat_cols");
  require(a.rows() == b.rows(), "concat_cols", "row counts differ");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  return a.graph()->append({OpKind::ConcatCols, {a, b}, std::move(out)});
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols", "range out of bounds");
  return a.graph()->append(
      {OpKind::SliceCols, {a}, a.value().middleCols(start, count), static_cast<double>(start)});
}

Var gather_blocks(Var a, std::span<const std::size_t> idx, Eigen::Index block) {
  require(static_cast<Eigen::Index>(idx.size()) == a.rows(), "gather_blocks", "one index per row required");
  require(block > 0 && a.cols() % block == 0, "gather_blocks", "column count must be a multiple of block");
  const Matrix& x = a.value();
  Matrix out(x.rows(), block);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto i = static_cast<Eigen::Index>(idx[r]);
    require((i + 1) * block <= x.cols(), "gather_blocks", "index out of range");
    out.row(r) = x.row(r).segment(i * block, block);
  }
  return a.graph()->append({OpKind::GatherBlocks, {a}, std::move(out), 0.0, 0.0,
                            std::vector<std::size_t>(idx.begin(), idx.end())});
}

Var gaussian_log_density(Var x, Var mu, Var log_std) {
  same_shape(x, mu, "gaussian_log_density");
  same_shape(x, log_std, "gaussian_log_density");
  const auto inv_var = (-2.0 * log_std.value().array()).exp();
  const Matrix diff = x.value() - mu.value();
  Matrix zs = (diff.array() * inv_var).matrix();
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Matrix per = (-0.5 * diff.array() * zs.array() - log_std.value().array() - half_log_2pi).matrix();
  Matrix out = per.rowwise().sum();
  return x.graph()->append(
      {OpKind::GaussianLogDensity, {x, mu, log_std}, std::move(out), 0.0, 0.0, {}, std::move(zs)});
}

Var quantile_huber(Var pred, const Matrix& targets, double kappa) {
  require(kappa > 0.0, "quantile_huber", "kappa must be positive");
  require(targets.cols() >= 1, "quantile_huber", "empty target list");
  require(targets.rows() == pred.rows(), "quantile_huber", "batch sizes differ");
  const Matrix& theta = pred.value();
  const Eigen::Index n = theta.rows(), m = theta.cols(), k = targets.cols();
  const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(m) * static_cast<double>(k));
  Matrix grad(n, m);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double tau = (2.0 * static_cast<double>(j) + 1.0) / (2.0 * static_cast<double>(m));
      const double t = theta(r, j);
      double gsum = 0.0;
      for (Eigen::Index i = 0; i < k; ++i) {
        const double u = targets(r, i) - t;
        const double w = u < 0.0 ? 1.0 - tau : tau;
        loss += w * huber(u, kappa);
        gsum -= w * huber_derivative(u, kappa);
      }
      grad(r, j) = gsum * norm;
    }
  }
  return pred.graph()->append({OpKind::QuantileHuber, {pred}, Matrix::Constant(1, 1, loss * norm),
                               kappa, 0.0, {}, std::move(grad)});
}

}  // namespace rdrl::ad
