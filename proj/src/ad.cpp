#include "virso/ad.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <unordered_set>

#include "virso/error.hpp"

namespace virso::ad {

namespace {

using Index = Eigen::Index;

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw Error(ErrorKind::kShapeMismatch,
              std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

thread_local bool g_grad_enabled = true;

Value make(Matrix data, std::vector<std::shared_ptr<Node>> parents,
           std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->data = std::move(data);
  node->shape = {node->data.rows(), node->data.cols()};
  node->is_leaf = false;
  node->requires_grad = g_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                      [](const auto& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Value(std::move(node));
}

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

void Node::accumulate(Matrix&& g) {
  if (grad.size() == 0) {
    grad = std::move(g);
  } else {
    grad += g;
  }
}

IndexList make_indices(std::vector<std::uint32_t> indices) {
  return std::make_shared<const std::vector<std::uint32_t>>(std::move(indices));
}

double Value::item() const {
  if (node_->data.size() != 1) throw Error(ErrorKind::kInvalidUsage, "item() on a non-scalar value");
  return node_->data(0, 0);
}

Value constant(Matrix data) {
  auto node = std::make_shared<Node>();
  node->data = std::move(data);
  node->shape = {node->data.rows(), node->data.cols()};
  return Value(std::move(node));
}

Value parameter(Matrix data, std::string name) {
  auto node = std::make_shared<Node>();
  node->data = std::move(data);
  node->shape = {node->data.rows(), node->data.cols()};
  node->requires_grad = true;
  node->name = std::move(name);
  return Value(std::move(node));
}

Value parameter3(Matrix data, Index s0, Index s1, Index s2, std::string name) {
  if (data.rows() != s0 * s1 || data.cols() != s2) {
    throw Error(ErrorKind::kShapeMismatch, "parameter3: storage does not match logical shape");
  }
  Value v = parameter(std::move(data), std::move(name));
  v.node().shape = {s0, s1, s2};
  return v;
}

// ---------------------------------------------------------------------------

Value matmul(const Value& a, const Value& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.data(), b.data());
  Matrix out = a.data() * b.data();
  return make(std::move(out), {a.ptr(), b.ptr()}, [](Node& self) {
    const Matrix& a = self.parents[0]->data;
    const Matrix& b = self.parents[1]->data;
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad * b.transpose());
    if (wants(self, 1)) self.parents[1]->accumulate(a.transpose() * self.grad);
  });
}

Value linear(const Value& x, const Value& w, const Value& b) {
  if (x.cols() != w.rows()) shape_error("linear", x.data(), w.data());
  Matrix out = x.data() * w.data();
  std::vector<std::shared_ptr<Node>> parents{x.ptr(), w.ptr()};
  if (b.defined()) {
    if (b.rows() != 1 || b.cols() != w.cols()) shape_error("linear bias", w.data(), b.data());
    out.rowwise() += b.data().row(0);
    parents.push_back(b.ptr());
  }
  return make(std::move(out), std::move(parents), [](Node& self) {
    const Matrix& x = self.parents[0]->data;
    const Matrix& w = self.parents[1]->data;
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad * w.transpose());
    if (wants(self, 1)) self.parents[1]->accumulate(x.transpose() * self.grad);
    if (self.parents.size() > 2 && wants(self, 2)) {
      self.parents[2]->accumulate(self.grad.colwise().sum());
    }
  });
}

Value add(const Value& a, const Value& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a.data(), b.data());
  return make(a.data() + b.data(), {a.ptr(), b.ptr()}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

Value sub(const Value& a, const Value& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a.data(), b.data());
  return make(a.data() - b.data(), {a.ptr(), b.ptr()}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(-self.grad);
  });
}

Value scalar_mul(const Value& a, double s) {
  return make(a.data() * s, {a.ptr()}, [s](Node& self) {
    self.parents[0]->accumulate(self.grad * s);
  });
}

Value elementwise_mul(const Value& a, const Value& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("elementwise_mul", a.data(), b.data());
  return make(a.data().cwiseProduct(b.data()), {a.ptr(), b.ptr()}, [](Node& self) {
    const Matrix& a = self.parents[0]->data;
    const Matrix& b = self.parents[1]->data;
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad.cwiseProduct(b));
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.cwiseProduct(a));
  });
}

Value concat_cols(const Value& a, const Value& b) {
  if (a.rows() != b.rows()) shape_error("concat_cols", a.data(), b.data());
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.data(), b.data();
  const Index ca = a.cols();
  const Index cb = b.cols();
  return make(std::move(out), {a.ptr(), b.ptr()}, [ca, cb](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad.leftCols(ca));
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.rightCols(cb));
  });
}

Value slice_cols(const Value& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "slice_cols: range outside " + shape_str(a.data()));
  }
  Matrix out = a.data().middleCols(start, count);
  return make(std::move(out), {a.ptr()}, [start, count](Node& self) {
    Matrix g = Matrix::Zero(self.parents[0]->data.rows(), self.parents[0]->data.cols());
    g.middleCols(start, count) = self.grad;
    self.parents[0]->accumulate(std::move(g));
  });
}

Value gather_rows(const Value& v, const IndexList& indices) {
  const auto& idx = *indices;
  Matrix out(static_cast<Index>(idx.size()), v.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= v.rows()) throw Error(ErrorKind::kShapeMismatch, "gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = v.data().row(idx[i]);
  }
  return make(std::move(out), {v.ptr()}, [indices](Node& self) {
    const auto& idx = *indices;
    Matrix g = Matrix::Zero(self.parents[0]->data.rows(), self.parents[0]->data.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    self.parents[0]->accumulate(std::move(g));
  });
}

Value scatter_add_rows(const Value& contributions, const IndexList& targets, Index n) {
  const auto& idx = *targets;
  if (static_cast<Index>(idx.size()) != contributions.rows()) {
    throw Error(ErrorKind::kShapeMismatch, "scatter_add_rows: one target per contribution row");
  }
  Matrix out = Matrix::Zero(n, contributions.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw Error(ErrorKind::kShapeMismatch, "scatter_add_rows: target out of range");
    out.row(idx[i]) += contributions.data().row(static_cast<Index>(i));
  }
  return make(std::move(out), {contributions.ptr()}, [targets](Node& self) {
    const auto& idx = *targets;
    Matrix g(static_cast<Index>(idx.size()), self.grad.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(static_cast<Index>(i)) = self.grad.row(idx[i]);
    self.parents[0]->accumulate(std::move(g));
  });
}

Value scale_rows(const Value& a, const Value& s) {
  if (s.cols() != 1 || s.rows() != a.rows()) shape_error("scale_rows", a.data(), s.data());
  Matrix out = a.data();
  for (Index r = 0; r < out.rows(); ++r) out.row(r) *= s.data()(r, 0);
  return make(std::move(out), {a.ptr(), s.ptr()}, [](Node& self) {
    const Matrix& a = self.parents[0]->data;
    const Matrix& s = self.parents[1]->data;
    if (wants(self, 0)) {
      Matrix g = self.grad;
      for (Index r = 0; r < g.rows(); ++r) g.row(r) *= s(r, 0);
      self.parents[0]->accumulate(std::move(g));
    }
    if (wants(self, 1)) {
      self.parents[1]->accumulate(Matrix(a.cwiseProduct(self.grad).rowwise().sum()));
    }
  });
}

Value gated_aggregate(const Value& v, const Value& gate, const IndexList& source, const IndexList& target,
                      const IndexList& gate_index, Index n) {
  const auto& src = *source;
  const auto& dst = *target;
  const bool direct = !gate_index || gate_index->empty();
  if (src.size() != dst.size() || (!direct && gate_index->size() != src.size()) ||
      (direct && static_cast<Index>(src.size()) != gate.rows()) || gate.cols() != 1) {
    throw Error(ErrorKind::kShapeMismatch, "gated_aggregate: edge lists, gate index and gates disagree");
  }
  const Matrix& vd = v.data();
  const Matrix& gd = gate.data();
  Matrix out = Matrix::Zero(n, vd.cols());
  for (std::size_t e = 0; e < src.size(); ++e) {
    const auto gi = direct ? e : (*gate_index)[e];
    if (src[e] >= vd.rows() || dst[e] >= n || static_cast<Index>(gi) >= gd.rows()) {
      throw Error(ErrorKind::kShapeMismatch, "gated_aggregate: index out of range");
    }
    out.row(dst[e]) += gd(static_cast<Index>(gi), 0) * vd.row(src[e]);
  }
  return make(std::move(out), {v.ptr(), gate.ptr()}, [source, target, gate_index, direct](Node& self) {
    const auto& src = *source;
    const auto& dst = *target;
    const Matrix& vd = self.parents[0]->data;
    const Matrix& gd = self.parents[1]->data;
    if (wants(self, 0)) {
      Matrix dv = Matrix::Zero(vd.rows(), vd.cols());
      for (std::size_t e = 0; e < src.size(); ++e) {
        const auto gi = static_cast<Index>(direct ? e : (*gate_index)[e]);
        dv.row(src[e]) += gd(gi, 0) * self.grad.row(dst[e]);
      }
      self.parents[0]->accumulate(std::move(dv));
    }
    if (wants(self, 1)) {
      Matrix dg = Matrix::Zero(gd.rows(), 1);
      for (std::size_t e = 0; e < src.size(); ++e) {
        const auto gi = static_cast<Index>(direct ? e : (*gate_index)[e]);
        dg(gi, 0) += self.grad.row(dst[e]).dot(vd.row(src[e]));
      }
      self.parents[1]->accumulate(std::move(dg));
    }
  });
}

Value mode1_product(const Value& k, const Value& c) {
  const auto& shape = k.shape();
  if (shape.size() != 3 || shape[1] != shape[2]) {
    throw Error(ErrorKind::kShapeMismatch, "mode1_product: kernel must be m x d x d");
  }
  const Index m = shape[0];
  const Index d = shape[1];
  if (c.cols() != d || c.rows() % m != 0) shape_error("mode1_product", k.data(), c.data());
  const Index reps = c.rows() / m;

  using Strided = Eigen::Map<const Matrix, 0, Eigen::OuterStride<>>;
  using StridedMut = Eigen::Map<Matrix, 0, Eigen::OuterStride<>>;
  Matrix out(c.rows(), d);
  for (Index j = 0; j < m; ++j) {
    // Rows j, j+m, j+2m, ... all use slice j.
    Strided cj(c.data().data() + j * d, reps, d, Eigen::OuterStride<>(m * d));
    StridedMut oj(out.data() + j * d, reps, d, Eigen::OuterStride<>(m * d));
    oj.noalias() = cj * k.data().middleRows(j * d, d);
  }
  return make(std::move(out), {k.ptr(), c.ptr()}, [m, d, reps](Node& self) {
    const Matrix& kd = self.parents[0]->data;
    const Matrix& cd = self.parents[1]->data;
    Matrix gk = wants(self, 0) ? Matrix::Zero(kd.rows(), kd.cols()) : Matrix();
    Matrix gc = wants(self, 1) ? Matrix(cd.rows(), cd.cols()) : Matrix();
    for (Index j = 0; j < m; ++j) {
      Strided gj(self.grad.data() + j * d, reps, d, Eigen::OuterStride<>(m * d));
      if (wants(self, 0)) {
        Strided cj(cd.data() + j * d, reps, d, Eigen::OuterStride<>(m * d));
        gk.middleRows(j * d, d).noalias() = cj.transpose() * gj;
      }
      if (wants(self, 1)) {
        StridedMut gcj(gc.data() + j * d, reps, d, Eigen::OuterStride<>(m * d));
        gcj.noalias() = gj * kd.middleRows(j * d, d).transpose();
      }
    }
    if (wants(self, 0)) self.parents[0]->accumulate(std::move(gk));
    if (wants(self, 1)) self.parents[1]->accumulate(std::move(gc));
  });
}

Value gelu(const Value& x) {
  const Matrix& xd = x.data();
  Matrix out(xd.rows(), xd.cols());
  // Derivative kept from the forward pass so backward skips erf/exp.
  Matrix d = x.requires_grad() && g_grad_enabled ? Matrix(xd.rows(), xd.cols()) : Matrix();
  for (Index i = 0; i < xd.size(); ++i) {
    const double v = xd.data()[i];
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    out.data()[i] = v * cdf;
    if (d.size()) d.data()[i] = cdf + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
  }
  return make(std::move(out), {x.ptr()}, [d = std::move(d)](Node& self) {
    self.parents[0]->accumulate(Matrix(self.grad.cwiseProduct(d)));
  });
}

Value relu(const Value& x) {
  Matrix out = x.data().cwiseMax(0.0);
  return make(std::move(out), {x.ptr()}, [](Node& self) {
    const Matrix& x = self.parents[0]->data;
    Matrix d = x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Value sigmoid(const Value& x) {
  Matrix out = x.data().unaryExpr([](double v) {
    // Split on sign so exp never overflows.
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return make(out, {x.ptr()}, [y = out](Node& self) {
    Matrix d = y.unaryExpr([](double s) { return s * (1.0 - s); });
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Value layer_norm_rows(const Value& x, const Value& gain, const Value& bias, double eps) {
  const Index c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c) shape_error("layer_norm gain", x.data(), gain.data());
  if (bias.rows() != 1 || bias.cols() != c) shape_error("layer_norm bias", x.data(), bias.data());
  const Matrix& xd = x.data();
  Matrix xhat(xd.rows(), c);
  Vector inv_std(xd.rows());
  for (Index i = 0; i < xd.rows(); ++i) {
    const double mean = xd.row(i).mean();
    const auto centered = (xd.row(i).array() - mean).matrix();
    const double var = centered.squaredNorm() / static_cast<double>(c);
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = centered * inv_std(i);
  }
  Matrix out = xhat * gain.data().row(0).asDiagonal();
  out.rowwise() += bias.data().row(0);
  return make(std::move(out), {x.ptr(), gain.ptr(), bias.ptr()},
              [xhat, inv_std, c](Node& self) {
                const Matrix& gain = self.parents[1]->data;
                if (wants(self, 1)) self.parents[1]->accumulate(self.grad.cwiseProduct(xhat).colwise().sum());
                if (wants(self, 2)) self.parents[2]->accumulate(self.grad.colwise().sum());
                if (wants(self, 0)) {
                  const Matrix gx = self.grad * gain.row(0).asDiagonal();
                  Matrix dx(gx.rows(), c);
                  const double inv_c = 1.0 / static_cast<double>(c);
                  for (Index i = 0; i < gx.rows(); ++i) {
                    const double mean_g = gx.row(i).mean();
                    const double mean_gx = gx.row(i).dot(xhat.row(i)) * inv_c;
                    dx.row(i) = inv_std(i) *
                                (gx.row(i).array() - mean_g - xhat.row(i).array() * mean_gx).matrix();
                  }
                  self.parents[0]->accumulate(std::move(dx));
                }
              });
}

Value l2_normalize_rows(const Value& x, double eps) {
  const Matrix& xd = x.data();
  Vector denom(xd.rows());
  Matrix out(xd.rows(), xd.cols());
  for (Index i = 0; i < xd.rows(); ++i) {
    denom(i) = std::max(xd.row(i).norm(), eps);
    out.row(i) = xd.row(i) / denom(i);
  }
  return make(out, {x.ptr()}, [y = out, denom, eps](Node& self) {
    Matrix dx(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      if (denom(i) > eps) {
        const double proj = y.row(i).dot(self.grad.row(i));
        dx.row(i) = (self.grad.row(i) - proj * y.row(i)) / denom(i);
      } else {
        dx.row(i) = self.grad.row(i) / eps;
      }
    }
    self.parents[0]->accumulate(std::move(dx));
  });
}

Value sqrt(const Value& x) {
  if ((x.data().array() < 0.0).any()) throw Error(ErrorKind::kInvalidInput, "sqrt of a negative entry");
  Matrix out = x.data().cwiseSqrt();
  return make(out, {x.ptr()}, [y = out](Node& self) {
    Matrix d = y.unaryExpr([](double s) { return s > 0.0 ? 0.5 / s : 0.0; });
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

Value sum(const Value& x) {
  Matrix out(1, 1);
  out(0, 0) = x.data().sum();
  return make(std::move(out), {x.ptr()}, [](Node& self) {
    const Matrix& x = self.parents[0]->data;
    self.parents[0]->accumulate(Matrix::Constant(x.rows(), x.cols(), self.grad(0, 0)));
  });
}

namespace {

Matrix to_cols(const Matrix& x, Index blocks) {
  const Index n = x.rows() / blocks;
  const Index d = x.cols();
  Matrix out(n, blocks * d);
  for (Index b = 0; b < blocks; ++b) out.middleCols(b * d, d) = x.middleRows(b * n, n);
  return out;
}

Matrix to_blocks(const Matrix& x, Index blocks) {
  const Index d = x.cols() / blocks;
  const Index n = x.rows();
  Matrix out(blocks * n, d);
  for (Index b = 0; b < blocks; ++b) out.middleRows(b * n, n) = x.middleCols(b * d, d);
  return out;
}

}  // namespace

Value blocks_to_cols(const Value& x, Index blocks) {
  if (blocks < 1 || x.rows() % blocks != 0) {
    throw Error(ErrorKind::kShapeMismatch, "blocks_to_cols: rows not divisible by block count");
  }
  return make(to_cols(x.data(), blocks), {x.ptr()}, [blocks](Node& self) {
    self.parents[0]->accumulate(to_blocks(self.grad, blocks));
  });
}

Value cols_to_blocks(const Value& x, Index blocks) {
  if (blocks < 1 || x.cols() % blocks != 0) {
    throw Error(ErrorKind::kShapeMismatch, "cols_to_blocks: cols not divisible by block count");
  }
  return make(to_blocks(x.data(), blocks), {x.ptr()}, [blocks](Node& self) {
    self.parents[0]->accumulate(to_cols(self.grad, blocks));
  });
}

// ---------------------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Value& root) {
  if (!root.defined() || root.rows() != 1 || root.cols() != 1) {
    throw Error(ErrorKind::kInvalidUsage, "backward needs a scalar (1x1) root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root.node(), 0}};
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) {
    if (!node->is_leaf) node->grad.resize(0, 0);
  }
  root.node().accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->is_leaf || !node->backward || node->grad.size() == 0) continue;
    node->backward(*node);
  }
}

void adam_step(std::span<Value> params, AdamState& state) {
  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const Value& p : params) {
      state.first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  for (const Value& p : params) {
    if (p.has_grad() && !p.grad().allFinite()) {
      throw Error(ErrorKind::kDivergence, "non-finite gradient in parameter '" + p.name() + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Value& p = params[i];
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    if (p.has_grad()) {
      m = state.beta1 * m + (1.0 - state.beta1) * p.grad();
      v = state.beta2 * v + (1.0 - state.beta2) * p.grad().cwiseAbs2();
    } else {
      m *= state.beta1;
      v *= state.beta2;
    }
    Matrix& data = p.mutable_data();
    if (state.weight_decay != 0.0) data *= (1.0 - state.lr * state.weight_decay);
    data.array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

GradCheckResult grad_check(const std::function<Value()>& loss, std::span<Value> params,
                           const GradCheckOptions& options) {
  GradCheckResult result;
  if (params.empty()) return result;
  for (Value& p : params) p.zero_grad();
  backward(loss());

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);
  for (std::size_t probe = 0; probe < options.probe_count; ++probe) {
    Value& p = params[pick_param(rng)];
    std::uniform_int_distribution<Index> pick_entry(0, static_cast<Index>(p.size()) - 1);
    const Index flat = pick_entry(rng);
    const Index r = flat / p.cols();
    const Index c = flat % p.cols();

    const double analytic = p.has_grad() ? p.grad()(r, c) : 0.0;
    const double saved = p.data()(r, c);
    p.mutable_data()(r, c) = saved + options.step;
    const double up = loss().item();
    p.mutable_data()(r, c) = saved - options.step;
    const double down = loss().item();
    p.mutable_data()(r, c) = saved;
    const double numeric = (up - down) / (2.0 * options.step);

    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_parameter = p.name() + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
    }
  }
  return result;
}

}  // namespace virso::ad
