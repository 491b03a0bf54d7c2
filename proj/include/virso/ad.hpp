#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Value is a handle to a node in a dynamically built computation graph.
// Every primitive checks shapes when the node is built and never broadcasts;
// row-wise alignment is always spelled out (gather_rows, scale_rows, linear).
// Graphs are confined to one thread.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "virso/types.hpp"

namespace virso::ad {

using IndexList = std::shared_ptr<const std::vector<std::uint32_t>>;

IndexList make_indices(std::vector<std::uint32_t> indices);

struct Node {
  Matrix data;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  bool is_leaf = true;
  std::string name;
  /// Logical shape; a 3-axis tensor (s0, s1, s2) is stored as (s0*s1) x s2.
  std::vector<Eigen::Index> shape;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
  void accumulate(Matrix&& g);
};

class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& data() const { return node_->data; }
  Matrix& mutable_data() { return node_->data; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() > 0; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  const std::vector<Eigen::Index>& shape() const { return node_->shape; }
  Eigen::Index rows() const { return node_->data.rows(); }
  Eigen::Index cols() const { return node_->data.cols(); }
  std::size_t size() const { return static_cast<std::size_t>(node_->data.size()); }
  double item() const;

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Value constant(Matrix data);
Value parameter(Matrix data, std::string name);
/// Trainable 3-axis tensor s0 x s1 x s2, stored as (s0*s1) x s2.
Value parameter3(Matrix data, Eigen::Index s0, Eigen::Index s1, Eigen::Index s2, std::string name);

// --- primitives ------------------------------------------------------------

Value matmul(const Value& a, const Value& b);
/// x * w + 1 * b, with b a 1 x cols(w) row. An undefined b means no bias.
Value linear(const Value& x, const Value& w, const Value& b);
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value scalar_mul(const Value& a, double s);
Value elementwise_mul(const Value& a, const Value& b);
Value concat_cols(const Value& a, const Value& b);
Value slice_cols(const Value& a, Eigen::Index start, Eigen::Index count);
Value gather_rows(const Value& v, const IndexList& indices);
Value scatter_add_rows(const Value& contributions, const IndexList& targets, Eigen::Index n);
/// Row i of a scaled by s(i); s is rows(a) x 1.
Value scale_rows(const Value& a, const Value& s);
/// Fused gather / scale / scatter: out[target[e]] += gate[gate_index[e]] * v[source[e]]
/// over every e, out having n rows. gate is G x 1. An empty gate_index means
/// gate row e for edge e.
Value gated_aggregate(const Value& v, const Value& gate, const IndexList& source, const IndexList& target,
                      const IndexList& gate_index, Eigen::Index n);
/// Kernel k is m x d x d. Row r of c is multiplied by slice k[r mod m], so a
/// row-stack of several m x d coefficient blocks is handled in one node.
Value mode1_product(const Value& k, const Value& c);
Value gelu(const Value& x);
Value relu(const Value& x);
Value sigmoid(const Value& x);
/// Per-row standardization followed by a learnable 1 x cols affine map.
Value layer_norm_rows(const Value& x, const Value& gain, const Value& bias, double eps = 1e-12);
/// Rows divided by max(||row||, eps).
Value l2_normalize_rows(const Value& x, double eps = 1e-12);
/// Elementwise sqrt; the derivative at exactly 0 is taken as 0.
Value sqrt(const Value& x);
Value sum(const Value& x);
/// (B*n) x d  ->  n x (B*d): the B row blocks laid side by side.
Value blocks_to_cols(const Value& x, Eigen::Index blocks);
/// Inverse of blocks_to_cols.
Value cols_to_blocks(const Value& x, Eigen::Index blocks);

/// While alive, new nodes record no backward graph (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

/// Reverse sweep from a 1 x 1 root. Leaf gradients accumulate across calls;
/// interior gradients are recomputed each call.
void backward(const Value& root);

// --- optimization ----------------------------------------------------------

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t step = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

/// One Adam update with bias correction and decoupled weight decay
/// p <- p * (1 - lr * wd) applied before the Adam delta. Parameters without
/// a gradient are treated as having a zero gradient.
void adam_step(std::span<Value> params, AdamState& state);

struct GradCheckOptions {
  std::size_t probe_count = 30;
  double step = 1e-5;
  std::uint64_t seed = 0;
  double abs_floor = 1e-6;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
};

/// Compares backward() gradients against central finite differences on
/// randomly chosen scalar entries. `loss` must rebuild the graph on each call.
GradCheckResult grad_check(const std::function<Value()>& loss, std::span<Value> params,
                           const GradCheckOptions& options = {});

}  // namespace virso::ad
