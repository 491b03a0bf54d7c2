#include "virso/kd_tree.hpp"

#include <algorithm>
#include <numeric>
#include <queue>

namespace virso::mesh {

KdTree::KdTree(const Matrix& coords, std::size_t leaf_size)
    : coords_(coords), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
  order_.resize(static_cast<std::size_t>(coords.rows()));
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!order_.empty()) {
    nodes_.reserve(2 * order_.size() / leaf_size_ + 2);
    build(0, order_.size());
  }
}

std::size_t KdTree::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  // Split along the widest extent.
  const auto dims = coords_.cols();
  int best_dim = 0;
  double best_extent = -1.0;
  for (int d = 0; d < dims; ++d) {
    double lo = coords_(static_cast<Eigen::Index>(order_[begin]), d), hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      const double x = coords_(static_cast<Eigen::Index>(order_[i]), d);
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    if (hi - lo > best_extent) {
      best_extent = hi - lo;
      best_dim = d;
    }
  }

  const std::size_t mid = begin + (end - begin) / 2;
  auto key = [&](std::size_t row) {
    return std::make_pair(coords_(static_cast<Eigen::Index>(row), best_dim), row);
  };
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) { return key(a) < key(b); });

  nodes_[id].split_dim = best_dim;
  nodes_[id].split_value = coords_(static_cast<Eigen::Index>(order_[mid]), best_dim);
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

double KdTree::squared_distance(std::size_t a, std::size_t b) const {
  double s = 0.0;
  for (Eigen::Index d = 0; d < coords_.cols(); ++d) {
    const double diff = coords_(static_cast<Eigen::Index>(a), d) -
                        coords_(static_cast<Eigen::Index>(b), d);
    s += diff * diff;
  }
  return s;
}

std::vector<std::pair<double, std::size_t>> KdTree::nearest(std::size_t query,
                                                            std::size_t k) const {
  using Candidate = std::pair<double, std::size_t>;
  // Max-heap on (distance, index): top is the current worst of the best k.
  std::priority_queue<Candidate> heap;
  if (k == 0 || nodes_.empty()) return {};

  auto visit = [&](auto&& self, std::size_t node_id) -> void {
    const Node& node = nodes_[node_id];
    if (node.split_dim < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t row = order_[i];
        if (row == query) continue;
        const Candidate c{squared_distance(query, row), row};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const double delta =
        coords_(static_cast<Eigen::Index>(query), node.split_dim) - node.split_value;
    const std::size_t near = delta < 0.0 ? node.left : node.right;
    const std::size_t far = delta < 0.0 ? node.right : node.left;
    self(self, near);
    // Non-strict comparison keeps equal-distance candidates reachable for
    // index tie-breaking.
    if (heap.size() < k || delta * delta <= heap.top().first) self(self, far);
  };
  visit(visit, 0);

  std::vector<Candidate> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
  return out;
}

std::vector<std::size_t> KdTree::within(std::size_t query, double r2) const {
  std::vector<std::size_t> out;
  if (nodes_.empty()) return out;
  auto visit = [&](auto&& self, std::size_t node_id) -> void {
    const Node& node = nodes_[node_id];
    if (node.split_dim < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t row = order_[i];
        if (row != query && squared_distance(query, row) <= r2) out.push_back(row);
      }
      return;
    }
    const double delta =
        coords_(static_cast<Eigen::Index>(query), node.split_dim) - node.split_value;
    const std::size_t near = delta < 0.0 ? node.left : node.right;
    const std::size_t far = delta < 0.0 ? node.right : node.left;
    self(self, near);
    if (delta * delta <= r2) self(self, far);
  };
  visit(visit, 0);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace virso::mesh
