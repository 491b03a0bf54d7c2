#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "virso/types.hpp"

namespace virso::mesh {

/// Static KD-tree over the rows of a coordinate matrix. Queries return
/// (squared distance, index) pairs ordered lexicographically, which makes the
/// result identical to a sort over all pairwise distances.
class KdTree {
 public:
  explicit KdTree(const Matrix& coords, std::size_t leaf_size = 8);

  /// The k nearest rows to row `query`, excluding `query` itself.
  std::vector<std::pair<double, std::size_t>> nearest(std::size_t query, std::size_t k) const;

  /// All rows within squared radius r2 of row `query` (inclusive), excluding itself,
  /// sorted by index.
  std::vector<std::size_t> within(std::size_t query, double r2) const;

 private:
  struct Node {
    std::size_t begin = 0;
    std::size_t end = 0;
    int split_dim = -1;  // -1 marks a leaf
    double split_value = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end);
  double squared_distance(std::size_t a, std::size_t b) const;

  const Matrix& coords_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace virso::mesh
