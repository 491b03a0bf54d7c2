#pragma once

#include <random>

#include "virso/mesh_graph.hpp"

namespace virso::test {

inline Matrix random_coords(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

inline mesh::PointCloud random_cloud(std::size_t n, std::uint64_t seed, std::size_t d = 2) {
  return mesh::PointCloud(random_coords(n, d, seed));
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

inline mesh::Graph graph_from_pairs(std::size_t n, std::initializer_list<std::pair<NodeId, NodeId>> pairs) {
  std::vector<mesh::Edge> edges;
  for (auto [a, b] : pairs) edges.push_back({a, b});
  return mesh::Graph::symmetrized(n, std::move(edges));
}

}  // namespace virso::test
