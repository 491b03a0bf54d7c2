#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "virso/types.hpp"

namespace virso::mesh {

/// Irregular node coordinates, n x d (d = 2 or 3). Construction validates the
/// point set: finite coordinates, n >= 2, no exactly coincident points.
class PointCloud {
 public:
  explicit PointCloud(Matrix coords);

  std::size_t size() const { return static_cast<std::size_t>(coords_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(coords_.cols()); }
  const Matrix& coords() const { return coords_; }

  double squared_distance(std::size_t a, std::size_t b) const;

 private:
  Matrix coords_;
};

struct Edge {
  NodeId src;
  NodeId dst;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Undirected graph stored as a sorted list of directed entries: (u, v) is
/// present iff (v, u) is. Weights, when set, are aligned with `edges()`.
class Graph {
 public:
  Graph() = default;
  /// Sorts, deduplicates and validates. Throws if the set is not symmetric or
  /// contains a self-loop.
  Graph(std::size_t n, std::vector<Edge> edges);

  /// Union of a directed edge list with its reverse.
  static Graph symmetrized(std::size_t n, std::vector<Edge> directed);

  std::size_t num_nodes() const { return n_; }
  std::size_t num_directed_edges() const { return edges_.size(); }
  std::size_t num_undirected_edges() const { return edges_.size() / 2; }
  const std::vector<Edge>& edges() const { return edges_; }

  /// CSR offsets: edges of node u are [offsets()[u], offsets()[u+1]).
  const std::vector<std::size_t>& offsets() const { return offsets_; }
  std::size_t degree(std::size_t u) const { return offsets_[u + 1] - offsets_[u]; }

  bool has_weights() const { return weights_.has_value(); }
  const std::vector<double>& weights() const;
  void set_weights(std::vector<double> weights);

 private:
  void build_offsets();

  std::size_t n_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_;
  std::optional<std::vector<double>> weights_;
};

struct VknnConfig {
  std::size_t k_min = 1;
  std::size_t k_max = 1;
  double alpha_floor = 1.0;
  double density_radius = 0.0;

  void validate(std::size_t n) const;
};

/// V-KNN output: the graph plus the per-node quantities it was built from,
/// so callers can report pre- and post-symmetrization degrees.
struct VknnResult {
  Graph graph;
  std::vector<std::size_t> density;
  std::size_t density_max = 0;
  std::vector<std::size_t> neighbor_count;
};

struct DegreeStats {
  std::size_t edge_count = 0;  // undirected
  std::size_t min_degree = 0;
  std::size_t max_degree = 0;
  double mean_degree = 0.0;
  std::vector<std::size_t> histogram;  // histogram[k] = nodes of degree k
  std::size_t isolated = 0;
};

struct AnchorEmbedding {
  Matrix h;  // n x alpha, normalized hop distances
  std::vector<NodeId> anchor_ids;
  std::uint64_t seed = 0;
};

Graph build_knn(const PointCloud& points, std::size_t k);

/// Brute-force O(n^2 log n) KNN with identical tie-breaking; the reference
/// the accelerated path is checked against.
Graph build_knn_brute_force(const PointCloud& points, std::size_t k);

Graph build_radius(const PointCloud& points, double r);

std::vector<std::size_t> estimate_density(const PointCloud& points, double r);

/// k_i = max(alpha_floor * k_min, floor(k_max * d_i / d_max)), capped to n-1.
std::size_t vknn_neighbor_count(const VknnConfig& cfg, std::size_t density,
                                std::size_t density_max);

VknnResult build_vknn(const PointCloud& points, const VknnConfig& cfg);

/// Inverse-distance weights divided by the largest one, so the closest edge
/// gets weight exactly 1.
Graph compute_edge_weights(Graph graph, const PointCloud& points);

DegreeStats degree_stats(const Graph& graph);

/// Degree statistics of a directed per-node neighbor count list
/// (pre-symmetrization view).
DegreeStats degree_stats(const std::vector<std::size_t>& out_degree);

AnchorEmbedding anchor_embeddings(const Graph& graph, std::size_t alpha_anchors,
                                  std::uint64_t seed);

/// ceil(log2(n))^2
std::size_t recommended_anchor_count(std::size_t n);

std::vector<std::size_t> hop_distances(const Graph& graph, std::size_t source);
bool is_connected(const Graph& graph);

}  // namespace virso::mesh
