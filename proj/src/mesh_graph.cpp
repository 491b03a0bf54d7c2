#include "virso/mesh_graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "virso/error.hpp"
#include "virso/kd_tree.hpp"

namespace virso::mesh {

PointCloud::PointCloud(Matrix coords) : coords_(std::move(coords)) {
  const auto n = coords_.rows();
  const auto d = coords_.cols();
  if (n < 2) throw Error(ErrorKind::kInvalidInput, "point cloud needs at least 2 points");
  if (d != 2 && d != 3) {
    throw Error(ErrorKind::kInvalidInput,
                "spatial dimension must be 2 or 3, got " + std::to_string(d));
  }
  if (!coords_.allFinite()) throw Error(ErrorKind::kInvalidInput, "non-finite coordinate");

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto row_less = [&](std::size_t a, std::size_t b) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double x = coords_(static_cast<Eigen::Index>(a), j);
      const double y = coords_(static_cast<Eigen::Index>(b), j);
      if (x != y) return x < y;
    }
    return false;
  };
  std::sort(order.begin(), order.end(), row_less);
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (!row_less(order[i - 1], order[i])) {
      throw Error(ErrorKind::kInvalidInput, "duplicate points " + std::to_string(order[i - 1]) +
                                                " and " + std::to_string(order[i]));
    }
  }
}

double PointCloud::squared_distance(std::size_t a, std::size_t b) const {
  double s = 0.0;
  for (Eigen::Index d = 0; d < coords_.cols(); ++d) {
    const double diff = coords_(static_cast<Eigen::Index>(a), d) -
                        coords_(static_cast<Eigen::Index>(b), d);
    s += diff * diff;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Graph

Graph::Graph(std::size_t n, std::vector<Edge> edges) : n_(n), edges_(std::move(edges)) {
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  for (const Edge& e : edges_) {
    if (e.src >= n_ || e.dst >= n_) {
      throw Error(ErrorKind::kInvalidInput, "edge endpoint out of range");
    }
    if (e.src == e.dst) {
      throw Error(ErrorKind::kInvalidInput, "self-loop at node " + std::to_string(e.src));
    }
    if (!std::binary_search(edges_.begin(), edges_.end(), Edge{e.dst, e.src})) {
      throw Error(ErrorKind::kInvalidInput, "edge (" + std::to_string(e.src) + ", " +
                                                std::to_string(e.dst) + ") has no reverse");
    }
  }
  build_offsets();
}

Graph Graph::symmetrized(std::size_t n, std::vector<Edge> directed) {
  const std::size_t m = directed.size();
  directed.reserve(2 * m);
  for (std::size_t i = 0; i < m; ++i) directed.push_back(Edge{directed[i].dst, directed[i].src});
  return Graph(n, std::move(directed));
}

void Graph::build_offsets() {
  offsets_.assign(n_ + 1, 0);
  for (const Edge& e : edges_) ++offsets_[e.src + 1];
  std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
}

const std::vector<double>& Graph::weights() const {
  if (!weights_) throw Error(ErrorKind::kConfig, "graph has no edge weights");
  return *weights_;
}

void Graph::set_weights(std::vector<double> weights) {
  if (weights.size() != edges_.size()) {
    throw Error(ErrorKind::kShapeMismatch, "weight count does not match edge count");
  }
  weights_ = std::move(weights);
}

// ---------------------------------------------------------------------------
// Construction

void VknnConfig::validate(std::size_t n) const {
  if (k_min < 1 || k_min > k_max || k_max >= n) {
    throw Error(ErrorKind::kInvalidParameter, "V-KNN requires 1 <= k_min <= k_max < n");
  }
  if (!(alpha_floor >= 1.0)) throw Error(ErrorKind::kInvalidParameter, "alpha_floor must be >= 1");
  if (!(density_radius > 0.0)) {
    throw Error(ErrorKind::kInvalidParameter, "density_radius must be positive");
  }
}

namespace {

std::vector<Edge> knn_directed(const PointCloud& points, const std::vector<std::size_t>& k_of) {
  const KdTree tree(points.coords());
  std::vector<Edge> directed;
  for (std::size_t u = 0; u < points.size(); ++u) {
    for (const auto& [d2, v] : tree.nearest(u, k_of[u])) {
      directed.push_back(Edge{static_cast<NodeId>(u), static_cast<NodeId>(v)});
    }
  }
  return directed;
}

void check_radius(double r) {
  if (!(r > 0.0) || !std::isfinite(r)) {
    throw Error(ErrorKind::kInvalidParameter, "radius must be positive and finite");
  }
}

}  // namespace

Graph build_knn(const PointCloud& points, std::size_t k) {
  if (k < 1 || k >= points.size()) {
    throw Error(ErrorKind::kInvalidParameter, "k must satisfy 1 <= k < n");
  }
  return Graph::symmetrized(points.size(),
                            knn_directed(points, std::vector<std::size_t>(points.size(), k)));
}

Graph build_knn_brute_force(const PointCloud& points, std::size_t k) {
  const std::size_t n = points.size();
  if (k < 1 || k >= n) throw Error(ErrorKind::kInvalidParameter, "k must satisfy 1 <= k < n");
  std::vector<Edge> directed;
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t u = 0; u < n; ++u) {
    all.clear();
    for (std::size_t v = 0; v < n; ++v) {
      if (v != u) all.emplace_back(points.squared_distance(u, v), v);
    }
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < k; ++i) {
      directed.push_back(Edge{static_cast<NodeId>(u), static_cast<NodeId>(all[i].second)});
    }
  }
  return Graph::symmetrized(n, std::move(directed));
}

Graph build_radius(const PointCloud& points, double r) {
  check_radius(r);
  const KdTree tree(points.coords());
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < points.size(); ++u) {
    for (std::size_t v : tree.within(u, r * r)) {
      edges.push_back(Edge{static_cast<NodeId>(u), static_cast<NodeId>(v)});
    }
  }
  return Graph(points.size(), std::move(edges));
}

std::vector<std::size_t> estimate_density(const PointCloud& points, double r) {
  check_radius(r);
  const KdTree tree(points.coords());
  std::vector<std::size_t> density(points.size());
  for (std::size_t u = 0; u < points.size(); ++u) density[u] = tree.within(u, r * r).size();
  return density;
}

std::size_t vknn_neighbor_count(const VknnConfig& cfg, std::size_t density,
                                std::size_t density_max) {
  const auto floor_count =
      static_cast<std::size_t>(std::floor(cfg.alpha_floor * static_cast<double>(cfg.k_min)));
  // Integer arithmetic keeps floor(k_max * d_i / d_max) exact.
  const std::size_t proportional = cfg.k_max * density / density_max;
  return std::max(floor_count, proportional);
}

VknnResult build_vknn(const PointCloud& points, const VknnConfig& cfg) {
  cfg.validate(points.size());
  VknnResult result;
  result.density = estimate_density(points, cfg.density_radius);
  result.density_max = *std::max_element(result.density.begin(), result.density.end());
  if (result.density_max == 0) {
    throw Error(ErrorKind::kDegenerateDensity,
                "every node is isolated at density_radius " + std::to_string(cfg.density_radius));
  }
  const std::size_t cap = points.size() - 1;
  result.neighbor_count.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    result.neighbor_count[i] =
        std::min(cap, vknn_neighbor_count(cfg, result.density[i], result.density_max));
  }
  result.graph =
      Graph::symmetrized(points.size(), knn_directed(points, result.neighbor_count));
  return result;
}

Graph compute_edge_weights(Graph graph, const PointCloud& points) {
  if (graph.num_directed_edges() == 0) {
    throw Error(ErrorKind::kInvalidInput, "cannot weight a graph without edges");
  }
  std::vector<double> w(graph.num_directed_edges());
  double max_w = 0.0;
  for (std::size_t e = 0; e < w.size(); ++e) {
    const auto& edge = graph.edges()[e];
    const double dist = std::sqrt(points.squared_distance(edge.src, edge.dst));
    if (!(dist > 0.0)) {
      throw Error(ErrorKind::kInvalidInput, "coincident edge endpoints " +
                                                std::to_string(edge.src) + ", " +
                                                std::to_string(edge.dst));
    }
    w[e] = 1.0 / dist;
    max_w = std::max(max_w, w[e]);
  }
  for (double& x : w) x /= max_w;
  graph.set_weights(std::move(w));
  return graph;
}

DegreeStats degree_stats(const std::vector<std::size_t>& out_degree) {
  DegreeStats s;
  if (out_degree.empty()) return s;
  s.min_degree = *std::min_element(out_degree.begin(), out_degree.end());
  s.max_degree = *std::max_element(out_degree.begin(), out_degree.end());
  s.histogram.assign(s.max_degree + 1, 0);
  std::size_t total = 0;
  for (std::size_t d : out_degree) {
    ++s.histogram[d];
    total += d;
    if (d == 0) ++s.isolated;
  }
  s.edge_count = total;
  s.mean_degree = static_cast<double>(total) / static_cast<double>(out_degree.size());
  return s;
}

DegreeStats degree_stats(const Graph& graph) {
  std::vector<std::size_t> deg(graph.num_nodes());
  for (std::size_t u = 0; u < deg.size(); ++u) deg[u] = graph.degree(u);
  DegreeStats s = degree_stats(deg);
  s.edge_count = graph.num_undirected_edges();
  return s;
}

std::vector<std::size_t> hop_distances(const Graph& graph, std::size_t source) {
  constexpr auto kUnreached = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(graph.num_nodes(), kUnreached);
  std::deque<std::size_t> queue{source};
  dist[source] = 0;
  const auto& off = graph.offsets();
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t e = off[u]; e < off[u + 1]; ++e) {
      const std::size_t v = graph.edges()[e].dst;
      if (dist[v] == kUnreached) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

bool is_connected(const Graph& graph) {
  if (graph.num_nodes() == 0) return true;
  const auto dist = hop_distances(graph, 0);
  return std::none_of(dist.begin(), dist.end(), [](std::size_t d) {
    return d == std::numeric_limits<std::size_t>::max();
  });
}

std::size_t recommended_anchor_count(std::size_t n) {
  const auto l = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(std::max<std::size_t>(n, 2)))));
  return l * l;
}

AnchorEmbedding anchor_embeddings(const Graph& graph, std::size_t alpha_anchors,
                                  std::uint64_t seed) {
  const std::size_t n = graph.num_nodes();
  if (alpha_anchors < 1 || alpha_anchors > n) {
    throw Error(ErrorKind::kInvalidParameter, "anchor count must be in [1, n]");
  }
  AnchorEmbedding out;
  out.seed = seed;

  // Partial Fisher-Yates over node ids.
  std::vector<NodeId> ids(n);
  std::iota(ids.begin(), ids.end(), NodeId{0});
  std::mt19937_64 rng(seed);
  for (std::size_t j = 0; j < alpha_anchors; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, n - 1);
    std::swap(ids[j], ids[pick(rng)]);
  }
  out.anchor_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(alpha_anchors));

  constexpr auto kUnreached = std::numeric_limits<std::size_t>::max();
  std::vector<std::vector<std::size_t>> hops;
  hops.reserve(alpha_anchors);
  std::size_t max_finite = 0;
  for (NodeId a : out.anchor_ids) {
    hops.push_back(hop_distances(graph, a));
    for (std::size_t d : hops.back()) {
      if (d != kUnreached) max_finite = std::max(max_finite, d);
    }
  }

  out.h.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(alpha_anchors));
  for (std::size_t j = 0; j < alpha_anchors; ++j) {
    for (std::size_t v = 0; v < n; ++v) {
      const std::size_t d = hops[j][v];
      double value = 1.0;
      if (d != kUnreached) {
        value = max_finite == 0 ? 0.0 : static_cast<double>(d) / static_cast<double>(max_finite);
      }
      out.h(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(j)) = value;
    }
  }
  return out;
}

}  // namespace virso::mesh
