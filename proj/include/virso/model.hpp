#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "virso/ad.hpp"
#include "virso/mesh_graph.hpp"
#include "virso/spectral.hpp"

namespace virso::model {

enum class Variant { kFull, kSpectralOnly, kSpatialOnly };
enum class Collaboration { kLinear, kNonlinear };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
std::string to_string(Collaboration c);
Collaboration collaboration_from_string(const std::string& s);

struct VirsoConfig {
  std::size_t blocks = 4;           // T
  std::size_t d_v = 16;             // hidden function width
  std::size_t modes = 16;           // m
  std::size_t d_latent = 16;        // embedding width
  std::size_t embed_hidden = 64;    // FCN q -> embed_hidden -> d_latent
  std::size_t head_hidden = 128;    // downlift d_v -> head_hidden -> C
  std::size_t gate_hidden = 16;     // g_h
  std::size_t gate_weight_width = 8;  // g_w
  std::size_t alpha_anchors = 16;
  std::uint64_t anchor_seed = 0;
  Variant variant = Variant::kFull;
  bool identity_skip = true;
  bool spectral_skip = true;
  Collaboration collaboration = Collaboration::kLinear;
  bool weighted_laplacian = false;
  std::size_t output_channels = 3;  // C
  std::size_t input_width = 22;     // q
  std::size_t spatial_dim = 2;      // d

  bool uses_spectral() const { return variant != Variant::kSpatialOnly; }
  bool uses_spatial() const { return variant != Variant::kSpectralOnly; }

  /// Throws kConfig on an inconsistent configuration. `allow_zero_blocks`
  /// admits the degenerate T = 0 pure-MLP path used in tests.
  void validate(bool allow_zero_blocks = false) const;
};

/// Closed-form parameter count.
std::size_t parameter_count(const VirsoConfig& config);

/// Dense map with optional bias.
struct Dense {
  ad::Value w;
  ad::Value b;
};

struct BlockParams {
  ad::Value kernel;      // m x d_v x d_v
  ad::Value skip;        // d_v x d_v, spectral weighted residual
  ad::Value norm_gain;   // 1 x d_v
  ad::Value norm_bias;   // 1 x d_v
  ad::Value spatial_w;   // d_v x d_v
  Dense gate_in;         // (2 alpha + g_w) -> g_h
  Dense gate_weight;     // 1 -> g_w
  Dense gate_out;        // g_h -> 1
  Dense collab;          // 2 d_v -> d_v
  Dense collab_out;      // d_v -> d_v, nonlinear collaboration only
};

struct VirsoModel {
  VirsoConfig config;
  Dense embed1, embed2;
  Dense lift;
  std::vector<BlockParams> blocks;
  Dense head1, head2;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for dense maps; kernel slices
  /// uniform with scale 1/(d_v sqrt(m)); layer norm gain 1, bias 0.
  static VirsoModel initialize(const VirsoConfig& config, std::uint64_t seed,
                               bool allow_zero_blocks = false);

  /// Every trainable value in a fixed order.
  std::vector<ad::Value> parameters() const;
  std::size_t allocated_parameter_count() const;

  /// Deep copy of the parameter data (for best-checkpoint retention).
  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& snapshot);
};

/// Everything the forward pass needs about one output mesh, prepared once.
class GraphContext {
 public:
  GraphContext(mesh::PointCloud points, mesh::Graph weighted_graph, spectral::EigenBasis basis,
               mesh::AnchorEmbedding anchors);

  const mesh::PointCloud& points() const { return points_; }
  const mesh::Graph& graph() const { return graph_; }
  const spectral::EigenBasis& basis() const { return basis_; }
  const mesh::AnchorEmbedding& anchors() const { return anchors_; }
  std::size_t num_nodes() const { return points_.size(); }
  std::size_t num_edges() const { return graph_.num_directed_edges(); }

  /// Index tables for a row-stacked batch of `batch` samples.
  struct Layout {
    std::size_t batch = 0;
    ad::IndexList edge_target;   // receiving node of each stacked edge
    ad::IndexList edge_source;   // sending node of each stacked edge
    ad::IndexList edge_replica;  // stacked edge -> edge id, for sharing gates
    ad::IndexList node_sample;   // stacked node -> sample id
    ad::Value coords;            // (batch n) x d constant
  };
  std::shared_ptr<const Layout> layout(std::size_t batch) const;

  /// Constant per-edge gate features [h_target || h_source], E x 2 alpha.
  const ad::Value& edge_anchor_features() const { return edge_anchor_features_; }
  /// Constant edge weight column, E x 1.
  const ad::Value& edge_weights() const { return edge_weights_; }
  const ad::Value& basis_q() const { return basis_q_; }
  const ad::Value& basis_qt() const { return basis_qt_; }

 private:
  mesh::PointCloud points_;
  mesh::Graph graph_;
  spectral::EigenBasis basis_;
  mesh::AnchorEmbedding anchors_;
  ad::Value edge_anchor_features_;
  ad::Value edge_weights_;
  ad::Value basis_q_;
  ad::Value basis_qt_;
  struct LayoutCache {
    std::mutex mutex;
    std::map<std::size_t, std::shared_ptr<const Layout>> layouts;
  };
  std::unique_ptr<LayoutCache> cache_ = std::make_unique<LayoutCache>();
};

/// Builds weights, anchors and eigenbasis for a graph in one call.
GraphContext prepare_context(mesh::PointCloud points, mesh::Graph graph, const VirsoConfig& config,
                             const spectral::LobpcgOptions& lobpcg = {});

struct ForwardOptions {
  /// Test hook: replace every edge gate by this constant.
  std::optional<double> gate_override;
};

/// a = FCN(u), one row per sample: B x q -> B x d_latent.
ad::Value embed_input(const VirsoModel& model, const ad::Value& inputs);

/// Row (b, i) = [x_i || a_b]; (B n) x (d + d_latent).
ad::Value assemble_node_features(const GraphContext& ctx, const ad::Value& embedding);

ad::Value spectral_block(const ad::Value& v, const GraphContext& ctx, const BlockParams& params,
                         const VirsoConfig& config, std::size_t batch);

/// Per-edge gates gamma, E x 1.
ad::Value edge_gates(const GraphContext& ctx, const BlockParams& params);

ad::Value spatial_block(const ad::Value& v, const GraphContext& ctx, const BlockParams& params,
                        std::size_t batch, const ForwardOptions& options = {});

ad::Value collaboration(const ad::Value& v_spatial, const ad::Value& v_spectral,
                        const ad::Value& v_prev, const BlockParams& params,
                        const VirsoConfig& config);

/// Full operator on a batch of (normalized) inputs, B x q -> (B n) x C,
/// still in normalized units.
ad::Value forward(const VirsoModel& model, const GraphContext& ctx, const Matrix& inputs,
                  const ForwardOptions& options = {});

struct FlopBreakdown {
  double embed = 0.0;
  double lift = 0.0;
  double spectral = 0.0;
  double spatial = 0.0;
  double collaboration = 0.0;
  double head = 0.0;
  double total = 0.0;
  std::string formula;
};

/// Analytic per-sample multiply-add count (2 FLOPs per MAC); E counts directed edges.
FlopBreakdown flop_count(const VirsoConfig& config, std::size_t n, std::size_t edges);

}  // namespace virso::model
