#include "virso/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "virso/error.hpp"

namespace virso::model {

using ad::Value;
using Index = Eigen::Index;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kSpectralOnly: return "spectral";
    case Variant::kSpatialOnly: return "spatial";
  }
  return "full";
}

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::kFull;
  if (s == "spectral" || s == "spectral_only") return Variant::kSpectralOnly;
  if (s == "spatial" || s == "spatial_only") return Variant::kSpatialOnly;
  throw Error(ErrorKind::kConfig, "unknown variant '" + s + "'");
}

std::string to_string(Collaboration c) { return c == Collaboration::kLinear ? "linear" : "nonlinear"; }

Collaboration collaboration_from_string(const std::string& s) {
  if (s == "linear") return Collaboration::kLinear;
  if (s == "nonlinear") return Collaboration::kNonlinear;
  throw Error(ErrorKind::kConfig, "unknown collaboration '" + s + "'");
}

void VirsoConfig::validate(bool allow_zero_blocks) const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kConfig, what); };
  if (blocks == 0 && !allow_zero_blocks) fail("blocks must be >= 1");
  if (d_v == 0 || d_latent == 0 || embed_hidden == 0 || head_hidden == 0) fail("widths must be >= 1");
  if (uses_spectral() && modes == 0) fail("modes must be >= 1");
  if (uses_spatial() && (gate_hidden == 0 || gate_weight_width == 0 || alpha_anchors == 0)) {
    fail("gate widths and anchor count must be >= 1");
  }
  if (output_channels == 0 || input_width == 0) fail("input and output widths must be >= 1");
  if (spatial_dim != 2 && spatial_dim != 3) fail("spatial_dim must be 2 or 3");
}

std::size_t parameter_count(const VirsoConfig& c) {
  const std::size_t dv = c.d_v;
  std::size_t total = c.input_width * c.embed_hidden + c.embed_hidden;
  total += c.embed_hidden * c.d_latent + c.d_latent;
  total += (c.spatial_dim + c.d_latent) * dv + dv;
  std::size_t block = 0;
  if (c.uses_spectral()) {
    block += c.modes * dv * dv + 2 * dv;
    if (c.spectral_skip) block += dv * dv;
  }
  if (c.uses_spatial()) {
    block += dv * dv;
    block += (2 * c.alpha_anchors + c.gate_weight_width) * c.gate_hidden + c.gate_hidden;
    block += 2 * c.gate_weight_width;
    block += c.gate_hidden + 1;
  }
  if (c.variant == Variant::kFull) {
    block += 2 * dv * dv + dv;
    if (c.collaboration == Collaboration::kNonlinear) block += dv * dv + dv;
  }
  total += c.blocks * block;
  total += dv * c.head_hidden + c.head_hidden + c.head_hidden * c.output_channels + c.output_channels;
  return total;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Matrix uniform(Index rows, Index cols, double scale) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
    return m;
  }

  Dense dense(std::size_t in, std::size_t out, const std::string& name, bool bias = true) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    Dense d;
    d.w = ad::parameter(uniform(static_cast<Index>(in), static_cast<Index>(out), scale), name + ".w");
    if (bias) d.b = ad::parameter(uniform(1, static_cast<Index>(out), scale), name + ".b");
    return d;
  }

 private:
  std::mt19937_64 rng_;
};

void push(std::vector<Value>& out, const Value& v) {
  if (v.defined()) out.push_back(v);
}

void push(std::vector<Value>& out, const Dense& d) {
  push(out, d.w);
  push(out, d.b);
}

}  // namespace

VirsoModel VirsoModel::initialize(const VirsoConfig& config, std::uint64_t seed,
                                  bool allow_zero_blocks) {
  config.validate(allow_zero_blocks);
  Initializer init(seed);
  VirsoModel m;
  m.config = config;
  const std::size_t dv = config.d_v;
  const auto dvi = static_cast<Index>(dv);

  m.embed1 = init.dense(config.input_width, config.embed_hidden, "embed1");
  m.embed2 = init.dense(config.embed_hidden, config.d_latent, "embed2");
  m.lift = init.dense(config.spatial_dim + config.d_latent, dv, "lift");
  for (std::size_t t = 0; t < config.blocks; ++t) {
    const std::string p = "block" + std::to_string(t) + ".";
    BlockParams b;
    if (config.uses_spectral()) {
      const auto mi = static_cast<Index>(config.modes);
      const double scale = 1.0 / (static_cast<double>(dv) * std::sqrt(static_cast<double>(config.modes)));
      b.kernel = ad::parameter3(init.uniform(mi * dvi, dvi, scale), mi, dvi, dvi, p + "kernel");
      if (config.spectral_skip) {
        b.skip = ad::parameter(init.uniform(dvi, dvi, 1.0 / std::sqrt(static_cast<double>(dv))), p + "skip");
      }
      b.norm_gain = ad::parameter(Matrix::Ones(1, dvi), p + "norm_gain");
      b.norm_bias = ad::parameter(Matrix::Zero(1, dvi), p + "norm_bias");
    }
    if (config.uses_spatial()) {
      b.spatial_w = ad::parameter(init.uniform(dvi, dvi, 1.0 / std::sqrt(static_cast<double>(dv))), p + "spatial_w");
      b.gate_in = init.dense(2 * config.alpha_anchors + config.gate_weight_width, config.gate_hidden, p + "gate_in");
      b.gate_weight = init.dense(1, config.gate_weight_width, p + "gate_weight");
      b.gate_out = init.dense(config.gate_hidden, 1, p + "gate_out");
    }
    if (config.variant == Variant::kFull) {
      b.collab = init.dense(2 * dv, dv, p + "collab");
      if (config.collaboration == Collaboration::kNonlinear) b.collab_out = init.dense(dv, dv, p + "collab_out");
    }
    m.blocks.push_back(std::move(b));
  }
  m.head1 = init.dense(dv, config.head_hidden, "head1");
  m.head2 = init.dense(config.head_hidden, config.output_channels, "head2");
  return m;
}

std::vector<Value> VirsoModel::parameters() const {
  std::vector<Value> out;
  push(out, embed1);
  push(out, embed2);
  push(out, lift);
  for (const auto& b : blocks) {
    push(out, b.kernel);
    push(out, b.skip);
    push(out, b.norm_gain);
    push(out, b.norm_bias);
    push(out, b.spatial_w);
    push(out, b.gate_in);
    push(out, b.gate_weight);
    push(out, b.gate_out);
    push(out, b.collab);
    push(out, b.collab_out);
  }
  push(out, head1);
  push(out, head2);
  return out;
}

std::size_t VirsoModel::allocated_parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.size();
  return total;
}

std::vector<Matrix> VirsoModel::snapshot() const {
  std::vector<Matrix> out;
  for (const auto& p : parameters()) out.push_back(p.data());
  return out;
}

void VirsoModel::restore(const std::vector<Matrix>& snapshot) {
  auto params = parameters();
  if (snapshot.size() != params.size()) throw Error(ErrorKind::kShapeMismatch, "snapshot size differs");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (snapshot[i].rows() != params[i].rows() || snapshot[i].cols() != params[i].cols()) {
      throw Error(ErrorKind::kShapeMismatch, "snapshot shape differs for " + params[i].name());
    }
    params[i].mutable_data() = snapshot[i];
  }
}

// ---------------------------------------------------------------------------
// Graph context

GraphContext::GraphContext(mesh::PointCloud points, mesh::Graph weighted_graph,
                           spectral::EigenBasis basis, mesh::AnchorEmbedding anchors)
    : points_(std::move(points)),
      graph_(std::move(weighted_graph)),
      basis_(std::move(basis)),
      anchors_(std::move(anchors)) {
  const std::size_t n = points_.size();
  if (graph_.num_nodes() != n) throw Error(ErrorKind::kShapeMismatch, "graph and point cloud sizes differ");
  if (basis_.num_nodes() != n) throw Error(ErrorKind::kShapeMismatch, "eigenbasis does not match graph");
  if (static_cast<std::size_t>(anchors_.h.rows()) != n) {
    throw Error(ErrorKind::kShapeMismatch, "anchor embedding does not match graph");
  }
  const auto& edges = graph_.edges();
  const auto e_count = static_cast<Index>(edges.size());
  const Index alpha = anchors_.h.cols();
  Matrix features(e_count, 2 * alpha);
  for (Index e = 0; e < e_count; ++e) {
    features.row(e).head(alpha) = anchors_.h.row(edges[static_cast<std::size_t>(e)].src);
    features.row(e).tail(alpha) = anchors_.h.row(edges[static_cast<std::size_t>(e)].dst);
  }
  edge_anchor_features_ = ad::constant(std::move(features));
  if (graph_.has_weights()) {
    Matrix w(e_count, 1);
    for (Index e = 0; e < e_count; ++e) w(e, 0) = graph_.weights()[static_cast<std::size_t>(e)];
    edge_weights_ = ad::constant(std::move(w));
  }
  basis_q_ = ad::constant(basis_.q);
  basis_qt_ = ad::constant(basis_.q.transpose());
}

std::shared_ptr<const GraphContext::Layout> GraphContext::layout(std::size_t batch) const {
  std::lock_guard<std::mutex> lock(cache_->mutex);
  if (auto it = cache_->layouts.find(batch); it != cache_->layouts.end()) return it->second;

  const std::size_t n = num_nodes();
  const auto& edges = graph_.edges();
  const std::size_t e_count = edges.size();
  std::vector<std::uint32_t> target, source, replica, sample;
  target.reserve(batch * e_count);
  source.reserve(batch * e_count);
  replica.reserve(batch * e_count);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto offset = static_cast<std::uint32_t>(b * n);
    for (std::size_t e = 0; e < e_count; ++e) {
      target.push_back(edges[e].src + offset);
      source.push_back(edges[e].dst + offset);
      replica.push_back(static_cast<std::uint32_t>(e));
    }
  }
  sample.reserve(batch * n);
  for (std::size_t b = 0; b < batch; ++b) sample.insert(sample.end(), n, static_cast<std::uint32_t>(b));

  const Matrix& x = points_.coords();
  Matrix tiled(static_cast<Index>(batch * n), x.cols());
  for (std::size_t b = 0; b < batch; ++b) tiled.middleRows(static_cast<Index>(b * n), x.rows()) = x;

  auto layout = std::make_shared<Layout>();
  layout->batch = batch;
  layout->edge_target = ad::make_indices(std::move(target));
  layout->edge_source = ad::make_indices(std::move(source));
  layout->edge_replica = ad::make_indices(std::move(replica));
  layout->node_sample = ad::make_indices(std::move(sample));
  layout->coords = ad::constant(std::move(tiled));
  cache_->layouts.emplace(batch, layout);
  return layout;
}

GraphContext prepare_context(mesh::PointCloud points, mesh::Graph graph, const VirsoConfig& config,
                             const spectral::LobpcgOptions& lobpcg) {
  if (!graph.has_weights()) graph = mesh::compute_edge_weights(std::move(graph), points);
  spectral::EigenBasis basis;
  if (config.uses_spectral()) {
    const auto lap = spectral::normalized_laplacian(graph, config.weighted_laplacian);
    basis = spectral::lobpcg_smallest(lap, config.modes, lobpcg);
  } else {
    basis.q = Matrix::Zero(static_cast<Index>(points.size()), 0);
    basis.sigma = Vector(0);
  }
  auto anchors = mesh::anchor_embeddings(graph, config.alpha_anchors, config.anchor_seed);
  return GraphContext(std::move(points), std::move(graph), std::move(basis), std::move(anchors));
}

// ---------------------------------------------------------------------------
// Forward

namespace {

Value apply(const Dense& d, const Value& x) { return ad::linear(x, d.w, d.b); }

}  // namespace

Value embed_input(const VirsoModel& model, const Value& inputs) {
  if (inputs.cols() != static_cast<Index>(model.config.input_width)) {
    throw Error(ErrorKind::kShapeMismatch, "input width " + std::to_string(inputs.cols()) +
                                               " != configured " + std::to_string(model.config.input_width));
  }
  return apply(model.embed2, ad::gelu(apply(model.embed1, inputs)));
}

Value assemble_node_features(const GraphContext& ctx, const Value& embedding) {
  const auto layout = ctx.layout(static_cast<std::size_t>(embedding.rows()));
  return ad::concat_cols(layout->coords, ad::gather_rows(embedding, layout->node_sample));
}

Value spectral_block(const Value& v, const GraphContext& ctx, const BlockParams& params,
                     const VirsoConfig& config, std::size_t batch) {
  const auto b = static_cast<Index>(batch);
  if (ctx.basis().modes() != config.modes) {
    throw Error(ErrorKind::kShapeMismatch, "basis has " + std::to_string(ctx.basis().modes()) +
                                               " modes, model expects " + std::to_string(config.modes));
  }
  // GFT of all samples at once: Q^T [v_1 ... v_B].
  const Value coeffs = ad::cols_to_blocks(ad::matmul(ctx.basis_qt(), ad::blocks_to_cols(v, b)), b);
  const Value mixed = ad::mode1_product(params.kernel, coeffs);
  Value out = ad::cols_to_blocks(ad::matmul(ctx.basis_q(), ad::blocks_to_cols(mixed, b)), b);
  if (config.spectral_skip) out = ad::add(out, ad::matmul(v, params.skip));
  return ad::layer_norm_rows(ad::gelu(out), params.norm_gain, params.norm_bias);
}

Value edge_gates(const GraphContext& ctx, const BlockParams& params) {
  if (!ctx.edge_weights().defined()) {
    throw Error(ErrorKind::kConfig, "spatial block needs edge weights on the graph");
  }
  const Value weight_features = apply(params.gate_weight, ctx.edge_weights());
  const Value input = ad::concat_cols(ctx.edge_anchor_features(), weight_features);
  return ad::sigmoid(apply(params.gate_out, ad::relu(apply(params.gate_in, input))));
}

Value spatial_block(const Value& v, const GraphContext& ctx, const BlockParams& params,
                    std::size_t batch, const ForwardOptions& options) {
  const auto layout = ctx.layout(batch);
  Value gates;
  if (options.gate_override) {
    gates = ad::constant(Matrix::Constant(static_cast<Index>(ctx.num_edges()), 1, *options.gate_override));
  } else {
    gates = edge_gates(ctx, params);
  }
  const Value aggregated = ad::gated_aggregate(ad::matmul(v, params.spatial_w), gates, layout->edge_source,
                                               layout->edge_target, layout->edge_replica,
                                               static_cast<Index>(batch * ctx.num_nodes()));
  return ad::l2_normalize_rows(aggregated);
}

Value collaboration(const Value& v_spatial, const Value& v_spectral, const Value& v_prev,
                    const BlockParams& params, const VirsoConfig& config) {
  Value out;
  switch (config.variant) {
    case Variant::kFull: {
      out = apply(params.collab, ad::concat_cols(v_spatial, v_spectral));
      if (config.collaboration == Collaboration::kNonlinear) out = apply(params.collab_out, ad::gelu(out));
      break;
    }
    case Variant::kSpectralOnly: out = v_spectral; break;
    case Variant::kSpatialOnly: out = v_spatial; break;
  }
  if (config.identity_skip) out = ad::add(out, v_prev);
  return out;
}

Value forward(const VirsoModel& model, const GraphContext& ctx, const Matrix& inputs,
              const ForwardOptions& options) {
  const auto& config = model.config;
  const auto batch = static_cast<std::size_t>(inputs.rows());
  if (batch == 0) throw Error(ErrorKind::kShapeMismatch, "empty input batch");
  if (ctx.points().dim() != config.spatial_dim) {
    throw Error(ErrorKind::kShapeMismatch, "mesh dimension differs from configured spatial_dim");
  }
  const Value embedding = embed_input(model, ad::constant(inputs));
  Value v = apply(model.lift, assemble_node_features(ctx, embedding));
  for (std::size_t t = 0; t < model.blocks.size(); ++t) {
    try {
      const auto& params = model.blocks[t];
      Value spec, spat;
      if (config.uses_spectral()) spec = spectral_block(v, ctx, params, config, batch);
      if (config.uses_spatial()) spat = spatial_block(v, ctx, params, batch, options);
      v = collaboration(spat, spec, v, params, config);
    } catch (const Error& e) {
      throw Error(e.kind(), "block " + std::to_string(t) + ": " + e.what());
    }
  }
  return apply(model.head2, ad::gelu(apply(model.head1, v)));
}

FlopBreakdown flop_count(const VirsoConfig& c, std::size_t n_nodes, std::size_t edges) {
  const double n = static_cast<double>(n_nodes);
  const double e = static_cast<double>(edges);
  const double dv = static_cast<double>(c.d_v);
  const double m = static_cast<double>(c.modes);
  const double t = static_cast<double>(c.blocks);
  FlopBreakdown f;
  f.embed = 2.0 * (static_cast<double>(c.input_width * c.embed_hidden) +
                   static_cast<double>(c.embed_hidden * c.d_latent));
  f.lift = 2.0 * n * static_cast<double>(c.spatial_dim + c.d_latent) * dv;
  if (c.uses_spectral()) {
    double per = 4.0 * n * m * dv + 2.0 * m * dv * dv;
    if (c.spectral_skip) per += 2.0 * n * dv * dv;
    f.spectral = t * per;
  }
  if (c.uses_spatial()) {
    const double gate = 2.0 * static_cast<double>((2 * c.alpha_anchors + c.gate_weight_width) * c.gate_hidden) +
                        2.0 * static_cast<double>(c.gate_hidden);
    f.spatial = t * (2.0 * e * (dv + gate) + 2.0 * n * dv * dv);
  }
  if (c.variant == Variant::kFull) {
    double per = 2.0 * n * 2.0 * dv * dv;
    if (c.collaboration == Collaboration::kNonlinear) per += 2.0 * n * dv * dv;
    f.collaboration = t * per;
  }
  f.head = 2.0 * n * (dv * static_cast<double>(c.head_hidden) +
                      static_cast<double>(c.head_hidden * c.output_channels));
  f.total = f.embed + f.lift + f.spectral + f.spatial + f.collaboration + f.head;

  std::ostringstream formula;
  formula << "embed 2(q*He + He*dl) + lift 2n(d+dl)dv"
          << " + T*[spectral 4n*m*dv + 2m*dv^2 + 2n*dv^2(skip)]"
          << " + T*[spatial 2E(dv + 2(2a+gw)gh + 2gh) + 2n*dv^2]"
          << " + T*[collab 4n*dv^2 (+2n*dv^2 nonlinear)]"
          << " + head 2n(dv*Hq + Hq*C)";
  f.formula = formula.str();
  return f;
}

}  // namespace virso::model
