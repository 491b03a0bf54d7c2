#include "virso/cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "virso/bench.hpp"
#include "virso/error.hpp"

namespace virso::cli {

namespace {

using Clock = std::chrono::steady_clock;

std::size_t g_threads = 1;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename T>
void opt(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::kConfig, where + "." + key + " has the wrong type");
  }
}

void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::kConfig, where + " must be an object");
}

// Derived fields may be spelled out in a config, but only with the derived value.
template <typename T>
void check_derived(const Json& j, const char* key, const T& derived, const std::string& where) {
  if (!j.contains(key)) return;
  T given{};
  opt(j, key, given, where);
  if (given != derived) {
    throw Error(ErrorKind::kConfig, where + "." + key + " is derived and must equal " + Json(derived).dump());
  }
}

const std::vector<std::string> kVariantOrder{"spatial_only", "spectral_only", "no_skip", "full"};

model::VirsoConfig variant_config(model::VirsoConfig c, const std::string& name) {
  if (name == "full") {
    c.variant = model::Variant::kFull;
  } else if (name == "spectral_only") {
    c.variant = model::Variant::kSpectralOnly;
  } else if (name == "spatial_only") {
    c.variant = model::Variant::kSpatialOnly;
  } else if (name == "no_skip") {
    c.variant = model::Variant::kSpectralOnly;
    c.identity_skip = false;
    c.spectral_skip = false;
  } else {
    throw Error(ErrorKind::kConfig, "unknown ablation variant '" + name + "'");
  }
  return c;
}

Json percentiles_json(const train::Percentiles& p) {
  return {{"best", p.best}, {"p25", p.p25}, {"p50", p.p50}, {"p75", p.p75}, {"p95", p.p95}, {"worst", p.worst}};
}

Json eval_json(const train::EvalReport& r) {
  Json ch = Json::array();
  for (const auto& p : r.channel_percentiles) ch.push_back(percentiles_json(p));
  return {{"samples", r.samples},
          {"mean", r.mean},
          {"mean_percent", 100.0 * r.mean},
          {"channel_mean", r.channel_mean},
          {"percentiles", percentiles_json(r.percentiles)},
          {"channel_percentiles", ch}};
}

Json summary(const std::string& command, const Json& config, std::uint64_t seed, Json result,
             Clock::time_point t0) {
  return {{"command", command},       {"schema_version", 1},          {"seed", seed},
          {"threads", g_threads},     {"config", config},             {"result", std::move(result)},
          {"wall_seconds", seconds_since(t0)}};
}

void write_summary(const fs::path& dir, const Json& s) {
  io::write_json(dir / ("summary." + s.at("command").get<std::string>() + ".json"), s);
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_dataset_matches(const train::Dataset& data, const model::VirsoConfig& c) {
  if (data.q != c.input_width || data.channels != c.output_channels) {
    throw Error(ErrorKind::kConfig, "dataset has q=" + std::to_string(data.q) + ", C=" +
                                        std::to_string(data.channels) + " but the model expects q=" +
                                        std::to_string(c.input_width) + ", C=" + std::to_string(c.output_channels));
  }
}

struct Loaded {
  io::Checkpoint ck;
  train::Dataset data;
  std::unique_ptr<model::GraphContext> ctx;
};

Loaded load_trained(const fs::path& dir) {
  Loaded l{io::read_checkpoint(dir / kCheckpointFile), io::read_dataset(dir / kDatasetFile), nullptr};
  check_dataset_matches(l.data, l.ck.model.config);
  l.ctx = std::make_unique<model::GraphContext>(load_context(dir, l.ck.model.config));
  const auto hash = spectral::graph_content_hash(l.ctx->graph());
  if (hash != l.ck.graph_hash) {
    throw Error(ErrorKind::kMissingArtifact, "checkpoint was trained on graph " + io::hex64(l.ck.graph_hash) +
                                                 " but " + (dir / kGraphFile).string() + " is " + io::hex64(hash) +
                                                 "; retrain after prep-graph");
  }
  if (l.ctx->num_nodes() != l.data.n) throw Error(ErrorKind::kShapeMismatch, "graph and dataset node counts differ");
  return l;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(GraphMethod m) {
  switch (m) {
    case GraphMethod::kKnn:
      return "knn";
    case GraphMethod::kRadius:
      return "radius";
    case GraphMethod::kVknn:
      return "vknn";
  }
  return "knn";
}

GraphMethod graph_method_from_string(const std::string& s) {
  if (s == "knn") return GraphMethod::kKnn;
  if (s == "radius") return GraphMethod::kRadius;
  if (s == "vknn") return GraphMethod::kVknn;
  throw Error(ErrorKind::kConfig, "graph method must be knn, radius or vknn (got '" + s + "')");
}

void RunConfig::resolve() {
  if (schema_version != 1) {
    throw Error(ErrorKind::kConfig, "schema_version " + std::to_string(schema_version) + " is not supported");
  }
  data.seed = seed;
  model.anchor_seed = seed;
  train.seed = seed;
  lobpcg.seed = seed;
  model.input_width = data.input_width();
  model.output_channels = synth::kChannels;
  model.spatial_dim = 2;

  data.validate();
  model.validate();
  train.validate();
  const auto n = data.n_target;
  switch (graph.method) {
    case GraphMethod::kKnn:
      if (graph.k < 1 || graph.k >= n) throw Error(ErrorKind::kConfig, "graph.k must be in [1, n)");
      break;
    case GraphMethod::kRadius:
      if (!(graph.radius > 0.0)) throw Error(ErrorKind::kConfig, "graph.radius must be positive");
      break;
    case GraphMethod::kVknn:
      try {
        mesh::VknnConfig{graph.k_min, graph.k_max, graph.alpha_floor, graph.density_radius}.validate(n);
      } catch (const Error& e) {
        throw Error(ErrorKind::kConfig, std::string("graph: ") + e.what());
      }
      break;
  }
  if (!(lobpcg.tol > 0.0) || lobpcg.max_iter < 1) throw Error(ErrorKind::kConfig, "lobpcg.tol/max_iter invalid");
  if (gradcheck.n < 10 || gradcheck.samples < 1 || gradcheck.probes < 1 || !(gradcheck.tolerance > 0.0) ||
      gradcheck.blocks < 1 || gradcheck.d_v < 1 || gradcheck.modes < 1) {
    throw Error(ErrorKind::kConfig, "gradcheck section invalid (n >= 10, positive sizes and tolerance)");
  }
  if (bench.samples < 1 || bench.repeats < 1 || !(bench.interval_s > 0.0)) {
    throw Error(ErrorKind::kConfig, "bench.samples, bench.repeats and bench.interval_s must be positive");
  }
  try {
    bench::scope_from_string(bench.scope);
  } catch (const Error& e) {
    throw Error(ErrorKind::kConfig, std::string("bench.scope: ") + e.what());
  }
  if (!bench.telemetry.empty() && bench.telemetry_iterations < 1) {
    throw Error(ErrorKind::kConfig, "bench.telemetry_iterations must be set with bench.telemetry");
  }
  if (ablation.graphs.empty() || ablation.variants.empty()) {
    throw Error(ErrorKind::kConfig, "ablation.graphs and ablation.variants must be non-empty");
  }
  for (const auto& v : ablation.variants) variant_config(model, v);
  if (out.empty()) throw Error(ErrorKind::kConfig, "out must be non-empty");
}

Json to_json(const RunConfig& c) {
  Json graphs = Json::array();
  for (auto g : c.ablation.graphs) graphs.push_back(to_string(g));
  return {{"schema_version", c.schema_version},
          {"seed", c.seed},
          {"data", io::to_json(c.data)},
          {"graph",
           {{"method", to_string(c.graph.method)},
            {"k", c.graph.k},
            {"radius", c.graph.radius},
            {"k_min", c.graph.k_min},
            {"k_max", c.graph.k_max},
            {"alpha_floor", c.graph.alpha_floor},
            {"density_radius", c.graph.density_radius}}},
          {"model", io::to_json(c.model)},
          {"train", io::to_json(c.train)},
          {"normalization", {{"input", train::to_string(c.input_norm)}, {"target", train::to_string(c.target_norm)}}},
          {"lobpcg", {{"tol", c.lobpcg.tol}, {"max_iter", c.lobpcg.max_iter}, {"jacobi", c.lobpcg.jacobi}}},
          {"gradcheck",
           {{"n", c.gradcheck.n},
            {"blocks", c.gradcheck.blocks},
            {"d_v", c.gradcheck.d_v},
            {"modes", c.gradcheck.modes},
            {"samples", c.gradcheck.samples},
            {"probes", c.gradcheck.probes},
            {"tolerance", c.gradcheck.tolerance}}},
          {"bench",
           {{"samples", c.bench.samples},
            {"warmup", c.bench.warmup},
            {"repeats", c.bench.repeats},
            {"telemetry", c.bench.telemetry},
            {"interval_s", c.bench.interval_s},
            {"telemetry_iterations", c.bench.telemetry_iterations},
            {"scope", c.bench.scope},
            {"label", c.bench.label}}},
          {"ablation", {{"graphs", graphs}, {"variants", c.ablation.variants}, {"max_epochs", c.ablation.max_epochs}}},
          {"out", c.out}};
}

RunConfig run_config_from_json(const Json& j) {
  require_object(j, "config");
  io::reject_unknown_keys(j,
                          {"schema_version", "seed", "data", "graph", "model", "train", "normalization", "lobpcg",
                           "gradcheck", "bench", "ablation", "out"},
                          "config");
  RunConfig c;
  if (!j.contains("schema_version")) throw Error(ErrorKind::kConfig, "config.schema_version is required");
  opt(j, "schema_version", c.schema_version, "config");
  if (c.schema_version != 1) {
    throw Error(ErrorKind::kConfig, "schema_version " + std::to_string(c.schema_version) + " is not supported");
  }
  opt(j, "seed", c.seed, "config");
  opt(j, "out", c.out, "config");

  if (j.contains("data")) {
    require_object(j["data"], "data");
    check_derived(j["data"], "seed", c.seed, "data");
    c.data = io::synth_spec_from_json(j["data"]);
  }
  if (j.contains("graph")) {
    const Json& g = j["graph"];
    require_object(g, "graph");
    io::reject_unknown_keys(g, {"method", "k", "radius", "k_min", "k_max", "alpha_floor", "density_radius"}, "graph");
    std::string method = to_string(c.graph.method);
    opt(g, "method", method, "graph");
    c.graph.method = graph_method_from_string(method);
    opt(g, "k", c.graph.k, "graph");
    opt(g, "radius", c.graph.radius, "graph");
    opt(g, "k_min", c.graph.k_min, "graph");
    opt(g, "k_max", c.graph.k_max, "graph");
    opt(g, "alpha_floor", c.graph.alpha_floor, "graph");
    opt(g, "density_radius", c.graph.density_radius, "graph");
  }
  if (j.contains("model")) {
    const Json& m = j["model"];
    require_object(m, "model");
    check_derived(m, "anchor_seed", c.seed, "model");
    check_derived(m, "input_width", c.data.input_width(), "model");
    check_derived(m, "output_channels", synth::kChannels, "model");
    check_derived(m, "spatial_dim", std::size_t{2}, "model");
    Json filled = m;
    filled["anchor_seed"] = c.seed;
    filled["input_width"] = c.data.input_width();
    filled["output_channels"] = synth::kChannels;
    filled["spatial_dim"] = 2;
    c.model = io::model_config_from_json(filled);
  }
  if (j.contains("train")) {
    require_object(j["train"], "train");
    check_derived(j["train"], "seed", c.seed, "train");
    c.train = io::schedule_from_json(j["train"]);
  }
  if (j.contains("normalization")) {
    const Json& nj = j["normalization"];
    require_object(nj, "normalization");
    io::reject_unknown_keys(nj, {"input", "target"}, "normalization");
    std::string in = train::to_string(c.input_norm), tg = train::to_string(c.target_norm);
    opt(nj, "input", in, "normalization");
    opt(nj, "target", tg, "normalization");
    try {
      c.input_norm = train::norm_mode_from_string(in);
      c.target_norm = train::norm_mode_from_string(tg);
    } catch (const Error& e) {
      throw Error(ErrorKind::kConfig, std::string("normalization: ") + e.what());
    }
  }
  if (j.contains("lobpcg")) {
    const Json& l = j["lobpcg"];
    require_object(l, "lobpcg");
    io::reject_unknown_keys(l, {"tol", "max_iter", "jacobi"}, "lobpcg");
    opt(l, "tol", c.lobpcg.tol, "lobpcg");
    opt(l, "max_iter", c.lobpcg.max_iter, "lobpcg");
    opt(l, "jacobi", c.lobpcg.jacobi, "lobpcg");
  }
  if (j.contains("gradcheck")) {
    const Json& g = j["gradcheck"];
    require_object(g, "gradcheck");
    io::reject_unknown_keys(g, {"n", "blocks", "d_v", "modes", "samples", "probes", "tolerance"}, "gradcheck");
    opt(g, "n", c.gradcheck.n, "gradcheck");
    opt(g, "blocks", c.gradcheck.blocks, "gradcheck");
    opt(g, "d_v", c.gradcheck.d_v, "gradcheck");
    opt(g, "modes", c.gradcheck.modes, "gradcheck");
    opt(g, "samples", c.gradcheck.samples, "gradcheck");
    opt(g, "probes", c.gradcheck.probes, "gradcheck");
    opt(g, "tolerance", c.gradcheck.tolerance, "gradcheck");
  }
  if (j.contains("bench")) {
    const Json& b = j["bench"];
    require_object(b, "bench");
    io::reject_unknown_keys(b,
                            {"samples", "warmup", "repeats", "telemetry", "interval_s", "telemetry_iterations",
                             "scope", "label"},
                            "bench");
    opt(b, "samples", c.bench.samples, "bench");
    opt(b, "warmup", c.bench.warmup, "bench");
    opt(b, "repeats", c.bench.repeats, "bench");
    opt(b, "telemetry", c.bench.telemetry, "bench");
    opt(b, "interval_s", c.bench.interval_s, "bench");
    opt(b, "telemetry_iterations", c.bench.telemetry_iterations, "bench");
    opt(b, "scope", c.bench.scope, "bench");
    opt(b, "label", c.bench.label, "bench");
  }
  if (j.contains("ablation")) {
    const Json& a = j["ablation"];
    require_object(a, "ablation");
    io::reject_unknown_keys(a, {"graphs", "variants", "max_epochs"}, "ablation");
    if (a.contains("graphs")) {
      std::vector<std::string> names;
      opt(a, "graphs", names, "ablation");
      c.ablation.graphs.clear();
      for (const auto& s : names) c.ablation.graphs.push_back(graph_method_from_string(s));
    }
    opt(a, "variants", c.ablation.variants, "ablation");
    opt(a, "max_epochs", c.ablation.max_epochs, "ablation");
  }
  try {
    c.resolve();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfig) throw;
    throw Error(ErrorKind::kConfig, e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(io::read_json(path)); }

// ---------------------------------------------------------------------------
// Artifacts

std::string artifact_hash(const fs::path& manifest) {
  std::vector<fs::path> files{manifest};
  const std::string prefix = manifest.stem().string() + ".";
  std::vector<fs::path> blobs;
  if (fs::exists(manifest.parent_path())) {
    for (const auto& e : fs::directory_iterator(manifest.parent_path())) {
      const auto name = e.path().filename().string();
      if (name.rfind(prefix, 0) == 0 && e.path().extension() == ".bin") blobs.push_back(e.path());
    }
  }
  std::sort(blobs.begin(), blobs.end());
  files.insert(files.end(), blobs.begin(), blobs.end());
  std::string joined;
  for (const auto& f : files) joined += f.filename().string() + ":" + io::file_hash(f) + ";";
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : joined) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return io::hex64(h);
}

mesh::Graph build_graph(const GraphSpec& spec, const mesh::PointCloud& points, Json* stats) {
  mesh::Graph g;
  Json extra = Json::object();
  switch (spec.method) {
    case GraphMethod::kKnn:
      g = mesh::build_knn(points, spec.k);
      break;
    case GraphMethod::kRadius:
      g = mesh::build_radius(points, spec.radius);
      break;
    case GraphMethod::kVknn: {
      auto r = mesh::build_vknn(points, {spec.k_min, spec.k_max, spec.alpha_floor, spec.density_radius});
      const auto pre = mesh::degree_stats(r.neighbor_count);
      extra["pre_symmetrization"] = {{"min_degree", pre.min_degree},
                                     {"max_degree", pre.max_degree},
                                     {"mean_degree", pre.mean_degree}};
      g = std::move(r.graph);
      break;
    }
  }
  g = io::round_weights_to_f32(mesh::compute_edge_weights(std::move(g), points));
  if (stats) {
    const auto s = mesh::degree_stats(g);
    extra["method"] = to_string(spec.method);
    extra["undirected_edges"] = s.edge_count;
    extra["min_degree"] = s.min_degree;
    extra["max_degree"] = s.max_degree;
    extra["mean_degree"] = s.mean_degree;
    extra["isolated"] = s.isolated;
    *stats = extra;
  }
  return g;
}

model::GraphContext load_context(const fs::path& dir, const model::VirsoConfig& config) {
  auto points = io::read_point_cloud(dir / kPointsFile);
  auto graph = io::read_graph(dir / kGraphFile);
  if (graph.num_nodes() != points.size()) {
    throw Error(ErrorKind::kShapeMismatch, "graph and point cloud node counts differ; rerun prep-graph");
  }
  const auto hash = spectral::graph_content_hash(graph);
  spectral::EigenBasis basis;
  if (config.uses_spectral()) {
    basis = io::read_basis(dir / kBasisFile, hash);
    if (basis.modes() != config.modes) {
      throw Error(ErrorKind::kMissingArtifact, (dir / kBasisFile).string() + " holds " +
                                                   std::to_string(basis.modes()) + " modes but the model needs " +
                                                   std::to_string(config.modes) + "; rerun prep-graph");
    }
  } else {
    basis.q = Matrix::Zero(static_cast<Eigen::Index>(points.size()), 0);
    basis.sigma = Vector(0);
  }
  auto anchors = mesh::anchor_embeddings(graph, config.alpha_anchors, config.anchor_seed);
  return model::GraphContext(std::move(points), std::move(graph), std::move(basis), std::move(anchors));
}

// ---------------------------------------------------------------------------
// Commands

Json gen_data(const RunConfig& c, const fs::path& dir) {
  const auto t0 = Clock::now();
  prepare_dir(dir);
  const auto r = synth::generate_dataset(c.data);
  io::write_point_cloud(dir / kPointsFile, r.points);
  io::write_dataset(dir / kDatasetFile, r.dataset,
                    {{"generator", "synthetic"},
                     {"spec", io::to_json(c.data)},
                     {"seed", c.seed},
                     {"reconstruction_ratio", r.reconstruction_ratio}});
  Json result{{"nodes", r.points.size()},
              {"samples", r.dataset.size()},
              {"train", r.dataset.indices(train::Split::kTrain).size()},
              {"val", r.dataset.indices(train::Split::kVal).size()},
              {"test", r.dataset.indices(train::Split::kTest).size()},
              {"reconstruction_ratio", r.reconstruction_ratio},
              {"points_hash", artifact_hash(dir / kPointsFile)},
              {"dataset_hash", artifact_hash(dir / kDatasetFile)}};
  spdlog::info("gen-data: {} samples on {} nodes, ratio {:.2f}", r.dataset.size(), r.points.size(),
               r.reconstruction_ratio);
  auto s = summary("gen-data", to_json(c), c.seed, std::move(result), t0);
  write_summary(dir, s);
  return s;
}

Json prep_graph(const RunConfig& c, const fs::path& dir) {
  const auto t0 = Clock::now();
  prepare_dir(dir);
  const auto points = io::read_point_cloud(dir / kPointsFile);
  Json stats;
  const auto graph = build_graph(c.graph, points, &stats);
  const auto hash = spectral::graph_content_hash(graph);
  Json graph_spec = to_json(c).at("graph");
  io::write_graph(dir / kGraphFile, graph, {{"spec", graph_spec}, {"stats", stats}});
  spdlog::info("prep-graph: {} graph, {} undirected edges, hash {}", to_string(c.graph.method),
               graph.num_undirected_edges(), io::hex64(hash));

  Json result{{"graph", stats}, {"graph_hash", io::hex64(hash)}};
  const auto lap = spectral::normalized_laplacian(graph, c.model.weighted_laplacian);
  spectral::LobpcgStats ls;
  const auto basis = spectral::lobpcg_smallest(lap, c.model.modes, c.lobpcg, &ls);
  io::write_basis(dir / kBasisFile, basis, hash);
  result["basis"] = {{"modes", basis.modes()},
                     {"iterations", ls.iterations},
                     {"max_residual", ls.max_residual},
                     {"sigma", std::vector<double>(basis.sigma.data(), basis.sigma.data() + basis.sigma.size())}};
  spdlog::info("prep-graph: {} modes in {} LOBPCG iterations, residual {:.2e}", basis.modes(), ls.iterations,
               ls.max_residual);
  auto s = summary("prep-graph", to_json(c), c.seed, std::move(result), t0);
  write_summary(dir, s);
  return s;
}

Json train_model(const RunConfig& c, const fs::path& dir) {
  const auto t0 = Clock::now();
  prepare_dir(dir);
  const auto data = io::read_dataset(dir / kDatasetFile);
  check_dataset_matches(data, c.model);
  const auto ctx = load_context(dir, c.model);
  if (ctx.num_nodes() != data.n) throw Error(ErrorKind::kShapeMismatch, "graph and dataset node counts differ");
  const auto graph_hash = spectral::graph_content_hash(ctx.graph());

  const auto norms = train::fit_normalizers(data, c.input_norm, c.target_norm);
  auto m = model::VirsoModel::initialize(c.model, c.seed);
  spdlog::info("train: {} parameters, {} train / {} val samples", model::parameter_count(c.model),
               data.indices(train::Split::kTrain).size(), data.indices(train::Split::kVal).size());
  const auto report = train::fit(m, ctx, norms, data, c.train, [](const train::EpochRecord& r) {
    const auto level = r.epoch % 10 == 0 ? spdlog::level::info : spdlog::level::debug;
    spdlog::log(level, "epoch {:4d}  train {:.5f}  val {:.5f}  lr {:.2e}  {:.2f}s", r.epoch, r.train_loss,
                r.val_loss, r.lr, r.seconds);
  });
  const auto test = train::evaluate(m, ctx, norms, data, data.indices(train::Split::kTest));
  spdlog::info("train: stopped ({}) after {} epochs, best epoch {}, test mean {:.3f}%", report.stop_reason,
               report.epochs.size(), report.best_epoch, 100.0 * test.mean);

  io::write_checkpoint(dir / kCheckpointFile, m, norms, graph_hash,
                       {{"best_epoch", report.best_epoch},
                        {"best_val_loss", report.best_val_loss},
                        {"epochs_run", report.epochs.size()},
                        {"stop_reason", report.stop_reason},
                        {"seed", c.seed}});
  std::ostringstream curve;
  curve << "epoch,train_loss,val_loss,lr\n";
  Json epochs = Json::array();
  for (const auto& e : report.epochs) {
    curve << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << ','
          << format_double(e.lr) << '\n';
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"lr", e.lr},
                      {"seconds", e.seconds}});
  }
  io::write_text(dir / kCurveFile, curve.str());

  Json result{{"parameter_count", model::parameter_count(c.model)},
              {"initial_val_loss", report.initial_val_loss},
              {"best_epoch", report.best_epoch},
              {"best_val_loss", report.best_val_loss},
              {"stop_reason", report.stop_reason},
              {"epochs", epochs},
              {"train_seconds", report.wall_seconds},
              {"test", eval_json(test)},
              {"dataset_hash", artifact_hash(dir / kDatasetFile)},
              {"graph_hash", io::hex64(graph_hash)},
              {"checkpoint_hash", artifact_hash(dir / kCheckpointFile)},
              {"curve_hash", io::file_hash(dir / kCurveFile)}};
  auto s = summary("train", to_json(c), c.seed, std::move(result), t0);
  write_summary(dir, s);
  return s;
}

Json eval_model(const RunConfig& c, const fs::path& dir) {
  const auto t0 = Clock::now();
  const auto l = load_trained(dir);
  Json result{{"checkpoint_hash", artifact_hash(dir / kCheckpointFile)},
              {"model", io::to_json(l.ck.model.config)}};
  for (auto split : {train::Split::kVal, train::Split::kTest}) {
    const auto idx = l.data.indices(split);
    if (idx.empty()) continue;
    const auto r = train::evaluate(l.ck.model, *l.ctx, l.ck.norms, l.data, idx);
    result[train::to_string(split)] = eval_json(r);
    spdlog::info("eval: {} mean relative L2 {:.3f}% over {} samples", train::to_string(split), 100.0 * r.mean,
                 r.samples);
  }
  auto s = summary("eval", to_json(c), c.seed, std::move(result), t0);
  write_summary(dir, s);
  return s;
}

Json ablate(const RunConfig& c, const fs::path& dir) {
  const auto t0 = Clock::now();
  prepare_dir(dir);
  const auto points = io::read_point_cloud(dir / kPointsFile);
  const auto data = io::read_dataset(dir / kDatasetFile);
  check_dataset_matches(data, c.model);
  const auto norms = train::fit_normalizers(data, c.input_norm, c.target_norm);
  train::Schedule schedule = c.train;
  if (c.ablation.max_epochs > 0) schedule.max_epochs = c.ablation.max_epochs;

  Json rows = Json::array();
  Json checks = Json::object();
  std::ostringstream csv;
  csv << "graph,variant,parameters,edges";
  for (std::size_t ch = 0; ch < data.channels; ++ch) csv << ",error_ch" << ch << "_percent";
  csv << ",mean_percent,best_epoch,epochs\n";

  for (auto method : c.ablation.graphs) {
    GraphSpec gs = c.graph;
    gs.method = method;
    Json stats;
    auto graph = build_graph(gs, points, &stats);
    const auto lap = spectral::normalized_laplacian(graph, c.model.weighted_laplacian);
    auto basis = spectral::lobpcg_smallest(lap, c.model.modes, c.lobpcg);
    auto anchors = mesh::anchor_embeddings(graph, c.model.alpha_anchors, c.model.anchor_seed);
    const model::GraphContext ctx(points, std::move(graph), std::move(basis), std::move(anchors));

    std::map<std::string, double> mean;
    for (const auto& name : kVariantOrder) {
      if (std::find(c.ablation.variants.begin(), c.ablation.variants.end(), name) == c.ablation.variants.end()) {
        continue;
      }
      const auto cfg = variant_config(c.model, name);
      auto m = model::VirsoModel::initialize(cfg, c.seed);
      const auto rep = train::fit(m, ctx, norms, data, schedule);
      const auto test = train::evaluate(m, ctx, norms, data, data.indices(train::Split::kTest));
      mean[name] = test.mean;
      spdlog::info("ablate: {} / {}: test {:.3f}% after {} epochs", to_string(method), name, 100.0 * test.mean,
                   rep.epochs.size());
      csv << to_string(method) << ',' << name << ',' << model::parameter_count(cfg) << ','
          << stats.at("undirected_edges").get<std::size_t>();
      for (double e : test.channel_mean) csv << ',' << format_double(100.0 * e);
      csv << ',' << format_double(100.0 * test.mean) << ',' << rep.best_epoch << ',' << rep.epochs.size() << '\n';
      rows.push_back({{"graph", to_string(method)},
                      {"variant", name},
                      {"parameters", model::parameter_count(cfg)},
                      {"graph_stats", stats},
                      {"test", eval_json(test)},
                      {"best_epoch", rep.best_epoch},
                      {"epochs", rep.epochs.size()},
                      {"train_seconds", rep.wall_seconds}});
    }
    Json g = Json::object();
    if (mean.count("spectral_only") && mean.count("spatial_only")) {
      g["spectral_only_below_spatial_only"] = mean["spectral_only"] < mean["spatial_only"];
    }
    if (mean.count("spectral_only") && mean.count("no_skip")) {
      g["skip_below_no_skip"] = mean["spectral_only"] < mean["no_skip"];
    }
    checks[to_string(method)] = g;
  }
  io::write_text(dir / "ablation.csv", csv.str());
  io::write_json(dir / "ablation.json", rows);
  auto s = summary("ablate", to_json(c), c.seed,
                   {{"rows", rows}, {"orderings", checks}, {"dataset_hash", artifact_hash(dir / kDatasetFile)}}, t0);
  write_summary(dir, s);
  return s;
}

Json gradcheck(const RunConfig& c, const fs::path& dir) {
  const auto t0 = Clock::now();
  prepare_dir(dir);
  const auto& g = c.gradcheck;
  synth::SynthSpec spec = c.data;
  spec.n_target = g.n;
  spec.sample_count = std::max<std::size_t>(10, g.samples);
  const auto r = synth::generate_dataset(spec);

  model::VirsoConfig cfg = c.model;
  cfg.blocks = g.blocks;
  cfg.d_v = g.d_v;
  cfg.modes = g.modes;
  cfg.alpha_anchors = std::min(cfg.alpha_anchors, g.n - 1);
  cfg.validate();
  GraphSpec gs = c.graph;
  gs.k = std::min(gs.k, g.n - 1);
  auto graph = build_graph(gs, r.points);
  const auto ctx = model::prepare_context(r.points, std::move(graph), cfg, c.lobpcg);
  const auto norms = train::fit_normalizers(r.dataset, c.input_norm, c.target_norm);
  const auto m = model::VirsoModel::initialize(cfg, c.seed);
  std::vector<std::size_t> idx(g.samples);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto params = m.parameters();
  ad::GradCheckOptions opt;
  opt.probe_count = g.probes;
  opt.seed = c.seed;
  const auto res = ad::grad_check(
      [&] { return train::training_loss(m, ctx, norms, r.dataset, idx, c.train); }, params, opt);
  const bool passed = res.max_relative_error < g.tolerance;
  spdlog::info("gradcheck: max relative error {:.3e} ({}) over {} probes: {}", res.max_relative_error,
               res.worst_parameter, g.probes, passed ? "pass" : "FAIL");
  Json result{{"max_relative_error", res.max_relative_error},
              {"worst_parameter", res.worst_parameter},
              {"probes", g.probes},
              {"tolerance", g.tolerance},
              {"passed", passed},
              {"parameter_count", model::parameter_count(cfg)},
              {"seconds", seconds_since(t0)}};
  auto s = summary("gradcheck", to_json(c), c.seed, std::move(result), t0);
  write_summary(dir, s);
  return s;
}

Json bench_model(const RunConfig& c, const fs::path& dir) {
  const auto t0 = Clock::now();
  const auto l = load_trained(dir);
  const auto test = l.data.indices(train::Split::kTest);
  if (test.empty()) throw Error(ErrorKind::kInvalidInput, "bench needs a non-empty test split");
  const std::size_t count = std::min(c.bench.samples, test.size());
  Matrix inputs(static_cast<Eigen::Index>(count), l.data.inputs.cols());
  for (std::size_t i = 0; i < count; ++i) inputs.row(static_cast<Eigen::Index>(i)) = l.data.inputs.row(test[i]);

  const double latency = bench::measure_latency(
      [&](std::size_t i) { train::predict(l.ck.model, *l.ctx, l.ck.norms, inputs.row(static_cast<Eigen::Index>(i)), 1); },
      count, c.bench.warmup, c.bench.repeats);
  const auto err = train::evaluate(l.ck.model, *l.ctx, l.ck.norms, l.data, test);
  const auto flops = model::flop_count(l.ck.model.config, l.ctx->num_nodes(), l.ctx->num_edges());

  bench::BenchReport r;
  r.model = c.bench.label;
  r.error_percent = 100.0 * err.mean;
  r.flops = flops.total;
  r.latency_ms_per_it = latency;
  r.dataset_size = count;
  r.scope = bench::scope_from_string(c.bench.scope);
  Json energy = nullptr;
  if (!c.bench.telemetry.empty()) {
    const auto trace = bench::read_telemetry_csv(c.bench.telemetry, c.bench.interval_s, r.scope);
    r.energy_j_per_it = bench::energy_per_iteration(trace, c.bench.telemetry_iterations);
    const double span = trace.samples.back().t_s - trace.samples.front().t_s + trace.interval_s;
    r.power_w = bench::energy_per_iteration(trace, 1) / span;
    r.derive();
    energy = {{"trace", c.bench.telemetry}, {"iterations", c.bench.telemetry_iterations}};
  } else {
    spdlog::info("bench: no telemetry trace configured; energy and EDP left at 0");
  }
  const auto out = bench::emit_report({r});
  io::write_text(dir / "bench.csv", out.csv);
  io::write_text(dir / "bench.json", out.json);
  spdlog::info("bench: {:.3f} ms/sample, {:.3g} FLOPs, error {:.3f}%", latency, flops.total, r.error_percent);
  Json result{{"latency_ms", latency},
              {"flops", flops.total},
              {"flop_formula", flops.formula},
              {"error_percent", r.error_percent},
              {"energy_j", r.energy_j_per_it},
              {"edp_j_ms", r.edp_j_ms},
              {"eta_per_watt", r.eta_per_watt},
              {"power_w", r.power_w},
              {"scope", c.bench.scope},
              {"telemetry", energy},
              {"samples", count},
              {"checkpoint_hash", artifact_hash(dir / kCheckpointFile)}};
  auto s = summary("bench", to_json(c), c.seed, std::move(result), t0);
  write_summary(dir, s);
  return s;
}

Json report(const fs::path& inputs_csv, const fs::path& dir) {
  const auto t0 = Clock::now();
  prepare_dir(dir);
  const auto rows = bench::read_inputs_csv(inputs_csv.string());
  const auto out = bench::emit_report(rows);
  io::write_text(dir / "report.csv", out.csv);
  io::write_text(dir / "report.json", out.json);
  Json table = Json::array();
  for (const auto& r : rows) {
    table.push_back({{"model", r.model}, {"edp_j_ms", r.edp_j_ms}, {"eta_per_watt", r.eta_per_watt}});
    spdlog::info("report: {:<24} EDP {:8.2f} J*ms", r.model, r.edp_j_ms);
  }
  Json s{{"command", "report"},
         {"schema_version", 1},
         {"inputs", inputs_csv.string()},
         {"inputs_hash", io::file_hash(inputs_csv)},
         {"result", {{"rows", table}}},
         {"wall_seconds", seconds_since(t0)}};
  write_summary(dir, s);
  return s;
}

// ---------------------------------------------------------------------------
// Entry point

void configure_logging() {
  auto logger = spdlog::get("virso");
  if (!logger) {
    logger = spdlog::stderr_color_mt("virso");
    spdlog::set_default_logger(logger);
  }
  const char* env = std::getenv("VIRSO_KIT_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    throw Error(ErrorKind::kConfig, "VIRSO_KIT_LOG must be error, info or debug (got '" + level + "')");
  }
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Spectral-spatial graph neural operator toolkit", "virso"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  std::string config_path, out, inputs, variant, graph;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  app.add_option("--config", config_path, "run configuration (JSON)");
  app.add_option("--out", out, "run directory");
  app.add_option("--seed", seed, "override the master seed");
  app.add_option("--threads", threads, "worker threads (1 is fully deterministic)")->check(CLI::PositiveNumber);
  app.add_option("--variant", variant, "full|spectral|spatial")
      ->check(CLI::IsMember({"full", "spectral", "spatial"}));
  app.add_option("--graph", graph, "knn|radius|vknn")->check(CLI::IsMember({"knn", "radius", "vknn"}));
  app.add_option("--inputs", inputs, "published-inputs CSV for report");
  const std::pair<const char*, const char*> commands[] = {
      {"gen-data", "synthesize point cloud and dataset"},
      {"prep-graph", "build the graph and Laplacian eigenbasis"},
      {"train", "fit the model, write checkpoint and loss curve"},
      {"eval", "test-split error from the saved checkpoint"},
      {"ablate", "variant x graph ablation grid"},
      {"gradcheck", "finite-difference gradient check"},
      {"bench", "latency, FLOPs and optional energy"},
      {"report", "EDP table from published inputs"}};
  for (const auto& [name, desc] : commands) app.add_subcommand(name, desc);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    configure_logging();
    g_threads = threads;
    Eigen::setNbThreads(static_cast<int>(threads));

    if (command == "report") {
      if (inputs.empty()) throw Error(ErrorKind::kConfig, "report requires --inputs");
      report(inputs, out.empty() ? fs::path("runs/report") : fs::path(out));
      return 0;
    }

    Json j = config_path.empty() ? Json{{"schema_version", 1}} : io::read_json(config_path);
    require_object(j, "config");
    if (seed) {
      j["seed"] = *seed;
      for (const char* section : {"data", "train"})
        if (j.contains(section) && j[section].is_object()) j[section].erase("seed");
      if (j.contains("model") && j["model"].is_object()) j["model"].erase("anchor_seed");
    }
    if (!variant.empty()) {
      const std::map<std::string, std::string> names{
          {"full", "full"}, {"spectral", "spectral_only"}, {"spatial", "spatial_only"}};
      if (!j.contains("model")) j["model"] = Json::object();
      j["model"]["variant"] = names.at(variant);
    }
    if (!graph.empty()) {
      if (!j.contains("graph")) j["graph"] = Json::object();
      j["graph"]["method"] = graph;
    }
    if (!out.empty()) j["out"] = out;
    const RunConfig cfg = run_config_from_json(j);
    const fs::path dir = cfg.out;
    prepare_dir(dir);
    io::write_json(dir / kRunConfigFile, to_json(cfg));

    if (command == "gen-data") {
      gen_data(cfg, dir);
    } else if (command == "prep-graph") {
      prep_graph(cfg, dir);
    } else if (command == "train") {
      train_model(cfg, dir);
    } else if (command == "eval") {
      eval_model(cfg, dir);
    } else if (command == "ablate") {
      ablate(cfg, dir);
    } else if (command == "gradcheck") {
      if (!gradcheck(cfg, dir).at("result").at("passed").get<bool>()) return 2;
    } else if (command == "bench") {
      bench_model(cfg, dir);
    }
    return 0;
  } catch (const Error& e) {
    spdlog::error("{}: {}", command, e.what());
    return is_validation_error(e.kind()) ? 1 : 2;
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", command, e.what());
    return 2;
  }
}

}  // namespace virso::cli
