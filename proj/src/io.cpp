#include "virso/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "virso/error.hpp"

namespace virso::io {

static_assert(std::endian::native == std::endian::little, "blob layout assumes a little-endian host");

using Index = Eigen::Index;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing artifact '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kInvalidInput, "malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json(const fs::path& path, const Json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

std::string file_hash(const fs::path& path) {
  const std::string bytes = read_text(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

namespace {

fs::path blob_path(const fs::path& manifest, const std::string& part) {
  return manifest.parent_path() / (manifest.stem().string() + "." + part + ".bin");
}

template <typename T>
void write_blob(const fs::path& path, const std::vector<T>& values) {
  std::string bytes(values.size() * sizeof(T), '\0');
  if (!values.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
  write_text(path, bytes);
}

template <typename T>
std::vector<T> read_blob(const fs::path& path, std::size_t count) {
  const std::string bytes = read_text(path);
  if (bytes.size() != count * sizeof(T)) {
    throw Error(ErrorKind::kInvalidInput, "blob '" + path.string() + "' has " + std::to_string(bytes.size()) +
                                              " bytes, expected " + std::to_string(count * sizeof(T)));
  }
  std::vector<T> out(count);
  if (count) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::vector<float> to_f32(const Matrix& m) {
  std::vector<float> out(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return out;
}

Matrix from_f32(const std::vector<float>& v, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(v[static_cast<std::size_t>(i)]);
  return m;
}

template <typename T>
T get(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(ErrorKind::kConfig, where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::kConfig, where + ": bad value for '" + key + "': " + e.what());
  }
}

template <typename T>
void maybe(const Json& j, const char* key, T& out, const std::string& where) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

void check_kind(const Json& j, const char* kind, const fs::path& path) {
  if (!j.is_object() || j.value("kind", "") != kind) {
    throw Error(ErrorKind::kInvalidInput, "'" + path.string() + "' is not a " + kind + " manifest");
  }
}

}  // namespace

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::kConfig, where + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw Error(ErrorKind::kConfig, where + ": unknown key '" + k + "'");
  }
}

// ---------------------------------------------------------------------------

void write_point_cloud(const fs::path& manifest, const mesh::PointCloud& points) {
  const auto blob = blob_path(manifest, "coords");
  write_blob(blob, to_f32(points.coords()));
  write_json(manifest, {{"kind", "point_cloud"},
                        {"n", points.size()},
                        {"d", points.dim()},
                        {"dtype", "float32"},
                        {"layout", "row-major n x d"},
                        {"coords", blob.filename().string()}});
}

mesh::PointCloud read_point_cloud(const fs::path& manifest) {
  const Json j = read_json(manifest);
  check_kind(j, "point_cloud", manifest);
  const auto n = get<std::size_t>(j, "n", "point cloud");
  const auto d = get<std::size_t>(j, "d", "point cloud");
  const auto v = read_blob<float>(manifest.parent_path() / get<std::string>(j, "coords", "point cloud"), n * d);
  return mesh::PointCloud(from_f32(v, static_cast<Index>(n), static_cast<Index>(d)));
}

mesh::Graph round_weights_to_f32(mesh::Graph graph) {
  if (!graph.has_weights()) return graph;
  auto w = graph.weights();
  for (auto& x : w) x = static_cast<double>(static_cast<float>(x));
  graph.set_weights(std::move(w));
  return graph;
}

void write_graph(const fs::path& manifest, const mesh::Graph& graph, const Json& extra) {
  const std::size_t e = graph.num_directed_edges();
  std::vector<std::uint32_t> idx(2 * e);
  for (std::size_t i = 0; i < e; ++i) {
    idx[i] = graph.edges()[i].src;
    idx[e + i] = graph.edges()[i].dst;
  }
  const auto edges_blob = blob_path(manifest, "edges");
  write_blob(edges_blob, idx);
  Json j = {{"kind", "graph"},
            {"n", graph.num_nodes()},
            {"directed_edges", e},
            {"edges", edges_blob.filename().string()},
            {"edges_layout", "uint32 2 x E row-major (sources, then targets)"},
            {"content_hash", hex64(spectral::graph_content_hash(round_weights_to_f32(graph)))}};
  if (graph.has_weights()) {
    std::vector<float> w(graph.weights().begin(), graph.weights().end());
    const auto wblob = blob_path(manifest, "weights");
    write_blob(wblob, w);
    j["weights"] = wblob.filename().string();
  }
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json(manifest, j);
}

mesh::Graph read_graph(const fs::path& manifest) {
  const Json j = read_json(manifest);
  check_kind(j, "graph", manifest);
  const auto n = get<std::size_t>(j, "n", "graph");
  const auto e = get<std::size_t>(j, "directed_edges", "graph");
  const auto idx = read_blob<std::uint32_t>(manifest.parent_path() / get<std::string>(j, "edges", "graph"), 2 * e);
  std::vector<mesh::Edge> edges(e);
  for (std::size_t i = 0; i < e; ++i) edges[i] = {idx[i], idx[e + i]};
  mesh::Graph g(n, std::move(edges));
  if (j.contains("weights")) {
    const auto w = read_blob<float>(manifest.parent_path() / j["weights"].get<std::string>(), e);
    g.set_weights(std::vector<double>(w.begin(), w.end()));
  }
  return g;
}

void write_basis(const fs::path& manifest, const spectral::EigenBasis& basis, std::uint64_t graph_hash) {
  const auto qb = blob_path(manifest, "q");
  const auto sb = blob_path(manifest, "sigma");
  write_blob(qb, to_f32(basis.q));
  write_blob(sb, to_f32(Matrix(basis.sigma.transpose())));
  write_json(manifest, {{"kind", "eigenbasis"},
                        {"n", basis.num_nodes()},
                        {"m", basis.modes()},
                        {"graph_hash", hex64(graph_hash)},
                        {"q", qb.filename().string()},
                        {"sigma", sb.filename().string()},
                        {"sigma_values", std::vector<double>(basis.sigma.data(), basis.sigma.data() + basis.sigma.size())}});
}

spectral::EigenBasis read_basis(const fs::path& manifest, std::uint64_t graph_hash) {
  const Json j = read_json(manifest);
  check_kind(j, "eigenbasis", manifest);
  if (get<std::string>(j, "graph_hash", "basis") != hex64(graph_hash)) {
    throw Error(ErrorKind::kMissingArtifact, "eigenbasis '" + manifest.string() +
                                                 "' was computed for a different graph; rerun prep-graph");
  }
  const auto n = get<std::size_t>(j, "n", "basis");
  const auto m = get<std::size_t>(j, "m", "basis");
  spectral::EigenBasis b;
  b.q = from_f32(read_blob<float>(manifest.parent_path() / get<std::string>(j, "q", "basis"), n * m),
                 static_cast<Index>(n), static_cast<Index>(m));
  const auto s = read_blob<float>(manifest.parent_path() / get<std::string>(j, "sigma", "basis"), m);
  b.sigma = from_f32(s, static_cast<Index>(m), 1);
  return b;
}

void write_dataset(const fs::path& manifest, const train::Dataset& data, const Json& provenance) {
  data.validate();
  const auto ib = blob_path(manifest, "inputs");
  const auto tb = blob_path(manifest, "targets");
  write_blob(ib, to_f32(data.inputs));
  write_blob(tb, to_f32(data.targets));
  std::vector<std::string> labels;
  for (auto s : data.split) labels.push_back(train::to_string(s));
  write_json(manifest, {{"kind", "dataset"},
                        {"n", data.n},
                        {"q", data.q},
                        {"C", data.channels},
                        {"count", data.size()},
                        {"split", labels},
                        {"inputs", ib.filename().string()},
                        {"targets", tb.filename().string()},
                        {"targets_layout", "count x (n*C), node-major"},
                        {"provenance", provenance}});
}

train::Dataset read_dataset(const fs::path& manifest) {
  const Json j = read_json(manifest);
  check_kind(j, "dataset", manifest);
  train::Dataset d;
  d.n = get<std::size_t>(j, "n", "dataset");
  d.q = get<std::size_t>(j, "q", "dataset");
  d.channels = get<std::size_t>(j, "C", "dataset");
  const auto count = get<std::size_t>(j, "count", "dataset");
  d.inputs = from_f32(read_blob<float>(manifest.parent_path() / get<std::string>(j, "inputs", "dataset"), count * d.q),
                      static_cast<Index>(count), static_cast<Index>(d.q));
  d.targets = from_f32(
      read_blob<float>(manifest.parent_path() / get<std::string>(j, "targets", "dataset"), count * d.n * d.channels),
      static_cast<Index>(count), static_cast<Index>(d.n * d.channels));
  for (const auto& s : get<std::vector<std::string>>(j, "split", "dataset")) {
    if (s == "train") d.split.push_back(train::Split::kTrain);
    else if (s == "val") d.split.push_back(train::Split::kVal);
    else if (s == "test") d.split.push_back(train::Split::kTest);
    else throw Error(ErrorKind::kInvalidInput, "unknown split label '" + s + "'");
  }
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Configuration documents

Json to_json(const model::VirsoConfig& c) {
  return {{"blocks", c.blocks},
          {"d_v", c.d_v},
          {"modes", c.modes},
          {"d_latent", c.d_latent},
          {"embed_hidden", c.embed_hidden},
          {"head_hidden", c.head_hidden},
          {"gate_hidden", c.gate_hidden},
          {"gate_weight_width", c.gate_weight_width},
          {"alpha_anchors", c.alpha_anchors},
          {"anchor_seed", c.anchor_seed},
          {"variant", model::to_string(c.variant)},
          {"identity_skip", c.identity_skip},
          {"spectral_skip", c.spectral_skip},
          {"collaboration", model::to_string(c.collaboration)},
          {"weighted_laplacian", c.weighted_laplacian},
          {"output_channels", c.output_channels},
          {"input_width", c.input_width},
          {"spatial_dim", c.spatial_dim}};
}

model::VirsoConfig model_config_from_json(const Json& j) {
  const std::string w = "model";
  reject_unknown_keys(j, {"blocks", "d_v", "modes", "d_latent", "embed_hidden", "head_hidden", "gate_hidden",
                          "gate_weight_width", "alpha_anchors", "anchor_seed", "variant", "identity_skip",
                          "spectral_skip", "collaboration", "weighted_laplacian", "output_channels", "input_width",
                          "spatial_dim"},
                      w);
  model::VirsoConfig c;
  maybe(j, "blocks", c.blocks, w);
  maybe(j, "d_v", c.d_v, w);
  maybe(j, "modes", c.modes, w);
  maybe(j, "d_latent", c.d_latent, w);
  maybe(j, "embed_hidden", c.embed_hidden, w);
  maybe(j, "head_hidden", c.head_hidden, w);
  maybe(j, "gate_hidden", c.gate_hidden, w);
  maybe(j, "gate_weight_width", c.gate_weight_width, w);
  maybe(j, "alpha_anchors", c.alpha_anchors, w);
  maybe(j, "anchor_seed", c.anchor_seed, w);
  if (j.contains("variant")) c.variant = model::variant_from_string(get<std::string>(j, "variant", w));
  maybe(j, "identity_skip", c.identity_skip, w);
  maybe(j, "spectral_skip", c.spectral_skip, w);
  if (j.contains("collaboration")) {
    c.collaboration = model::collaboration_from_string(get<std::string>(j, "collaboration", w));
  }
  maybe(j, "weighted_laplacian", c.weighted_laplacian, w);
  maybe(j, "output_channels", c.output_channels, w);
  maybe(j, "input_width", c.input_width, w);
  maybe(j, "spatial_dim", c.spatial_dim, w);
  return c;
}

Json to_json(const train::Schedule& s) {
  Json j = {{"lr", s.lr},
            {"decay_step", s.decay_step},
            {"decay", s.decay},
            {"batch", s.batch},
            {"max_epochs", s.max_epochs},
            {"weight_decay", s.weight_decay},
            {"patience", s.patience},
            {"seed", s.seed},
            {"accumulation", s.accumulation},
            {"magnitude_weight", s.magnitude_weight}};
  if (s.velocity_channels) j["velocity_channels"] = *s.velocity_channels;
  return j;
}

train::Schedule schedule_from_json(const Json& j) {
  const std::string w = "training";
  reject_unknown_keys(j, {"lr", "decay_step", "decay", "batch", "max_epochs", "weight_decay", "patience", "seed",
                          "accumulation", "velocity_channels", "magnitude_weight"},
                      w);
  train::Schedule s;
  maybe(j, "lr", s.lr, w);
  maybe(j, "decay_step", s.decay_step, w);
  maybe(j, "decay", s.decay, w);
  maybe(j, "batch", s.batch, w);
  maybe(j, "max_epochs", s.max_epochs, w);
  maybe(j, "weight_decay", s.weight_decay, w);
  maybe(j, "patience", s.patience, w);
  maybe(j, "seed", s.seed, w);
  maybe(j, "accumulation", s.accumulation, w);
  maybe(j, "magnitude_weight", s.magnitude_weight, w);
  if (j.contains("velocity_channels") && !j["velocity_channels"].is_null()) {
    s.velocity_channels = get<std::array<std::size_t, 3>>(j, "velocity_channels", w);
  }
  return s;
}

Json to_json(const synth::SynthSpec& s) {
  return {{"n_target", s.n_target},
          {"hole_center", s.hole_center},
          {"hole_radius", s.hole_radius},
          {"band_width", s.band_width},
          {"densification", s.densification},
          {"profile_length", s.profile_length},
          {"amplitude", s.amplitude},
          {"inlet_temperature", s.inlet_temperature},
          {"inlet_velocity", s.inlet_velocity},
          {"sample_count", s.sample_count},
          {"split", s.split},
          {"seed", s.seed}};
}

synth::SynthSpec synth_spec_from_json(const Json& j) {
  const std::string w = "data";
  reject_unknown_keys(j, {"n_target", "hole_center", "hole_radius", "band_width", "densification", "profile_length",
                          "amplitude", "inlet_temperature", "inlet_velocity", "sample_count", "split", "seed"},
                      w);
  synth::SynthSpec s;
  maybe(j, "n_target", s.n_target, w);
  maybe(j, "hole_center", s.hole_center, w);
  maybe(j, "hole_radius", s.hole_radius, w);
  maybe(j, "band_width", s.band_width, w);
  maybe(j, "densification", s.densification, w);
  maybe(j, "profile_length", s.profile_length, w);
  maybe(j, "amplitude", s.amplitude, w);
  maybe(j, "inlet_temperature", s.inlet_temperature, w);
  maybe(j, "inlet_velocity", s.inlet_velocity, w);
  maybe(j, "sample_count", s.sample_count, w);
  maybe(j, "split", s.split, w);
  maybe(j, "seed", s.seed, w);
  return s;
}

Json to_json(const train::Normalizer& n) {
  const Vector& a = n.a();
  const Vector& b = n.b();
  return {{"mode", train::to_string(n.mode())},
          {"a", std::vector<double>(a.data(), a.data() + a.size())},
          {"b", std::vector<double>(b.data(), b.data() + b.size())},
          {"low", n.low()},
          {"high", n.high()}};
}

train::Normalizer normalizer_from_json(const Json& j) {
  const std::string w = "normalizer";
  reject_unknown_keys(j, {"mode", "a", "b", "low", "high"}, w);
  const auto a = get<std::vector<double>>(j, "a", w);
  const auto b = get<std::vector<double>>(j, "b", w);
  return train::Normalizer::from_parameters(train::norm_mode_from_string(get<std::string>(j, "mode", w)),
                                            Eigen::Map<const Vector>(a.data(), static_cast<Index>(a.size())),
                                            Eigen::Map<const Vector>(b.data(), static_cast<Index>(b.size())),
                                            get<double>(j, "low", w), get<double>(j, "high", w));
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint(const fs::path& manifest, const model::VirsoModel& model, const train::Normalizers& norms,
                      std::uint64_t graph_hash, const Json& extra) {
  std::vector<float> blob;
  Json params = Json::array();
  for (const auto& p : model.parameters()) {
    std::vector<Index> shape = p.shape();
    params.push_back({{"name", p.name()}, {"shape", shape}, {"offset_bytes", blob.size() * sizeof(float)}});
    const auto f = to_f32(p.data());
    blob.insert(blob.end(), f.begin(), f.end());
  }
  const auto path = blob_path(manifest, "params");
  write_blob(path, blob);
  write_json(manifest, {{"kind", "checkpoint"},
                        {"config", to_json(model.config)},
                        {"graph_hash", hex64(graph_hash)},
                        {"parameters", params},
                        {"parameter_count", blob.size()},
                        {"blob", path.filename().string()},
                        {"normalizers", {{"input", to_json(norms.input)}, {"target", to_json(norms.target)}}},
                        {"extra", extra}});
}

Checkpoint read_checkpoint(const fs::path& manifest) {
  const Json j = read_json(manifest);
  check_kind(j, "checkpoint", manifest);
  Checkpoint ck;
  const auto config = model_config_from_json(j.at("config"));
  ck.model = model::VirsoModel::initialize(config, 0);
  const auto count = get<std::size_t>(j, "parameter_count", "checkpoint");
  const auto blob = read_blob<float>(manifest.parent_path() / get<std::string>(j, "blob", "checkpoint"), count);
  auto params = ck.model.parameters();
  const auto& listed = j.at("parameters");
  if (listed.size() != params.size()) throw Error(ErrorKind::kShapeMismatch, "checkpoint parameter list differs");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = listed[i];
    if (e.at("name").get<std::string>() != params[i].name()) {
      throw Error(ErrorKind::kShapeMismatch, "checkpoint parameter " + std::to_string(i) + " is '" +
                                                 e.at("name").get<std::string>() + "', expected '" +
                                                 params[i].name() + "'");
    }
    const auto offset = e.at("offset_bytes").get<std::size_t>() / sizeof(float);
    if (offset + params[i].size() > blob.size()) throw Error(ErrorKind::kInvalidInput, "checkpoint blob too short");
    Matrix& m = params[i].mutable_data();
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<double>(blob[offset + static_cast<std::size_t>(k)]);
  }
  ck.norms.input = normalizer_from_json(j.at("normalizers").at("input"));
  ck.norms.target = normalizer_from_json(j.at("normalizers").at("target"));
  const auto hash = get<std::string>(j, "graph_hash", "checkpoint");
  ck.graph_hash = std::stoull(hash, nullptr, 16);
  ck.extra = j.value("extra", Json::object());
  return ck;
}

}  // namespace virso::io
