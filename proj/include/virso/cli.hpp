#pragma once

// Batch pipeline behind the command-line tool. Every command reads and writes
// artifacts in one run directory and leaves a JSON summary there.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "virso/io.hpp"
#include "virso/mesh_graph.hpp"
#include "virso/model.hpp"
#include "virso/spectral.hpp"
#include "virso/synth.hpp"
#include "virso/training.hpp"

namespace virso::cli {

namespace fs = std::filesystem;
using io::Json;

enum class GraphMethod { kKnn, kRadius, kVknn };
std::string to_string(GraphMethod m);
GraphMethod graph_method_from_string(const std::string& s);

struct GraphSpec {
  GraphMethod method = GraphMethod::kKnn;
  std::size_t k = 8;
  double radius = 0.08;
  std::size_t k_min = 10;
  std::size_t k_max = 40;
  double alpha_floor = 1.0;
  double density_radius = 0.08;
};

struct GradcheckSpec {
  std::size_t n = 50;
  std::size_t blocks = 2;
  std::size_t d_v = 8;
  std::size_t modes = 8;
  std::size_t samples = 2;
  std::size_t probes = 30;
  double tolerance = 1e-4;
};

struct BenchSpec {
  std::size_t samples = 32;
  std::size_t warmup = 2;
  std::size_t repeats = 3;
  std::string telemetry;  // optional t_s,power_w CSV
  double interval_s = 0.02;
  std::size_t telemetry_iterations = 0;  // iterations covered by the trace
  std::string scope = "device";
  std::string label = "VIRSO";
};

struct AblationSpec {
  std::vector<GraphMethod> graphs{GraphMethod::kKnn, GraphMethod::kVknn};
  std::vector<std::string> variants{"full", "spectral_only", "spatial_only", "no_skip"};
  std::size_t max_epochs = 0;  // 0: use the training schedule
};

/// Whole-run configuration. `seed` is the master seed: resolve() copies it
/// into the data, anchor, eigensolver and shuffle seeds and it also seeds
/// parameter initialization.
struct RunConfig {
  int schema_version = 1;
  std::uint64_t seed = 0;
  synth::SynthSpec data;
  GraphSpec graph;
  model::VirsoConfig model;
  train::Schedule train;
  train::NormMode input_norm = train::NormMode::kMinMax;
  train::NormMode target_norm = train::NormMode::kMinMax;
  spectral::LobpcgOptions lobpcg;
  GradcheckSpec gradcheck;
  BenchSpec bench;
  AblationSpec ablation;
  std::string out = "runs/default";

  /// Derives dependent fields (seeds, input width, channels) and validates
  /// every section. Throws kConfig.
  void resolve();
};

Json to_json(const RunConfig& c);
/// Unknown keys and a schema_version other than 1 are rejected. Missing
/// keys keep their defaults. The result is resolved.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const fs::path& path);

// Artifact names inside a run directory.
inline constexpr const char* kRunConfigFile = "run_config.json";
inline constexpr const char* kPointsFile = "points.json";
inline constexpr const char* kDatasetFile = "dataset.json";
inline constexpr const char* kGraphFile = "graph.json";
inline constexpr const char* kBasisFile = "basis.json";
inline constexpr const char* kCheckpointFile = "checkpoint.json";
inline constexpr const char* kCurveFile = "curve.csv";

/// FNV-1a of a manifest together with its sibling blobs.
std::string artifact_hash(const fs::path& manifest);

/// Weighted graph (weights rounded through float32) for `spec`, with build stats.
mesh::Graph build_graph(const GraphSpec& spec, const mesh::PointCloud& points, Json* stats = nullptr);

/// Graph context from the run directory's points, graph and basis artifacts.
model::GraphContext load_context(const fs::path& dir, const model::VirsoConfig& config);

// Commands. Each writes its artifacts plus summary.<command>.json into `dir`
// and returns the summary.
Json gen_data(const RunConfig& c, const fs::path& dir);
Json prep_graph(const RunConfig& c, const fs::path& dir);
Json train_model(const RunConfig& c, const fs::path& dir);
Json eval_model(const RunConfig& c, const fs::path& dir);
Json ablate(const RunConfig& c, const fs::path& dir);
Json gradcheck(const RunConfig& c, const fs::path& dir);
Json bench_model(const RunConfig& c, const fs::path& dir);
Json report(const fs::path& inputs_csv, const fs::path& dir);

/// Sets the log level from VIRSO_KIT_LOG (error|info|debug, default info).
/// Throws kConfig on any other value.
void configure_logging();

/// Full command-line entry: returns the process exit code (0 ok, 1
/// validation error, 2 runtime failure).
int run(const std::vector<std::string>& args);

}  // namespace virso::cli
