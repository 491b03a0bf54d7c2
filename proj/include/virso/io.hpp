#pragma once

// On-disk artifacts: a JSON manifest naming little-endian float32 / uint32
// blobs that sit next to it.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>

#include "virso/mesh_graph.hpp"
#include "virso/model.hpp"
#include "virso/spectral.hpp"
#include "virso/synth.hpp"
#include "virso/training.hpp"

namespace virso::io {

namespace fs = std::filesystem;
using Json = nlohmann::json;

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& doc);

/// FNV-1a over a file's bytes, hex encoded.
std::string file_hash(const fs::path& path);
std::string hex64(std::uint64_t v);

// Each writer takes the manifest path; blobs are written beside it as
// <stem>.<part>.bin.
void write_point_cloud(const fs::path& manifest, const mesh::PointCloud& points);
mesh::PointCloud read_point_cloud(const fs::path& manifest);

void write_graph(const fs::path& manifest, const mesh::Graph& graph, const Json& extra = Json::object());
mesh::Graph read_graph(const fs::path& manifest);

/// Weights rounded through float32, so a graph hashes the same before and
/// after a save/load cycle.
mesh::Graph round_weights_to_f32(mesh::Graph graph);

void write_basis(const fs::path& manifest, const spectral::EigenBasis& basis, std::uint64_t graph_hash);
/// Throws kMissingArtifact when the stored hash does not match `graph_hash`.
spectral::EigenBasis read_basis(const fs::path& manifest, std::uint64_t graph_hash);

void write_dataset(const fs::path& manifest, const train::Dataset& data, const Json& provenance = Json::object());
train::Dataset read_dataset(const fs::path& manifest);

// --- configuration documents (unknown keys rejected) ----------------------

Json to_json(const model::VirsoConfig& c);
model::VirsoConfig model_config_from_json(const Json& j);
Json to_json(const train::Schedule& s);
train::Schedule schedule_from_json(const Json& j);
Json to_json(const synth::SynthSpec& s);
synth::SynthSpec synth_spec_from_json(const Json& j);
Json to_json(const train::Normalizer& n);
train::Normalizer normalizer_from_json(const Json& j);

/// Throws kConfig naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

struct Checkpoint {
  model::VirsoModel model;
  train::Normalizers norms;
  std::uint64_t graph_hash = 0;
  Json extra;
};

void write_checkpoint(const fs::path& manifest, const model::VirsoModel& model, const train::Normalizers& norms,
                      std::uint64_t graph_hash, const Json& extra = Json::object());
Checkpoint read_checkpoint(const fs::path& manifest);

}  // namespace virso::io
