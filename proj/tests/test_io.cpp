#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"
#include "virso/error.hpp"
#include "virso/io.hpp"

using namespace virso;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("virso_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Matrix through_f32(Matrix m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  return m;
}

model::VirsoConfig small_config() {
  model::VirsoConfig c;
  c.blocks = 2;
  c.d_v = 6;
  c.modes = 5;
  c.d_latent = 4;
  c.embed_hidden = 8;
  c.head_hidden = 8;
  c.alpha_anchors = 3;
  c.input_width = 5;
  c.output_channels = 2;
  return c;
}

}  // namespace

TEST(Io, PointCloudRoundTripThroughFloat32) {
  const auto dir = scratch("points");
  const auto cloud = test::random_cloud(37, 1);
  io::write_point_cloud(dir / "points.json", cloud);
  const auto back = io::read_point_cloud(dir / "points.json");
  EXPECT_TRUE(back.coords() == through_f32(cloud.coords()));
  EXPECT_TRUE(fs::exists(dir / "points.coords.bin"));
  EXPECT_EQ(fs::file_size(dir / "points.coords.bin"), 37u * 2u * 4u);
}

TEST(Io, GraphRoundTripKeepsHash) {
  const auto dir = scratch("graph");
  const auto cloud = test::random_cloud(50, 2);
  const auto g = mesh::compute_edge_weights(mesh::build_knn(cloud, 5), cloud);
  io::write_graph(dir / "graph.json", g);
  const auto back = io::read_graph(dir / "graph.json");
  EXPECT_EQ(back.edges(), g.edges());
  EXPECT_EQ(spectral::graph_content_hash(back), spectral::graph_content_hash(io::round_weights_to_f32(g)));
  const auto j = io::read_json(dir / "graph.json");
  EXPECT_EQ(j.at("content_hash").get<std::string>(), io::hex64(spectral::graph_content_hash(back)));
}

TEST(Io, BasisHashGuard) {
  const auto dir = scratch("basis");
  const auto cloud = test::random_cloud(40, 3);
  const auto g = mesh::build_knn(cloud, 6);
  const auto basis = spectral::dense_eigen_reference(spectral::normalized_laplacian(g, false), 6);
  const auto hash = spectral::graph_content_hash(g);
  io::write_basis(dir / "basis.json", basis, hash);
  const auto back = io::read_basis(dir / "basis.json", hash);
  EXPECT_TRUE(back.q == through_f32(basis.q));
  try {
    io::read_basis(dir / "basis.json", hash + 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingArtifact);
  }
}

TEST(Io, DatasetRoundTrip) {
  const auto dir = scratch("dataset");
  train::Dataset d;
  d.n = 4;
  d.q = 3;
  d.channels = 2;
  d.inputs = test::random_matrix(6, 3, 4);
  d.targets = test::random_matrix(6, 8, 5);
  d.split = {train::Split::kTrain, train::Split::kTrain, train::Split::kTrain,
             train::Split::kVal, train::Split::kTest, train::Split::kTest};
  io::write_dataset(dir / "data.json", d, {{"seed", 1}});
  const auto back = io::read_dataset(dir / "data.json");
  EXPECT_TRUE(back.inputs == through_f32(d.inputs));
  EXPECT_TRUE(back.targets == through_f32(d.targets));
  EXPECT_EQ(back.split, d.split);
  EXPECT_EQ(back.channels, 2u);
}

TEST(Io, MissingArtifactIsNamed) {
  const auto dir = scratch("missing");
  try {
    io::read_graph(dir / "nope.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingArtifact);
    EXPECT_NE(std::string(e.what()).find("nope.json"), std::string::npos);
  }
}

TEST(Io, ConfigRoundTripAndUnknownKeys) {
  auto c = small_config();
  c.variant = model::Variant::kSpectralOnly;
  c.spectral_skip = false;
  const auto back = io::model_config_from_json(io::to_json(c));
  EXPECT_EQ(io::to_json(back), io::to_json(c));

  train::Schedule s;
  s.velocity_channels = std::array<std::size_t, 3>{0, 1, 2};
  EXPECT_EQ(io::to_json(io::schedule_from_json(io::to_json(s))), io::to_json(s));

  synth::SynthSpec spec;
  spec.seed = 77;
  EXPECT_EQ(io::to_json(io::synth_spec_from_json(io::to_json(spec))), io::to_json(spec));

  io::Json bad = io::to_json(c);
  bad["dv"] = 3;
  try {
    io::model_config_from_json(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("dv"), std::string::npos);
  }
  EXPECT_THROW(io::schedule_from_json({{"lr", "fast"}}), Error);
}

TEST(Io, CheckpointRoundTrip) {
  const auto dir = scratch("ckpt");
  const auto config = small_config();
  const auto m = model::VirsoModel::initialize(config, 9);
  train::Normalizers norms{train::Normalizer::fit(train::NormMode::kMinMax, test::random_matrix(10, 5, 6)),
                           train::Normalizer::fit(train::NormMode::kGaussian, test::random_matrix(10, 2, 7))};
  io::write_checkpoint(dir / "model.json", m, norms, 0xabcdef0123456789ULL, {{"epochs", 3}});
  const auto ck = io::read_checkpoint(dir / "model.json");
  EXPECT_EQ(ck.graph_hash, 0xabcdef0123456789ULL);
  EXPECT_EQ(ck.extra.at("epochs").get<int>(), 3);
  EXPECT_EQ(io::to_json(ck.model.config), io::to_json(config));
  const auto a = m.snapshot();
  const auto b = ck.model.snapshot();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(b[i] == through_f32(a[i]));
  EXPECT_TRUE(ck.norms.input.a() == norms.input.a());
  EXPECT_TRUE(ck.norms.target.b() == norms.target.b());
  EXPECT_EQ(fs::file_size(dir / "model.params.bin"), model::parameter_count(config) * 4u);

  // Writing the loaded checkpoint again reproduces the same bytes.
  io::write_checkpoint(dir / "again.json", ck.model, ck.norms, ck.graph_hash, ck.extra);
  EXPECT_EQ(io::file_hash(dir / "again.params.bin"), io::file_hash(dir / "model.params.bin"));

  const auto manifest = io::read_json(dir / "model.json");
  const auto& first = manifest.at("parameters").at(0);
  EXPECT_EQ(first.at("offset_bytes").get<std::size_t>(), 0u);
  EXPECT_TRUE(first.contains("shape"));
}
