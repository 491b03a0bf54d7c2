#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "virso/error.hpp"
#include "virso/mesh_graph.hpp"
#include "virso/synth.hpp"

using namespace virso;
using namespace virso::synth;

namespace {

// Direct evaluation of the closed-form channels at (x, y).
std::array<double, 3> field_oracle(double x, double y, const FieldParams& p) {
  const double r = std::sqrt((x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5));
  const double dist = std::max(0.0, r - 0.25);
  const double g = 1.0 - std::exp(-dist / 0.1);
  const double pi = std::acos(-1.0);
  return {p.inlet_temperature + p.amplitude * g * std::sin(pi * x) * std::sin(pi * y) * 1e-3,
          p.inlet_velocity * g, 0.01 * p.inlet_velocity * p.inlet_velocity * g * (1.0 - g)};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST(Points, CountDomainAndHole) {
  SynthSpec spec;
  const auto pts = generate_points(spec);
  ASSERT_EQ(pts.size(), 400u);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double x = pts.coords()(static_cast<Eigen::Index>(i), 0);
    const double y = pts.coords()(static_cast<Eigen::Index>(i), 1);
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
    EXPECT_GE(y, 0.0);
    EXPECT_LE(y, 1.0);
    EXPECT_GT(std::hypot(x - 0.5, y - 0.5), 0.25);
  }
}

TEST(Points, SeedRepeatIsBitIdentical) {
  SynthSpec spec;
  spec.seed = 9;
  EXPECT_TRUE(generate_points(spec).coords() == generate_points(spec).coords());
  SynthSpec other = spec;
  other.seed = 10;
  EXPECT_FALSE(generate_points(spec).coords() == generate_points(other).coords());
}

TEST(Points, DensifiedBandIsAtLeastTwiceInteriorMedian) {
  SynthSpec spec;
  const auto pts = generate_points(spec);
  const auto density = mesh::estimate_density(pts, 0.08);
  std::vector<double> band, interior;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double w = wall_distance(spec, pts.coords()(static_cast<Eigen::Index>(i), 0),
                                   pts.coords()(static_cast<Eigen::Index>(i), 1));
    if (w <= 0.04) {
      band.push_back(static_cast<double>(density[i]));
    } else if (w > 0.12) {
      interior.push_back(static_cast<double>(density[i]));
    }
  }
  ASSERT_FALSE(band.empty());
  EXPECT_GE(median(band), 2.0 * median(interior));
}

TEST(Points, NoDensificationIsNearUniform) {
  SynthSpec spec;
  spec.densification = 1.0;
  const auto pts = generate_points(spec);
  const auto density = mesh::estimate_density(pts, 0.08);
  std::vector<double> band, interior;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double w = wall_distance(spec, pts.coords()(static_cast<Eigen::Index>(i), 0),
                                   pts.coords()(static_cast<Eigen::Index>(i), 1));
    if (w <= 0.04) {
      band.push_back(static_cast<double>(density[i]));
    } else if (w > 0.12) {
      interior.push_back(static_cast<double>(density[i]));
    }
  }
  EXPECT_LT(median(band), 1.5 * median(interior));
}

TEST(Dataset, TargetsMatchFormulaOracle) {
  SynthSpec spec;
  spec.sample_count = 12;
  const auto r = generate_dataset(spec);
  for (std::size_t s = 0; s < spec.sample_count; ++s) {
    const Matrix t = r.dataset.target(s);
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      const auto f = field_oracle(r.points.coords()(i, 0), r.points.coords()(i, 1), r.params[s]);
      for (Eigen::Index c = 0; c < 3; ++c) EXPECT_NEAR(t(i, c), f[static_cast<std::size_t>(c)], 1e-12);
    }
  }
}

TEST(Dataset, InputLayoutAndParameterRanges) {
  SynthSpec spec;
  spec.sample_count = 40;
  const auto r = generate_dataset(spec);
  ASSERT_EQ(r.dataset.q, 22u);
  const double pi = std::acos(-1.0);
  for (std::size_t s = 0; s < spec.sample_count; ++s) {
    const auto& p = r.params[s];
    EXPECT_GE(p.amplitude, 540.0);
    EXPECT_LE(p.amplitude, 660.0);
    EXPECT_GE(p.inlet_temperature, 536.4);
    EXPECT_LE(p.inlet_temperature, 655.6);
    EXPECT_GE(p.inlet_velocity, 4.05);
    EXPECT_LE(p.inlet_velocity, 4.95);
    const auto row = r.dataset.inputs.row(static_cast<Eigen::Index>(s));
    EXPECT_EQ(row(0), p.inlet_temperature);
    EXPECT_EQ(row(1), p.inlet_velocity);
    for (int j = 1; j <= 20; ++j) EXPECT_NEAR(row(j + 1), p.amplitude * std::sin(pi * j / 21.0), 1e-12);
  }
}

TEST(Dataset, ZeroAmplitudeGivesFlatTemperature) {
  SynthSpec spec;
  spec.sample_count = 5;
  spec.amplitude = {0.0, 0.0};
  const auto r = generate_dataset(spec);
  for (std::size_t s = 0; s < 5; ++s) {
    const Matrix t = r.dataset.target(s);
    EXPECT_TRUE((t.col(0).array() == r.params[s].inlet_temperature).all());
    EXPECT_TRUE((r.dataset.inputs.row(static_cast<Eigen::Index>(s)).tail(20).array() == 0.0).all());
  }
}

TEST(Dataset, ReconstructionRatioAndSplit) {
  SynthSpec spec;
  const auto r = generate_dataset(spec);
  EXPECT_NEAR(r.reconstruction_ratio, 400.0 * 3.0 / 22.0, 1e-12);
  EXPECT_NEAR(r.reconstruction_ratio, 54.5, 0.05);
  EXPECT_GE(r.reconstruction_ratio, 40.0);
  EXPECT_EQ(r.dataset.indices(train::Split::kTrain).size(), 600u);
  EXPECT_EQ(r.dataset.indices(train::Split::kVal).size(), 150u);
  EXPECT_EQ(r.dataset.indices(train::Split::kTest).size(), 200u);
  EXPECT_NO_THROW(r.dataset.validate());
}

TEST(Dataset, TurbulenceChannelVanishesAtWallAndFarField) {
  SynthSpec spec;
  FieldParams p{600.0, 600.0, 4.5};
  Matrix probe(3, 2);
  probe << 0.5, 0.25, 0.5, 0.82, 0.0, 0.0;  // on the wall, near-wall band, far corner
  const Matrix f = manufactured_field(spec, mesh::PointCloud(probe), p);
  EXPECT_EQ(f(0, 2), 0.0);
  EXPECT_GT(f(1, 2), 5.0 * f(2, 2));
  EXPECT_EQ(f(0, 1), 0.0);
}

TEST(Dataset, DeterministicPerSeed) {
  SynthSpec spec;
  spec.sample_count = 20;
  const auto a = generate_dataset(spec);
  const auto b = generate_dataset(spec);
  EXPECT_TRUE(a.dataset.inputs == b.dataset.inputs);
  EXPECT_TRUE(a.dataset.targets == b.dataset.targets);
  EXPECT_EQ(a.dataset.split, b.dataset.split);
}

TEST(Spec, Validation) {
  SynthSpec s;
  s.n_target = 40;
  EXPECT_THROW(s.validate(), Error);
  s = SynthSpec{};
  s.amplitude = {700.0, 600.0};
  EXPECT_THROW(s.validate(), Error);
  s = SynthSpec{};
  s.hole_radius = 0.6;
  EXPECT_THROW(s.validate(), Error);
}
