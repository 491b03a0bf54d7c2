#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "virso/mesh_graph.hpp"
#include "virso/training.hpp"

namespace virso::synth {

/// Unit square with a circular hole; a band around the hole is sampled more
/// densely. Channels are (T, v, k).
struct SynthSpec {
  std::size_t n_target = 400;
  std::array<double, 2> hole_center{0.5, 0.5};
  double hole_radius = 0.25;
  double band_width = 0.08;
  double densification = 4.0;
  std::size_t profile_length = 20;
  std::array<double, 2> amplitude{540.0, 660.0};
  std::array<double, 2> inlet_temperature{536.4, 655.6};
  std::array<double, 2> inlet_velocity{4.05, 4.95};
  std::size_t sample_count = 950;
  std::array<double, 3> split{600.0 / 950.0, 150.0 / 950.0, 200.0 / 950.0};
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t input_width() const { return profile_length + 2; }
};

constexpr std::size_t kChannels = 3;

struct FieldParams {
  double amplitude = 0.0;
  double inlet_temperature = 0.0;
  double inlet_velocity = 0.0;
};

/// Distance from x to the hole boundary (0 on or inside the wall).
double wall_distance(const SynthSpec& spec, double x, double y);

/// Closed-form (T, v, k) at every node, n x 3.
Matrix manufactured_field(const SynthSpec& spec, const mesh::PointCloud& points, const FieldParams& p);

/// [T_in, v_in, q_1 .. q_P] with q_j = A sin(pi j / (P + 1)).
RowVector input_vector(const SynthSpec& spec, const FieldParams& p);

mesh::PointCloud generate_points(const SynthSpec& spec);

struct SynthResult {
  mesh::PointCloud points;
  train::Dataset dataset;
  std::vector<FieldParams> params;
  double reconstruction_ratio = 0.0;
};

/// Points, per-sample parameters (per-sample derived seeds) and split labels.
SynthResult generate_dataset(const SynthSpec& spec);

}  // namespace virso::synth
