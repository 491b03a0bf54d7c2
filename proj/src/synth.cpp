#include "virso/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "virso/bench.hpp"
#include "virso/error.hpp"

namespace virso::synth {

using Index = Eigen::Index;

namespace {

constexpr std::size_t kMaxShrinks = 400;

void check_range(const std::array<double, 2>& r, const char* name) {
  if (!(std::isfinite(r[0]) && std::isfinite(r[1]) && r[0] <= r[1])) {
    throw Error(ErrorKind::kConfig, std::string(name) + " range must satisfy low <= high");
  }
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double center_distance(const SynthSpec& s, double x, double y) {
  return std::hypot(x - s.hole_center[0], y - s.hole_center[1]);
}

// Jittered cell-centred lattice of spacing h, keeping the points accepted by
// `keep`.
template <typename Keep>
void lattice(double h, std::mt19937_64& rng, const Keep& keep, std::vector<std::array<double, 2>>& out) {
  std::uniform_real_distribution<double> jitter(-0.3 * h, 0.3 * h);
  const auto cells = static_cast<std::size_t>(std::ceil(1.0 / h));
  for (std::size_t i = 0; i < cells; ++i)
    for (std::size_t j = 0; j < cells; ++j) {
      const double x = (static_cast<double>(i) + 0.5) * h + jitter(rng);
      const double y = (static_cast<double>(j) + 0.5) * h + jitter(rng);
      if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) continue;
      if (keep(x, y)) out.push_back({x, y});
    }
}

}  // namespace

void SynthSpec::validate() const {
  if (n_target < 50) throw Error(ErrorKind::kConfig, "n_target must be >= 50");
  if (!(hole_radius > 0.0) || hole_center[0] - hole_radius <= 0.0 || hole_center[0] + hole_radius >= 1.0 ||
      hole_center[1] - hole_radius <= 0.0 || hole_center[1] + hole_radius >= 1.0) {
    throw Error(ErrorKind::kConfig, "hole must lie strictly inside the unit square");
  }
  if (!(band_width > 0.0)) throw Error(ErrorKind::kConfig, "band_width must be > 0");
  if (!(densification >= 1.0)) throw Error(ErrorKind::kConfig, "densification must be >= 1");
  if (profile_length == 0) throw Error(ErrorKind::kConfig, "profile_length must be >= 1");
  check_range(amplitude, "amplitude");
  check_range(inlet_temperature, "inlet_temperature");
  check_range(inlet_velocity, "inlet_velocity");
  if (inlet_velocity[0] <= 0.0) throw Error(ErrorKind::kConfig, "inlet_velocity must be positive");
  if (sample_count < 3) throw Error(ErrorKind::kConfig, "sample_count must be >= 3");
}

double wall_distance(const SynthSpec& s, double x, double y) {
  return std::max(0.0, center_distance(s, x, y) - s.hole_radius);
}

Matrix manufactured_field(const SynthSpec& spec, const mesh::PointCloud& points, const FieldParams& p) {
  const Matrix& x = points.coords();
  Matrix f(x.rows(), static_cast<Index>(kChannels));
  for (Index i = 0; i < x.rows(); ++i) {
    const double g = 1.0 - std::exp(-wall_distance(spec, x(i, 0), x(i, 1)) / 0.1);
    f(i, 0) = p.inlet_temperature + p.amplitude * g * std::sin(M_PI * x(i, 0)) * std::sin(M_PI * x(i, 1)) * 1e-3;
    f(i, 1) = p.inlet_velocity * g;
    f(i, 2) = 0.01 * p.inlet_velocity * p.inlet_velocity * g * (1.0 - g);
  }
  return f;
}

RowVector input_vector(const SynthSpec& spec, const FieldParams& p) {
  const std::size_t pq = spec.profile_length;
  RowVector u(static_cast<Index>(pq + 2));
  u(0) = p.inlet_temperature;
  u(1) = p.inlet_velocity;
  for (std::size_t j = 1; j <= pq; ++j) {
    u(static_cast<Index>(j + 1)) = p.amplitude * std::sin(M_PI * static_cast<double>(j) / static_cast<double>(pq + 1));
  }
  return u;
}

mesh::PointCloud generate_points(const SynthSpec& spec) {
  spec.validate();
  const double r_in = spec.hole_radius;
  const double r_out = spec.hole_radius + spec.band_width;
  const double hole_area = M_PI * r_in * r_in;
  // Band may be clipped by the square; the estimate only seeds the search.
  const double band_area = M_PI * (r_out * r_out - r_in * r_in);
  const double effective = (1.0 - hole_area - band_area) + spec.densification * band_area;
  double h = std::sqrt(effective / static_cast<double>(spec.n_target));

  auto in_band = [&](double x, double y) {
    const double d = center_distance(spec, x, y);
    return d > r_in && d <= r_out;
  };
  auto outside = [&](double x, double y) { return center_distance(spec, x, y) > r_out; };

  for (std::size_t attempt = 0; attempt < kMaxShrinks; ++attempt, h *= 0.98) {
    std::mt19937_64 rng(spec.seed);
    std::vector<std::array<double, 2>> pts;
    lattice(h, rng, outside, pts);
    lattice(h / std::sqrt(spec.densification), rng, in_band, pts);
    if (pts.size() < spec.n_target) continue;

    std::vector<std::size_t> keep(pts.size());
    std::iota(keep.begin(), keep.end(), 0);
    std::shuffle(keep.begin(), keep.end(), rng);
    keep.resize(spec.n_target);
    std::sort(keep.begin(), keep.end());
    Matrix coords(static_cast<Index>(spec.n_target), 2);
    for (std::size_t r = 0; r < keep.size(); ++r) {
      coords(static_cast<Index>(r), 0) = pts[keep[r]][0];
      coords(static_cast<Index>(r), 1) = pts[keep[r]][1];
    }
    return mesh::PointCloud(std::move(coords));
  }
  throw Error(ErrorKind::kInvalidParameter,
              "could not place " + std::to_string(spec.n_target) + " points after bounded lattice refinement");
}

SynthResult generate_dataset(const SynthSpec& spec) {
  spec.validate();
  mesh::PointCloud points = generate_points(spec);
  const std::size_t n = points.size();
  train::Dataset data;
  data.n = n;
  data.q = spec.input_width();
  data.channels = kChannels;
  data.inputs.resize(static_cast<Index>(spec.sample_count), static_cast<Index>(data.q));
  data.targets.resize(static_cast<Index>(spec.sample_count), static_cast<Index>(n * kChannels));
  std::vector<FieldParams> params;
  params.reserve(spec.sample_count);
  for (std::size_t s = 0; s < spec.sample_count; ++s) {
    std::mt19937_64 rng(splitmix(spec.seed ^ splitmix(s + 1)));
    auto draw = [&](const std::array<double, 2>& r) {
      return std::uniform_real_distribution<double>(r[0], r[1])(rng);
    };
    FieldParams p;
    p.amplitude = draw(spec.amplitude);
    p.inlet_temperature = draw(spec.inlet_temperature);
    p.inlet_velocity = draw(spec.inlet_velocity);
    data.inputs.row(static_cast<Index>(s)) = input_vector(spec, p);
    const Matrix f = manufactured_field(spec, points, p);
    data.targets.row(static_cast<Index>(s)) = Eigen::Map<const RowVector>(f.data(), f.size());
    params.push_back(p);
  }
  train::assign_split(data, train::split_dataset(spec.sample_count, spec.split, spec.seed));
  const double ratio = bench::reconstruction_ratio(static_cast<double>(n), static_cast<double>(kChannels),
                                                   static_cast<double>(data.q));
  return {std::move(points), std::move(data), std::move(params), ratio};
}

}  // namespace virso::synth
