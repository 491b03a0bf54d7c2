#include "virso/spectral.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <string>

#include "virso/error.hpp"

namespace virso::spectral {

using DenseMat = Eigen::MatrixXd;  // column-major for the solver internals
using Sparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

Sparse SparseLaplacian::to_sparse() const {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(entries.size());
  for (const auto& e : entries) t.emplace_back(e.row, e.col, e.value);
  Sparse s(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

Matrix SparseLaplacian::to_dense() const {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (const auto& e : entries) out(e.row, e.col) += e.value;
  return out;
}

SparseLaplacian normalized_laplacian(const mesh::Graph& graph, bool weighted) {
  const std::size_t n = graph.num_nodes();
  const auto& edges = graph.edges();
  const std::vector<double>* w = weighted ? &graph.weights() : nullptr;

  SparseLaplacian lap;
  lap.n = n;
  lap.weighted = weighted;
  lap.degree.assign(n, 0.0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    lap.degree[edges[e].src] += w ? (*w)[e] : 1.0;
  }
  for (std::size_t u = 0; u < n; ++u) {
    if (!(lap.degree[u] > 0.0)) {
      throw Error(ErrorKind::kDegenerateGraph, "node " + std::to_string(u) + " is isolated");
    }
  }

  lap.entries.reserve(edges.size() + n);
  for (std::size_t u = 0; u < n; ++u) {
    lap.entries.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(u), 1.0});
  }
  // Emit each pair once from its (low, high) entry and mirror it, so the
  // matrix is symmetric bit for bit.
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [u, v] = edges[e];
    if (u > v) continue;
    const double a = w ? (*w)[e] : 1.0;
    const double value = -a / std::sqrt(lap.degree[u] * lap.degree[v]);
    lap.entries.push_back({u, v, value});
    lap.entries.push_back({v, u, value});
  }
  std::sort(lap.entries.begin(), lap.entries.end(), [](const Triplet& a, const Triplet& b) {
    return std::tie(a.row, a.col) < std::tie(b.row, b.col);
  });
  return lap;
}

void fix_signs(Matrix& q) {
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const double a = std::abs(q(i, j));
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (q(best, j) < 0.0) q.col(j) *= -1.0;
  }
}

namespace {

void check_mode_count(std::size_t n, std::size_t m) {
  const std::size_t limit = std::max<std::size_t>(1, n / 4);
  if (m < 1 || m > limit) {
    throw Error(ErrorKind::kInvalidParameter,
                "mode count " + std::to_string(m) + " outside [1, " + std::to_string(limit) + "]");
  }
}

EigenBasis take_modes(const DenseMat& vectors, const Vector& values, std::size_t m, bool largest) {
  const auto n = vectors.rows();
  const auto total = vectors.cols();
  EigenBasis basis;
  basis.q.resize(n, static_cast<Eigen::Index>(m));
  basis.sigma.resize(static_cast<Eigen::Index>(m));
  for (std::size_t j = 0; j < m; ++j) {
    // Ascending output either way; the largest variant takes the top block.
    const Eigen::Index src = largest ? total - static_cast<Eigen::Index>(m) + static_cast<Eigen::Index>(j)
                                     : static_cast<Eigen::Index>(j);
    basis.q.col(static_cast<Eigen::Index>(j)) = vectors.col(src);
    basis.sigma(static_cast<Eigen::Index>(j)) = values(src);
  }
  fix_signs(basis.q);
  return basis;
}

/// Orthonormalizes the columns of y against x (assumed orthonormal) and
/// among themselves, dropping numerically dependent directions.
DenseMat orthonormalize_against(const DenseMat& x, DenseMat y) {
  for (int pass = 0; pass < 2 && y.cols() > 0; ++pass) {
    y -= x * (x.transpose() * y);
    DenseMat gram = y.transpose() * y;
    Vector scale = gram.diagonal().cwiseSqrt();
    std::vector<Eigen::Index> live;
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      if (scale(j) > 1e-300) live.push_back(j);
    }
    if (live.size() != static_cast<std::size_t>(y.cols())) {
      DenseMat kept(y.rows(), static_cast<Eigen::Index>(live.size()));
      for (std::size_t j = 0; j < live.size(); ++j) kept.col(static_cast<Eigen::Index>(j)) = y.col(live[j]);
      y = std::move(kept);
      if (y.cols() == 0) break;
      gram = y.transpose() * y;
      scale = gram.diagonal().cwiseSqrt();
    }
    const Vector inv = scale.cwiseInverse();
    const DenseMat scaled = inv.asDiagonal() * gram * inv.asDiagonal();
    Eigen::SelfAdjointEigenSolver<DenseMat> eig(scaled);
    const Vector& theta = eig.eigenvalues();
    const double cutoff = theta.maxCoeff() * 1e-13;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      if (theta(j) > cutoff) keep.push_back(j);
    }
    DenseMat transform(y.cols(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
      transform.col(static_cast<Eigen::Index>(j)) =
          eig.eigenvectors().col(keep[j]) / std::sqrt(theta(keep[j]));
    }
    y = y * (inv.asDiagonal() * transform);
  }
  return y;
}

}  // namespace

EigenBasis dense_eigen_reference(const SparseLaplacian& laplacian, std::size_t m, bool largest) {
  if (laplacian.n > 2000) {
    throw Error(ErrorKind::kInvalidParameter,
                "dense reference refused for n > 2000; use lobpcg_smallest");
  }
  if (m < 1 || m > laplacian.n) throw Error(ErrorKind::kInvalidParameter, "mode count out of range");
  const DenseMat dense = laplacian.to_dense();
  Eigen::SelfAdjointEigenSolver<DenseMat> eig(dense);
  return take_modes(eig.eigenvectors(), eig.eigenvalues(), m, largest);
}

EigenBasis lobpcg_smallest(const SparseLaplacian& laplacian, std::size_t m,
                           const LobpcgOptions& options, LobpcgStats* stats) {
  const std::size_t n = laplacian.n;
  check_mode_count(n, m);
  if (!(options.tol > 0.0)) throw Error(ErrorKind::kInvalidParameter, "tolerance must be positive");

  const std::size_t guard = options.guard > 0 ? options.guard : std::clamp<std::size_t>(m / 2, 2, 8);
  const std::size_t block = m + guard;
  const double sign = options.largest ? -1.0 : 1.0;

  // Tiny problems: the search space would cover R^n anyway.
  if (3 * block >= n) {
    const DenseMat dense = laplacian.to_dense();
    Eigen::SelfAdjointEigenSolver<DenseMat> eig(dense);
    EigenBasis basis = take_modes(eig.eigenvectors(), eig.eigenvalues(), m, options.largest);
    if (stats) {
      stats->iterations = 0;
      stats->max_residual = residual_norms(laplacian, basis).maxCoeff();
    }
    return basis;
  }

  const Sparse op = sign * laplacian.to_sparse();
  Vector inv_diag = Vector::Ones(static_cast<Eigen::Index>(n));
  if (options.jacobi) {
    for (const auto& e : laplacian.entries) {
      if (e.row == e.col && e.value != 0.0) inv_diag(e.row) = 1.0 / std::abs(e.value);
    }
  }

  const auto nn = static_cast<Eigen::Index>(n);
  const auto bb = static_cast<Eigen::Index>(block);
  const auto mm = static_cast<Eigen::Index>(m);

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMat x(nn, bb);
  for (Eigen::Index j = 0; j < bb; ++j) {
    for (Eigen::Index i = 0; i < nn; ++i) x(i, j) = normal(rng);
  }
  x = orthonormalize_against(DenseMat(nn, 0), x);
  if (x.cols() != bb) throw Error(ErrorKind::kConvergenceFailure, "degenerate initial block");

  auto rayleigh_ritz = [&](const DenseMat& s, const DenseMat& as, Vector& values) {
    DenseMat h = s.transpose() * as;
    h = 0.5 * (h + h.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<DenseMat> eig(h);
    values = eig.eigenvalues().head(bb);
    return DenseMat(eig.eigenvectors().leftCols(bb));
  };

  Vector lambda;
  {
    const DenseMat ax = op * x;
    x = x * rayleigh_ritz(x, ax, lambda);
  }
  DenseMat p(nn, 0);

  double worst = 0.0;
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    const DenseMat ax = op * x;
    DenseMat r = ax - x * lambda.asDiagonal();
    worst = 0.0;
    for (Eigen::Index j = 0; j < mm; ++j) {
      const double rel = r.col(j).norm() / std::max(1.0, std::abs(lambda(j)));
      worst = std::max(worst, rel);
    }
    if (worst <= options.tol) {
      if (stats) {
        stats->iterations = it;
        stats->max_residual = worst;
      }
      DenseMat vectors = x;
      Vector values = sign * lambda;
      if (options.largest) {
        // Ritz values of -L ascending are L's values descending; reverse.
        vectors = x.leftCols(mm).rowwise().reverse().eval();
        values = values.head(mm).reverse().eval();
        return take_modes(vectors, values, m, false);
      }
      return take_modes(vectors.leftCols(mm), values.head(mm), m, false);
    }

    DenseMat w = inv_diag.asDiagonal() * r;
    DenseMat wp(nn, w.cols() + p.cols());
    wp << w, p;
    const DenseMat y = orthonormalize_against(x, wp);
    DenseMat s(nn, bb + y.cols());
    s << x, y;
    DenseMat as(nn, s.cols());
    as << ax, op * y;

    const DenseMat c = rayleigh_ritz(s, as, lambda);
    x = s * c;
    if (y.cols() > 0) {
      p = y * c.bottomRows(y.cols());
    } else {
      p.resize(nn, 0);
    }
  }
  throw Error(ErrorKind::kConvergenceFailure,
              "LOBPCG did not converge in " + std::to_string(options.max_iter) +
                  " iterations; worst residual " + std::to_string(worst));
}

Matrix gft(const EigenBasis& basis, const Matrix& v) {
  if (v.rows() != basis.q.rows()) throw Error(ErrorKind::kShapeMismatch, "gft: row count differs from basis");
  return basis.q.transpose() * v;
}

Matrix igft(const EigenBasis& basis, const Matrix& c) {
  if (c.rows() != basis.q.cols()) throw Error(ErrorKind::kShapeMismatch, "igft: row count differs from mode count");
  return basis.q * c;
}

Vector residual_norms(const SparseLaplacian& laplacian, const EigenBasis& basis) {
  const Sparse op = laplacian.to_sparse();
  const Matrix lq = op * basis.q;
  Vector out(basis.q.cols());
  for (Eigen::Index j = 0; j < basis.q.cols(); ++j) {
    out(j) = (lq.col(j) - basis.sigma(j) * basis.q.col(j)).norm();
  }
  return out;
}

double max_principal_angle(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "principal angle: basis shapes differ");
  }
  const Matrix residual = b - a * (a.transpose() * b);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(residual);
  const double s = svd.singularValues().size() > 0 ? svd.singularValues()(0) : 0.0;
  return std::asin(std::min(1.0, s));
}

std::uint64_t graph_content_hash(const mesh::Graph& graph) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t word) {
    for (int i = 0; i < 8; ++i) {
      h ^= (word >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(graph.num_nodes());
  for (const auto& e : graph.edges()) {
    mix(e.src);
    mix(e.dst);
  }
  if (graph.has_weights()) {
    mix(0x77656967687473ULL);
    for (double w : graph.weights()) mix(std::bit_cast<std::uint64_t>(w));
  }
  return h;
}

}  // namespace virso::spectral
