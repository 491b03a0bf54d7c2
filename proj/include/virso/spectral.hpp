#pragma once

#include <Eigen/SparseCore>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "virso/mesh_graph.hpp"
#include "virso/types.hpp"

namespace virso::spectral {

struct Triplet {
  std::uint32_t row;
  std::uint32_t col;
  double value;
};

/// I - D^{-1/2} A D^{-1/2} in coordinate form.
struct SparseLaplacian {
  std::size_t n = 0;
  std::vector<Triplet> entries;
  bool weighted = false;
  /// Diagonal of D (row sums of A); kept for the null-space check D^{1/2} 1.
  std::vector<double> degree;

  Eigen::SparseMatrix<double, Eigen::RowMajor> to_sparse() const;
  Matrix to_dense() const;
};

/// m eigenpairs, columns of q orthonormal, sigma ascending.
struct EigenBasis {
  Matrix q;  // n x m
  Vector sigma;

  std::size_t num_nodes() const { return static_cast<std::size_t>(q.rows()); }
  std::size_t modes() const { return static_cast<std::size_t>(q.cols()); }
};

SparseLaplacian normalized_laplacian(const mesh::Graph& graph, bool weighted);

struct LobpcgOptions {
  double tol = 1e-9;
  std::size_t max_iter = 5000;
  std::uint64_t seed = 0;
  bool jacobi = false;
  /// Select the largest m eigenpairs instead of the smallest.
  bool largest = false;
  /// Extra block columns beyond m; 0 picks a default.
  std::size_t guard = 0;
};

struct LobpcgStats {
  std::size_t iterations = 0;
  double max_residual = 0.0;
};

EigenBasis lobpcg_smallest(const SparseLaplacian& laplacian, std::size_t m,
                           const LobpcgOptions& options = {}, LobpcgStats* stats = nullptr);

/// Full symmetric eigendecomposition; refuses n > 2000.
EigenBasis dense_eigen_reference(const SparseLaplacian& laplacian, std::size_t m,
                                 bool largest = false);

/// Forces the largest-magnitude entry of every column positive (first one on ties).
void fix_signs(Matrix& q);

Matrix gft(const EigenBasis& basis, const Matrix& v);
Matrix igft(const EigenBasis& basis, const Matrix& c);

/// ||L q_j - sigma_j q_j|| for every column.
Vector residual_norms(const SparseLaplacian& laplacian, const EigenBasis& basis);

/// Sine of the largest principal angle between the column spans of two
/// orthonormal bases of equal width.
double max_principal_angle(const Matrix& a, const Matrix& b);

/// FNV-1a over node count, edge list and weight bits.
std::uint64_t graph_content_hash(const mesh::Graph& graph);

}  // namespace virso::spectral
