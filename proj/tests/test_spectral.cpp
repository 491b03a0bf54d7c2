#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "support.hpp"
#include "virso/error.hpp"
#include "virso/spectral.hpp"

using namespace virso;
using namespace virso::spectral;

namespace {

// Laplacian assembled densely from the edge list, independent of the library.
Matrix dense_oracle_laplacian(const mesh::Graph& g, bool weighted) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  Matrix a = Matrix::Zero(n, n);
  for (std::size_t e = 0; e < g.edges().size(); ++e) {
    a(g.edges()[e].src, g.edges()[e].dst) = weighted ? g.weights()[e] : 1.0;
  }
  const Vector d = a.rowwise().sum();
  const Vector s = d.array().rsqrt();
  return Matrix::Identity(n, n) - s.asDiagonal() * a * s.asDiagonal();
}

}  // namespace

TEST(Laplacian, K2) {
  const auto g = test::graph_from_pairs(2, {{0, 1}});
  const Matrix l = normalized_laplacian(g, false).to_dense();
  Matrix expect(2, 2);
  expect << 1, -1, -1, 1;
  EXPECT_TRUE(l.isApprox(expect, 1e-15));
  const auto b = dense_eigen_reference(normalized_laplacian(g, false), 2);
  EXPECT_NEAR(b.sigma(0), 0.0, 1e-15);
  EXPECT_NEAR(b.sigma(1), 2.0, 1e-15);
}

TEST(Laplacian, TriangleSpectrum) {
  const auto g = test::graph_from_pairs(3, {{0, 1}, {1, 2}, {0, 2}});
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normalized_laplacian(g, false).to_dense());
  EXPECT_NEAR(es.eigenvalues()(0), 0.0, 1e-14);
  EXPECT_NEAR(es.eigenvalues()(1), 1.5, 1e-14);
  EXPECT_NEAR(es.eigenvalues()(2), 1.5, 1e-14);
}

TEST(Laplacian, MatchesDenseAssemblyAndIsSymmetric) {
  const auto cloud = test::random_cloud(120, 2);
  const auto g = mesh::compute_edge_weights(mesh::build_knn(cloud, 5), cloud);
  for (bool weighted : {false, true}) {
    const Matrix l = normalized_laplacian(g, weighted).to_dense();
    EXPECT_LT((l - dense_oracle_laplacian(g, weighted)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_TRUE(l == l.transpose());
    for (Eigen::Index i = 0; i < l.rows(); ++i) EXPECT_DOUBLE_EQ(l(i, i), 1.0);
  }
}

TEST(Laplacian, UnitWeightsEqualUnweighted) {
  const auto g0 = test::graph_from_pairs(4, {{0, 1}, {1, 2}, {2, 3}, {0, 2}});
  auto g1 = g0;
  g1.set_weights(std::vector<double>(g1.num_directed_edges(), 1.0));
  EXPECT_TRUE(normalized_laplacian(g0, false).to_dense() == normalized_laplacian(g1, true).to_dense());
}

TEST(Laplacian, IsolatedNodeNamed) {
  const auto g = test::graph_from_pairs(4, {{0, 1}, {1, 2}});
  try {
    normalized_laplacian(g, false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateGraph);
    EXPECT_NE(std::string(e.what()).find('3'), std::string::npos);
  }
}

TEST(Laplacian, NullSpace) {
  const auto cloud = test::random_cloud(150, 6);
  const auto g = mesh::build_knn(cloud, 8);
  ASSERT_TRUE(mesh::is_connected(g));
  const auto lap = normalized_laplacian(g, false);
  const auto b = lobpcg_smallest(lap, 4);
  EXPECT_LE(std::abs(b.sigma(0)), 1e-8);
  Vector s(150);
  for (int i = 0; i < 150; ++i) s(i) = std::sqrt(lap.degree[static_cast<std::size_t>(i)]);
  EXPECT_GE(std::abs(s.normalized().dot(b.q.col(0))), 1.0 - 1e-8);
}

TEST(DenseReference, PathP4ClosedForm) {
  const auto g = test::graph_from_pairs(4, {{0, 1}, {1, 2}, {2, 3}});
  const auto b = dense_eigen_reference(normalized_laplacian(g, false), 4);
  // Normalized path spectrum: 1 - cos(pi k / (n - 1)).
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(b.sigma(k), 1.0 - std::cos(M_PI * k / 3.0), 1e-14);
  // {0, 1 - 1/sqrt2, 1, 1 + 1/sqrt2} are the four lowest modes of the 5-node path.
  const auto g5 = test::graph_from_pairs(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}});
  const auto b5 = dense_eigen_reference(normalized_laplacian(g5, false), 4);
  EXPECT_NEAR(b5.sigma(0), 0.0, 1e-14);
  EXPECT_NEAR(b5.sigma(1), 1.0 - 1.0 / std::sqrt(2.0), 1e-14);
  EXPECT_NEAR(b5.sigma(2), 1.0, 1e-14);
  EXPECT_NEAR(b5.sigma(3), 1.0 + 1.0 / std::sqrt(2.0), 1e-14);
}

TEST(DenseReference, SelfConsistentRandomGraph) {
  const auto cloud = test::random_cloud(100, 13);
  const auto lap = normalized_laplacian(mesh::build_knn(cloud, 6), false);
  const auto b = dense_eigen_reference(lap, 10);
  EXPECT_LT((b.q.transpose() * b.q - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(residual_norms(lap, b).maxCoeff(), 1e-12);
  for (int i = 1; i < 10; ++i) EXPECT_LE(b.sigma(i - 1), b.sigma(i));
}

TEST(DenseReference, RefusesLargeGraphs) {
  mesh::Graph g;
  {
    std::vector<mesh::Edge> e;
    for (NodeId i = 0; i + 1 < 2100; ++i) e.push_back({i, i + 1});
    g = mesh::Graph::symmetrized(2100, e);
  }
  try {
    dense_eigen_reference(normalized_laplacian(g, false), 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("lobpcg"), std::string::npos);
  }
}

TEST(Lobpcg, K2SingleMode) {
  const auto lap = normalized_laplacian(test::graph_from_pairs(2, {{0, 1}}), false);
  const auto b = lobpcg_smallest(lap, 1);
  EXPECT_NEAR(b.sigma(0), 0.0, 1e-12);
  EXPECT_NEAR(b.q(0, 0), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(b.q(1, 0), 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(Lobpcg, MatchesDenseReference) {
  const auto cloud = test::random_cloud(200, 17);
  const auto lap = normalized_laplacian(mesh::build_knn(cloud, 8), false);
  LobpcgStats stats;
  const auto b = lobpcg_smallest(lap, 16, {}, &stats);
  const auto ref = dense_eigen_reference(lap, 16);
  EXPECT_LT((b.sigma - ref.sigma).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(max_principal_angle(b.q, ref.q), 1e-6);
  EXPECT_LT((b.q.transpose() * b.q - Matrix::Identity(16, 16)).cwiseAbs().maxCoeff(), 1e-8);
  for (Eigen::Index j = 0; j < 16; ++j) {
    EXPECT_LE(residual_norms(lap, b)(j), 1e-9 * std::max(1.0, b.sigma(j)));
  }
  EXPECT_LE(stats.max_residual, 1e-9);
}

TEST(Lobpcg, WeightedAndJacobi) {
  const auto cloud = test::random_cloud(180, 23);
  const auto g = mesh::compute_edge_weights(mesh::build_knn(cloud, 6), cloud);
  const auto lap = normalized_laplacian(g, true);
  LobpcgOptions opt;
  opt.jacobi = true;
  const auto b = lobpcg_smallest(lap, 8, opt);
  const auto ref = dense_eigen_reference(lap, 8);
  EXPECT_LT((b.sigma - ref.sigma).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(max_principal_angle(b.q, ref.q), 1e-6);
}

TEST(Lobpcg, LargestModes) {
  const auto cloud = test::random_cloud(160, 29);
  const auto lap = normalized_laplacian(mesh::build_knn(cloud, 6), false);
  LobpcgOptions opt;
  opt.largest = true;
  const auto b = lobpcg_smallest(lap, 6, opt);
  const auto ref = dense_eigen_reference(lap, 6, true);
  EXPECT_LT((b.sigma - ref.sigma).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(max_principal_angle(b.q, ref.q), 1e-6);
}

TEST(Lobpcg, DeterministicAndRangeChecked) {
  const auto cloud = test::random_cloud(100, 31);
  const auto lap = normalized_laplacian(mesh::build_knn(cloud, 5), false);
  const auto a = lobpcg_smallest(lap, 8);
  const auto b = lobpcg_smallest(lap, 8);
  EXPECT_TRUE(a.q == b.q);
  EXPECT_TRUE(a.sigma == b.sigma);
  for (Eigen::Index j = 0; j < 8; ++j) {
    EXPECT_GE(a.sigma(j), -1e-10);
    EXPECT_LE(a.sigma(j), 2.0 + 1e-10);
  }
  try {
    lobpcg_smallest(lap, 26);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidParameter);
  }
  EXPECT_THROW(lobpcg_smallest(lap, 0), Error);
}

TEST(Lobpcg, ConvergenceFailureCarriesResidual) {
  const auto cloud = test::random_cloud(400, 37);
  const auto lap = normalized_laplacian(mesh::build_knn(cloud, 5), false);
  LobpcgOptions opt;
  opt.max_iter = 2;
  opt.tol = 1e-14;
  try {
    lobpcg_smallest(lap, 10, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConvergenceFailure);
    EXPECT_NE(std::string(e.what()).find("residual"), std::string::npos);
  }
}

TEST(Gft, OrthonormalityAndProjection) {
  const auto cloud = test::random_cloud(60, 41);
  const auto lap = normalized_laplacian(mesh::build_knn(cloud, 5), false);
  const auto b = dense_eigen_reference(lap, 8);
  Matrix e1 = gft(b, b.q.col(0));
  EXPECT_NEAR(e1(0, 0), 1.0, 1e-12);
  EXPECT_LT(e1.bottomRows(7).cwiseAbs().maxCoeff(), 1e-12);

  const Matrix v = test::random_matrix(60, 3, 1);
  const Matrix perp = v - b.q * (b.q.transpose() * v);
  EXPECT_LT(gft(b, perp).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(igft(b, gft(b, perp)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(igft(b, gft(b, v)).norm(), v.norm() + 1e-12);

  const auto full = dense_eigen_reference(lap, 60);
  EXPECT_LT((igft(full, gft(full, v)) - v).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(gft(b, Matrix::Zero(59, 3)), Error);
  EXPECT_THROW(igft(b, Matrix::Zero(7, 3)), Error);
}

TEST(SignConvention, LargestEntryPositive) {
  Matrix q(3, 2);
  q << 0.1, -0.9, -0.8, 0.3, 0.2, 0.1;
  fix_signs(q);
  EXPECT_GT(q(1, 0), 0.0);
  EXPECT_GT(q(0, 1), 0.0);
}

TEST(GraphHash, SensitiveToContent) {
  const auto a = test::graph_from_pairs(3, {{0, 1}, {1, 2}});
  const auto b = test::graph_from_pairs(3, {{0, 1}, {0, 2}});
  EXPECT_EQ(graph_content_hash(a), graph_content_hash(test::graph_from_pairs(3, {{0, 1}, {1, 2}})));
  EXPECT_NE(graph_content_hash(a), graph_content_hash(b));
}
