#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace virso {

/// Dense row-major storage used throughout. Rows are nodes (or edges, or
/// samples), columns are features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

using NodeId = std::uint32_t;

}  // namespace virso
