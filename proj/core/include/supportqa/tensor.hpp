#pragma once

#include <Eigen/Core>

namespace supportqa {

// Row-major so that one row is one sequence position.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace supportqa
