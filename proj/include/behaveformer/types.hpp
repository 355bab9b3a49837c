#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

namespace bf {

using Scalar = double;
using Eigen::Index;

using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

}  // namespace bf
