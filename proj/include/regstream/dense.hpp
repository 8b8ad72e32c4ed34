#pragma once

#include <Eigen/Core>

namespace regstream {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

}  // namespace regstream
