// SPDX-License-Identifier: Apache-2.0

#ifndef MORPHCTL_MATRIX_H_
#define MORPHCTL_MATRIX_H_

#include <Eigen/Core>

namespace morphctl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace morphctl

#endif  // MORPHCTL_MATRIX_H_
