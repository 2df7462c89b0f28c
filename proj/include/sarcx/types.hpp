#pragma once

#include <Eigen/Dense>

namespace sarcx {

// All numeric pipeline state is double precision; gradient checks and the
// reference oracles rely on 64-bit arithmetic.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

} // namespace sarcx
