#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace sparc {

// All model math is f64; storage on disk is f32 (see checkpoint.hpp).
// Row-major so serialized order equals memory order.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

bool all_finite(const Mat& m);

// FNV over the f32 image of the matrix; used by determinism tests.
uint64_t matrix_checksum(const Mat& m, uint64_t h = 0xcbf29ce484222325ull);

}  // namespace sparc
