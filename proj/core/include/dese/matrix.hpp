#pragma once

#include <Eigen/Dense>

namespace dese {

// All numeric state is 64-bit, row-major dense. The graphs in scope are
// small enough (N <= ~14k) that dense storage is simpler and safer than
// sparse bookkeeping.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

inline bool is_symmetric(const Mat& m, double tol = 1e-9) {
  if (m.rows() != m.cols()) return false;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

inline bool has_zero_diagonal(const Mat& m, double tol = 0.0) {
  return m.diagonal().cwiseAbs().maxCoeff() <= tol;
}

}  // namespace dese
