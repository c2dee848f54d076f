#pragma once

#include <array>

#include <Eigen/Dense>

namespace spacegraph {

// Fixed-capacity dynamic-size types: dimensions never exceed 3, so nothing
// here touches the heap.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 3, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 3, 3>;

constexpr int kMaxDim = 3;

// Ambient space of an embedded sphere S^n ⊂ R^{n+1}.
using AVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim + 1, 1>;
using AMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim + 1, kMaxDim>;

// Rank-3 array T[k](i, j), e.g. Christoffel symbols Γ^k_ij or Hess f^γ_ij.
struct Tensor3 {
  int upper = 0;
  std::array<Mat, kMaxDim> c;

  Tensor3() = default;
  Tensor3(int upper_dim, int lower_dim) : upper(upper_dim) {
    for (int k = 0; k < upper_dim; ++k) c[k] = Mat::Zero(lower_dim, lower_dim);
  }
  Mat& operator[](int k) { return c[k]; }
  const Mat& operator[](int k) const { return c[k]; }
};

inline double det_small(const Mat& A) {
  if (A.rows() == 1) return A(0, 0);
  if (A.rows() == 2) return A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0);
  return A.determinant();
}

// Inverse of a small SPD matrix; closed form up to 2×2.
inline Mat inverse_small(const Mat& A) {
  if (A.rows() == 1) return Mat::Constant(1, 1, 1.0 / A(0, 0));
  if (A.rows() == 2) {
    const double det = A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0);
    Mat B(2, 2);
    B << A(1, 1) / det, -A(0, 1) / det, -A(1, 0) / det, A(0, 0) / det;
    return B;
  }
  return A.llt().solve(Mat::Identity(A.rows(), A.rows()));
}

}  // namespace spacegraph
