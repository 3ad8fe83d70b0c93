#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "senselab/errors.hpp"
#include "senselab/prng.hpp"

namespace senselab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline int isqrt_exact(Eigen::Index len) {
  int n = static_cast<int>(std::llround(std::sqrt(static_cast<double>(len))));
  if (static_cast<Eigen::Index>(n) * n != len)
    throw DimensionError("vector length " + std::to_string(len) + " is not a perfect square");
  return n;
}

// vec stacks the columns of M.
inline Vector vec(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

inline Matrix mat(const Vector& v) {
  int n = isqrt_exact(v.size());
  return Eigen::Map<const Matrix>(v.data(), n, n);
}

// mat_s(v) = (M + M^T)/2 with M = mat(v).
inline Matrix mat_s(const Vector& v) {
  Matrix m = mat(v);
  return 0.5 * (m + m.transpose());
}

enum class ReshapeMode { Vec, Mat, MatS };

// Dispatching front end over vec/mat/mat_s; matrix result is returned for
// Mat/MatS, a vector (as an n^2 x 1 matrix) for Vec.
inline Matrix reshape(const Matrix& value, ReshapeMode mode) {
  switch (mode) {
    case ReshapeMode::Vec:
      if (value.rows() != value.cols())
        throw DimensionError("vec expects a square matrix");
      return vec(value);
    case ReshapeMode::Mat: {
      if (value.cols() != 1) throw DimensionError("mat expects a column vector");
      return mat(Vector(value.col(0)));
    }
    case ReshapeMode::MatS: {
      if (value.cols() != 1) throw DimensionError("mat_s expects a column vector");
      return mat_s(Vector(value.col(0)));
    }
  }
  throw ParameterError("unknown reshape mode");
}

inline Vector singular_values(const Matrix& m) {
  if (m.rows() >= 32 && m.cols() >= 32) return Eigen::BDCSVD<Matrix>(m).singularValues();
  return m.jacobiSvd().singularValues();
}

inline double spectral_norm(const Matrix& m) { return singular_values(m)(0); }

// Smallest singular value of a (possibly rectangular) matrix.
inline double smallest_singular_value(const Matrix& m) {
  Vector sv = singular_values(m);
  return sv(sv.size() - 1);
}

// Gaussian matrix with independent N(0,1) entries, filled column-major.
inline Matrix gaussian_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

// Random n x k orthonormal frame via Householder QR with a deterministic sign fix.
inline Matrix random_orthonormal(int n, int k, Rng& rng) {
  Matrix g = gaussian_matrix(n, k, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(n, k);
  Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  for (int j = 0; j < k; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

}  // namespace senselab
