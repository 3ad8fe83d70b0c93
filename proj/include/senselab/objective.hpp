#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>

#include "senselab/operator.hpp"

namespace senselab {

// Candidate factor X in R^{n x r} with cached singular-value data.
struct FactorPoint {
  Matrix x;
  double sigma_r = 0.0;  // smallest singular value of x
  double op_norm = 0.0;  // ||x||_2
};

inline FactorPoint make_factor_point(const Matrix& x) {
  Vector sv = singular_values(x);
  return FactorPoint{x, sv(sv.size() - 1), sv(0)};
}

struct Residual {
  Vector e;    // vec(X X^T - M*), length n^2
  Vector fit;  // A e + w = A(X X^T) - (b - w), length m
};

inline void check_factor_shape(const ProblemInstance& inst, const Matrix& x) {
  if (x.rows() != inst.op.n() || x.cols() != inst.r)
    throw DimensionError("factor X must be n x r");
}

inline Residual residual(const ProblemInstance& inst, const Matrix& x) {
  check_factor_shape(inst, x);
  Matrix xxt = x * x.transpose();
  Residual res;
  res.e = vec(Matrix(xxt - inst.truth.m_star));
  res.fit = inst.op.apply_forward(xxt) - inst.measurements;
  return res;
}

// f(X) = 0.5 ||A(X X^T) - (b - w)||^2, computed from observed data only.
inline double loss(const ProblemInstance& inst, const Matrix& x) {
  check_factor_shape(inst, x);
  Vector fit = inst.op.apply_forward(Matrix(x * x.transpose())) - inst.measurements;
  return 0.5 * fit.squaredNorm();
}

// Symmetrized back-projected residual mat_s(A^T(A e + w)); the n x n core of
// both the gradient and the curvature term of the Hessian.
inline Matrix grad_core(const ProblemInstance& inst, const Matrix& x) {
  Residual res = residual(inst, x);
  return mat_s(Vector(inst.op.matrix_form().transpose() * res.fit));
}

inline Matrix gradient(const ProblemInstance& inst, const Matrix& x) {
  return 2.0 * grad_core(inst, x) * x;
}

// Action of the Hessian quadratic form at a base point, given the n x n core
// matrix (grad_core for the noisy objective, mat_s(H e) for the noiseless one).
class HessianOp {
 public:
  HessianOp(const SensingOperator& op, Matrix x, Matrix core)
      : op_(&op), x_(std::move(x)), core_(std::move(core)) {}

  int n() const { return static_cast<int>(x_.rows()); }
  int r() const { return static_cast<int>(x_.cols()); }
  Eigen::Index dim() const { return x_.size(); }

  // H vec(U) reshaped to n x r.
  Matrix apply(const Matrix& u) const {
    const Matrix& a = op_->matrix_form();
    Vector lifted = vec(Matrix(x_ * u.transpose() + u * x_.transpose()));
    Matrix w = mat(Vector(a.transpose() * (a * lifted)));
    return 2.0 * core_ * u + (w + w.transpose()) * x_;
  }

  Vector apply_vec(const Vector& v) const {
    Matrix u = Eigen::Map<const Matrix>(v.data(), x_.rows(), x_.cols());
    return vec(apply(u));
  }

  // Dense nr x nr matrix 2 I_r (x) core + Xhat^T A^T A Xhat.
  Matrix dense() const {
    Eigen::Index d = dim();
    if (d > 2000) throw ParameterError("dense Hessian limited to nr <= 2000");
    Matrix h(d, d);
    Vector basis = Vector::Zero(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      basis(j) = 1.0;
      h.col(j) = apply_vec(basis);
      basis(j) = 0.0;
    }
    return 0.5 * (h + h.transpose());
  }

 private:
  const SensingOperator* op_;
  Matrix x_;
  Matrix core_;
};

inline HessianOp hessian_op(const ProblemInstance& inst, const Matrix& x) {
  check_factor_shape(inst, x);
  return HessianOp(inst.op, x, grad_core(inst, x));
}

// Hessian of the noiseless objective f_0 (w = 0): core is mat_s(H e).
inline HessianOp hessian_op_noiseless(const ProblemInstance& inst, const Matrix& x) {
  check_factor_shape(inst, x);
  Residual res = residual(inst, x);
  Vector ae = res.fit - inst.noise;  // A e
  Matrix core = mat_s(Vector(inst.op.matrix_form().transpose() * ae));
  return HessianOp(inst.op, x, core);
}

inline Matrix hessian_dense(const ProblemInstance& inst, const Matrix& x) {
  return hessian_op(inst, x).dense();
}

inline Matrix hessian_hvp(const ProblemInstance& inst, const Matrix& x, const Matrix& u) {
  if (u.rows() != x.rows() || u.cols() != x.cols())
    throw DimensionError("direction U must match X");
  return hessian_op(inst, x).apply(u);
}

struct EigResult {
  double value = 0.0;
  Vector vector;
  double residual = 0.0;
  int iterations = 0;
};

// Smallest eigenvalue of a symmetric operator by Lanczos with full
// reorthogonalization. Deterministic given the seed.
inline EigResult min_eig_lanczos(const std::function<Vector(const Vector&)>& apply,
                                 Eigen::Index dim, double tol, std::uint64_t seed = 11,
                                 int max_iter = 0) {
  if (tol <= 0) throw ParameterError("tol must be positive");
  if (max_iter <= 0) max_iter = static_cast<int>(std::min<Eigen::Index>(dim, 500));

  Rng rng = Rng::derive(seed, 0xfacade);
  Matrix v_basis(dim, max_iter + 1);
  Vector alpha(max_iter), beta(max_iter);

  Vector v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.normal();
  v /= v.norm();
  v_basis.col(0) = v;

  EigResult best;
  best.residual = std::numeric_limits<double>::infinity();
  int k = 0;
  for (; k < max_iter; ++k) {
    Vector w = apply(v_basis.col(k));
    alpha(k) = v_basis.col(k).dot(w);
    w -= alpha(k) * v_basis.col(k);
    if (k > 0) w -= beta(k - 1) * v_basis.col(k - 1);
    // full reorthogonalization
    w -= v_basis.leftCols(k + 1) * (v_basis.leftCols(k + 1).transpose() * w);
    beta(k) = w.norm();

    Matrix t = Matrix::Zero(k + 1, k + 1);
    for (int i = 0; i <= k; ++i) {
      t(i, i) = alpha(i);
      if (i < k) t(i, i + 1) = t(i + 1, i) = beta(i);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(t);
    double theta = es.eigenvalues()(0);
    Vector s = es.eigenvectors().col(0);
    double res = beta(k) * std::abs(s(k));
    if (res < best.residual) {
      best.value = theta;
      best.vector = v_basis.leftCols(k + 1) * s;
      best.residual = res;
      best.iterations = k + 1;
    }
    if (res <= tol * (1.0 + std::abs(theta))) return best;
    if (beta(k) < 1e-14) {
      // Krylov space exhausted: the Ritz value is exact on the explored
      // invariant subspace. Restart directions are already covered by the
      // random start for generic operators; report what we have.
      best.residual = 0.0;
      return best;
    }
    v_basis.col(k + 1) = w / beta(k);
  }
  if (static_cast<Eigen::Index>(k) >= dim) return best;  // full decomposition reached
  throw ConvergenceError("Lanczos did not converge: residual " + std::to_string(best.residual) +
                         " after " + std::to_string(k) + " iterations");
}

// lambda_min of the Hessian at (inst, X), with the eigenvector reshaped n x r.
inline std::pair<double, Matrix> min_hessian_eig(const ProblemInstance& inst, const Matrix& x,
                                                 double tol) {
  HessianOp h = hessian_op(inst, x);
  EigResult res = min_eig_lanczos([&h](const Vector& v) { return h.apply_vec(v); }, h.dim(), tol,
                                  inst.seed + 17);
  Matrix u = Eigen::Map<const Matrix>(res.vector.data(), x.rows(), x.cols());
  return {res.value, u};
}

struct SocResiduals {
  double kappa_grad = 0.0;  // ||grad f||_F / ||X||_2
  double kappa_eig = 0.0;   // max(0, -lambda_min(hess f))
  bool zero_point = false;  // X == 0; kappa_grad uses norm 1
};

inline SocResiduals soc_residuals(const ProblemInstance& inst, const Matrix& x,
                                  double eig_tol = 1e-9) {
  SocResiduals out;
  double xnorm = spectral_norm(x);
  out.zero_point = (xnorm == 0.0);
  double denom = out.zero_point ? 1.0 : xnorm;
  out.kappa_grad = gradient(inst, x).norm() / denom;
  out.kappa_eig = std::max(0.0, -min_hessian_eig(inst, x, eig_tol).first);
  return out;
}

struct SecondOrderReport {
  double loss = 0.0;
  Matrix grad;
  double grad_norm = 0.0;
  double hess_min_eig = 0.0;
  Vector residual;  // e = vec(X X^T - M*)
};

inline SecondOrderReport second_order_report(const ProblemInstance& inst, const Matrix& x,
                                             double eig_tol = 1e-9) {
  SecondOrderReport rep;
  rep.loss = loss(inst, x);
  rep.grad = gradient(inst, x);
  rep.grad_norm = rep.grad.norm();
  rep.hess_min_eig = min_hessian_eig(inst, x, eig_tol).first;
  rep.residual = residual(inst, x).e;
  return rep;
}

}  // namespace senselab
