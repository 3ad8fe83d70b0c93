#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>

#include "senselab/objective.hpp"

namespace senselab {
namespace certify {

// Lifting matrix Xhat in R^{n^2 x nr} with Xhat vec(U) = vec(X U^T + U X^T).
inline Matrix lift_matrix(const Matrix& x) {
  const int n = static_cast<int>(x.rows());
  const int r = static_cast<int>(x.cols());
  Matrix lift(static_cast<Eigen::Index>(n) * n, static_cast<Eigen::Index>(n) * r);
  Matrix u = Matrix::Zero(n, r);
  for (int j = 0; j < r; ++j)
    for (int i = 0; i < n; ++i) {
      u(i, j) = 1.0;
      lift.col(static_cast<Eigen::Index>(j) * n + i) =
          vec(Matrix(x * u.transpose() + u * x.transpose()));
      u(i, j) = 0.0;
    }
  return lift;
}

struct NecessaryCheck {
  double foc_lhs = 0.0;     // ||Xhat^T H e||
  double foc_rhs = 0.0;     // (2||A^T w|| + kappa) ||X||_2
  double foc_margin = 0.0;  // rhs - lhs
  double soc_min_eig = 0.0; // lambda_min(2 I_r (x) mat_s(H e) + Xhat^T H Xhat)
  double soc_rhs = 0.0;     // -(2||A^T w|| + kappa)
  double soc_margin = 0.0;  // min_eig - rhs
  bool foc_pass = false;
  bool soc_pass = false;
};

inline double realized_eps(const ProblemInstance& inst) {
  return (inst.op.matrix_form().transpose() * inst.noise).norm();
}

// First- and second-order necessary conditions for an approximate
// second-order critical point, evaluated with H = A^T A and the noise level eps.
inline NecessaryCheck check_necessary(const ProblemInstance& inst, const Matrix& x, double kappa,
                                      double eps) {
  check_factor_shape(inst, x);
  Residual res = residual(inst, x);
  Vector ae = res.fit - inst.noise;  // A e
  Vector he = inst.op.matrix_form().transpose() * ae;
  double level = 2.0 * eps + kappa;

  NecessaryCheck out;
  out.foc_lhs = (2.0 * mat_s(he) * x).norm();
  out.foc_rhs = level * spectral_norm(x);
  out.foc_margin = out.foc_rhs - out.foc_lhs;
  out.foc_pass = out.foc_margin >= 0;

  HessianOp h(inst.op, x, mat_s(he));
  out.soc_min_eig =
      min_eig_lanczos([&h](const Vector& v) { return h.apply_vec(v); }, h.dim(), 1e-9,
                      inst.seed + 53)
          .value;
  out.soc_rhs = -level;
  out.soc_margin = out.soc_min_eig - out.soc_rhs;
  out.soc_pass = out.soc_margin >= 0;
  return out;
}

struct AlignmentStats {
  Matrix z;          // n x r, Z Z^T = M*, rank r*
  Matrix proj;       // projector onto range(X)
  Matrix proj_perp;  // I - proj
  Matrix r_mat;      // R with proj Z = X R
  Matrix y_hat;      // 0.5 X - 0.5 X R R^T - P_perp Z R^T
  Vector e;          // vec(X X^T - M*)
  Vector lifted_y;   // vec(X Yhat^T + Yhat X^T)
  double alpha = 0.0;
  double beta = 0.0;
  double theta = 0.0;  // angle between lifted_y and e
  double sigma_r = 0.0;
  double x_norm = 0.0;
  bool perp_flag = false;   // P_perp Z == 0
  bool degenerate = false;  // X X^T == M*
};

// Factor square root of M* fixed by eigendecomposition: top-r* eigenpairs,
// columns scaled by sqrt(lambda), zero-padded to n x r.
inline Matrix truth_factor(const Matrix& m_star, int r, int r_star) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m_star);
  const int n = static_cast<int>(m_star.rows());
  if (r_star < 1 || r_star > r) throw ParameterError("require 1 <= r_star <= r");
  Matrix z = Matrix::Zero(n, r);
  for (int i = 0; i < r_star; ++i) {
    double lam = es.eigenvalues()(n - 1 - i);
    if (lam < 1e-12) throw ValidationError("lambda_{r*}(M*) below 1e-12: degenerate truth");
    z.col(i) = std::sqrt(lam) * es.eigenvectors().col(n - 1 - i);
  }
  return z;
}

inline AlignmentStats align_decompose(const Matrix& x, const Matrix& m_star, int r_star) {
  const int n = static_cast<int>(x.rows());
  const int r = static_cast<int>(x.cols());
  AlignmentStats st;
  st.z = truth_factor(m_star, r, r_star);
  st.e = vec(Matrix(x * x.transpose() - m_star));

  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  st.sigma_r = svd.singularValues()(r - 1);
  st.x_norm = svd.singularValues()(0);
  int rank = 0;
  double cutoff = 1e-12 * std::max(1.0, st.x_norm);
  for (int i = 0; i < r; ++i)
    if (svd.singularValues()(i) > cutoff) ++rank;
  Matrix q = svd.matrixU().leftCols(rank);
  st.proj = q * q.transpose();
  st.proj_perp = Matrix::Identity(n, n) - st.proj;

  // R = pinv(X) Z is the least-squares witness of proj Z = X R.
  Vector inv_sv = svd.singularValues().head(rank).cwiseInverse();
  Matrix pinv = svd.matrixV().leftCols(rank) * inv_sv.asDiagonal() * q.transpose();
  st.r_mat = pinv * st.z;

  Matrix z_perp = st.proj_perp * st.z;
  st.perp_flag = z_perp.norm() <= 1e-10 * std::max(1.0, st.z.norm());
  st.y_hat = 0.5 * x - 0.5 * x * st.r_mat * st.r_mat.transpose() - z_perp * st.r_mat.transpose();
  st.lifted_y = vec(Matrix(x * st.y_hat.transpose() + st.y_hat * x.transpose()));

  double e_norm = st.e.norm();
  if (e_norm <= 1e-14 * std::max(1.0, m_star.norm())) {
    st.degenerate = true;
    st.alpha = st.beta = st.theta = 0.0;
    return st;
  }
  Matrix zperp_gram = z_perp * z_perp.transpose();
  st.alpha = std::min(1.0, zperp_gram.norm() / e_norm);
  st.beta = zperp_gram.norm() > 0
                ? st.sigma_r * st.sigma_r * zperp_gram.trace() / (e_norm * zperp_gram.norm())
                : 0.0;
  double ly_norm = st.lifted_y.norm();
  double cos_theta =
      ly_norm > 0 ? std::clamp(st.lifted_y.dot(st.e) / (ly_norm * e_norm), -1.0, 1.0) : 1.0;
  st.theta = std::acos(cos_theta);
  return st;
}

// psi(gamma) = gamma alpha + sqrt(1-gamma^2) sqrt(1-alpha^2); psi(alpha) = 1.
inline double psi(double gamma, double alpha) {
  return gamma * alpha + std::sqrt(std::max(0.0, 1.0 - gamma * gamma)) *
                             std::sqrt(std::max(0.0, 1.0 - alpha * alpha));
}

// Closed-form optimum of (2 beta gamma + 1 - psi(gamma)) / (1 + psi(gamma)).
inline double eta0(double alpha, double beta) {
  if (alpha < 0 || alpha > 1) throw ParameterError("require alpha in [0, 1]");
  if (beta < 0) throw ParameterError("require beta >= 0");
  double root = std::sqrt(std::max(0.0, 1.0 - alpha * alpha));
  if (beta >= alpha / (1.0 + root)) return (1.0 - root) / (1.0 + root);
  if (beta * alpha >= 1.0) throw ParameterError("beta * alpha >= 1: invalid alignment stats");
  return beta * (alpha - beta) / (1.0 - beta * alpha);
}

inline double eta0_threshold(int r, int r_star) {
  double ratio = std::sqrt(static_cast<double>(r_star) / r);
  return ratio / (2.0 + ratio);
}

struct PsdSplit {
  Matrix pos;  // [M]_+
  Matrix neg;  // [M]_-
};

inline PsdSplit psd_split(const Matrix& m) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, m.norm()))
    throw ParameterError("psd_split expects a symmetric matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  Vector pos_ev = es.eigenvalues().cwiseMax(0.0);
  Vector neg_ev = (-es.eigenvalues()).cwiseMax(0.0);
  PsdSplit out;
  out.pos = es.eigenvectors() * pos_ev.asDiagonal() * es.eigenvectors().transpose();
  out.neg = es.eigenvectors() * neg_ev.asDiagonal() * es.eigenvectors().transpose();
  return out;
}

// Rank-2 split of a b^T + b a^T without a dense eigensolve.
inline PsdSplit rank2_psd_split(const Vector& a, const Vector& b) {
  const Eigen::Index n = a.size();
  double na = a.norm();
  PsdSplit out;
  out.pos = Matrix::Zero(n, n);
  out.neg = Matrix::Zero(n, n);
  if (na == 0.0 || b.norm() == 0.0) return out;
  Vector u = a / na;
  double p = u.dot(b);
  Vector w = b - p * u;
  double q = w.norm();
  if (q <= 1e-15 * b.norm()) {
    // b parallel to a: M = 2 p ||a|| u u^T
    Matrix uu = u * u.transpose();
    if (p >= 0)
      out.pos = 2.0 * p * na * uu;
    else
      out.neg = -2.0 * p * na * uu;
    return out;
  }
  Vector w_hat = w / q;
  // in the {u, w_hat} basis: [[2 p ||a||, q ||a||], [q ||a||, 0]]
  Eigen::Matrix2d small;
  small << 2.0 * p * na, q * na, q * na, 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(small);
  for (int i = 0; i < 2; ++i) {
    double lam = es.eigenvalues()(i);
    Vector dir = es.eigenvectors()(0, i) * u + es.eigenvectors()(1, i) * w_hat;
    if (lam >= 0)
      out.pos += lam * dir * dir.transpose();
    else
      out.neg += -lam * dir * dir.transpose();
  }
  return out;
}

struct DualCertificate {
  Matrix u1, u2;    // n^2 x n^2 PSD
  Matrix w_block;   // nr x nr PSD (global certificates only; empty for local)
  Matrix g;         // nr x nr Gram block
  double lam = 0.0;
  Vector y;         // nr
  double objective = 0.0;
  double gamma = -1.0;  // mixing parameter used (global only)
  bool is_global = true;
  std::map<std::string, double> residuals;
};

namespace detail {

// Sum of the r diagonal n x n blocks of the nr x nr matrix W, as a vector.
inline Vector w_aggregate(const Matrix& w_block, int n, int r) {
  Matrix agg = Matrix::Zero(n, n);
  for (int i = 0; i < r; ++i) agg += w_block.block(static_cast<Eigen::Index>(i) * n,
                                                   static_cast<Eigen::Index>(i) * n, n, n);
  return vec(agg);
}

inline double golden_section_min(const std::function<double(double)>& f, double lo, double hi,
                                 double tol) {
  const double inv_phi = 0.6180339887498948482;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

// Mixing-parameter objective (2 beta gamma + 1 - psi(gamma)) / (1 + psi(gamma)).
inline double gamma_objective(double gamma, double alpha, double beta) {
  double ps = psi(gamma, alpha);
  return (2.0 * beta * gamma + 1.0 - ps) / (1.0 + ps);
}

inline double choose_gamma(double alpha, double beta) {
  double best = 0.0;
  double best_val = gamma_objective(0.0, alpha, beta);
  for (double cand : {1.0, std::clamp(alpha, 0.0, 1.0),
                      detail::golden_section_min(
                          [&](double g) { return gamma_objective(g, alpha, beta); }, 0.0, 1.0,
                          1e-10)}) {
    double val = gamma_objective(cand, alpha, beta);
    if (val < best_val) {
      best_val = val;
      best = cand;
    }
  }
  return best;
}

inline DualCertificate verify_certificate(DualCertificate cert, const Matrix& x, const Vector& e,
                                          double eps, double kappa, double tol);

// Explicit feasible point of the dual program bounding eta*(X). gamma < 0
// selects the minimizing mixing parameter automatically.
inline DualCertificate build_global_certificate(const Matrix& x, const Matrix& m_star, int r_star,
                                                double eps, double kappa, double gamma = -1.0) {
  const int n = static_cast<int>(x.rows());
  const int r = static_cast<int>(x.cols());
  const Eigen::Index n2 = static_cast<Eigen::Index>(n) * n;
  const Eigen::Index nr = static_cast<Eigen::Index>(n) * r;
  double level = 2.0 * eps + kappa;
  if (level <= 0) throw ParameterError("require 2 eps + kappa > 0 for the dual scaling");

  AlignmentStats st = align_decompose(x, m_star, r_star);
  if (st.degenerate) throw ParameterError("X X^T equals M*: nothing to certify");
  double ne = st.e.norm();
  double x_norm = st.x_norm;

  DualCertificate cert;
  cert.is_global = true;

  if (x_norm == 0.0) {
    // zero factor: only covered in the rank-1 analysis
    if (r != 1 || r_star != 1)
      throw HypothesisError("sigma_r(X) = 0 without P_perp Z = 0: no construction available");
    cert.u1 = st.e * st.e.transpose() / (ne * ne);
    cert.u2 = Matrix::Zero(n2, n2);
    cert.y = Vector::Zero(nr);
    cert.w_block = m_star / (2.0 * ne * ne);
    cert.lam = 0.0;
    cert.g = Matrix::Zero(nr, nr);
    cert.objective = level * cert.w_block.trace();
    cert.gamma = 0.0;
    return verify_certificate(std::move(cert), x, st.e, eps, kappa, 1e-8);
  }

  if (st.perp_flag) {
    // P_perp Z = 0: lifted y_hat reproduces e exactly.
    cert.u1 = st.e * st.e.transpose() / (ne * ne);
    cert.u2 = Matrix::Zero(n2, n2);
    cert.y = vec(st.y_hat) / (2.0 * ne * ne);
    cert.w_block = Matrix::Zero(nr, nr);
    cert.lam = cert.y.norm() / (level * x_norm);
    cert.g = cert.lam > 0 ? Matrix(cert.y * cert.y.transpose() / cert.lam)
                          : Matrix::Zero(nr, nr);
    cert.objective = 2.0 * level * x_norm * cert.y.norm();
    cert.gamma = 0.0;
    return verify_certificate(std::move(cert), x, st.e, eps, kappa, 1e-8);
  }

  if (st.sigma_r <= 0)
    throw HypothesisError("sigma_r(X) = 0 without P_perp Z = 0: no construction available");

  Matrix z_perp = st.proj_perp * st.z;
  Matrix zperp_gram = z_perp * z_perp.transpose();
  double zp_fro = zperp_gram.norm();
  double ly_norm = st.lifted_y.norm();
  if (ly_norm <= 0)
    throw ParameterError("lifted alignment direction vanished: inconsistent inputs");

  if (gamma < 0) gamma = choose_gamma(st.alpha, st.beta);
  double k_scale = gamma / (ne * zp_fro);
  double l_scale = std::sqrt(std::max(0.0, 1.0 - gamma * gamma)) / (ne * ly_norm);

  // spectral frames: q1 = bottom eigenvector of X^T X, P = eigenvectors of Z_perp Z_perp^T
  Eigen::SelfAdjointEigenSolver<Matrix> es_x(x.transpose() * x);
  Vector q1 = es_x.eigenvectors().col(0);
  Eigen::SelfAdjointEigenSolver<Matrix> es_zp(zperp_gram);

  Matrix w_block = Matrix::Zero(nr, nr);
  Matrix w_agg = Matrix::Zero(n, n);
  double w_trace = 0.0;
  double xx_w = 0.0;  // <Xhat^T Xhat, W>
  for (int i = 0; i < r; ++i) {
    double gii = std::max(0.0, es_zp.eigenvalues()(n - 1 - i));
    if (k_scale * gii <= 0) continue;
    Vector p_i = es_zp.eigenvectors().col(n - 1 - i);
    Matrix v_i = std::sqrt(k_scale * gii) * p_i * q1.transpose();
    Vector v_vec = vec(v_i);
    w_block += v_vec * v_vec.transpose();
    w_agg += v_i * v_i.transpose();
    w_trace += v_vec.squaredNorm();
    xx_w += (x * v_i.transpose() + v_i * x.transpose()).squaredNorm();
  }
  Vector y = l_scale * vec(st.y_hat);

  Vector d = lift_matrix(x) * y - vec(w_agg);
  PsdSplit split = rank2_psd_split(d, st.e);
  double tr_pos = split.pos.trace();
  if (tr_pos <= 0) throw ParameterError("degenerate rank-2 split in certificate construction");

  cert.u1 = split.pos / tr_pos;
  cert.u2 = split.neg / tr_pos;
  cert.y = y / tr_pos;
  cert.w_block = w_block / tr_pos;
  cert.lam = cert.y.norm() / (level * x_norm);
  cert.g = cert.lam > 0 ? Matrix(cert.y * cert.y.transpose() / cert.lam) : Matrix::Zero(nr, nr);
  cert.gamma = gamma;
  cert.objective =
      (split.neg.trace() + xx_w + level * w_trace + 2.0 * level * x_norm * y.norm()) / tr_pos;
  return verify_certificate(std::move(cert), x, st.e, eps, kappa, 1e-8);
}

// Dual feasible point for the stationarity-only relaxation used by the local
// guarantee (no W block, kappa = 0).
inline DualCertificate build_local_certificate(const Matrix& x, const Matrix& m_star, int r_star,
                                               double eps) {
  const int n = static_cast<int>(x.rows());
  const int r = static_cast<int>(x.cols());
  const Eigen::Index nr = static_cast<Eigen::Index>(n) * r;
  if (eps <= 0) throw ParameterError("require eps > 0 for the dual scaling");

  AlignmentStats st = align_decompose(x, m_star, r_star);
  if (st.degenerate) throw ParameterError("X X^T equals M*: nothing to certify");
  if (st.x_norm == 0.0) throw HypothesisError("sigma_r(X) = 0: local construction undefined");

  PsdSplit split = rank2_psd_split(st.lifted_y, st.e);
  double tr_pos = split.pos.trace();
  if (tr_pos <= 0) throw ParameterError("degenerate rank-2 split in certificate construction");

  DualCertificate cert;
  cert.is_global = false;
  cert.u1 = split.pos / tr_pos;
  cert.u2 = split.neg / tr_pos;
  cert.y = vec(st.y_hat) / tr_pos;
  cert.w_block = Matrix();
  cert.lam = cert.y.norm() / (2.0 * eps * st.x_norm);
  cert.g = cert.lam > 0 ? Matrix(cert.y * cert.y.transpose() / cert.lam) : Matrix::Zero(nr, nr);
  cert.objective = (split.neg.trace() + 4.0 * eps * st.x_norm * st.y_hat.norm()) / tr_pos;
  return verify_certificate(std::move(cert), x, st.e, eps, 0.0, 1e-8);
}

// Constraint-by-constraint feasibility audit; violations are recorded in the
// residual map, never thrown.
inline DualCertificate verify_certificate(DualCertificate cert, const Matrix& x, const Vector& e,
                                          double eps, double kappa, double tol) {
  const int n = static_cast<int>(x.rows());
  const int r = static_cast<int>(x.cols());
  double level = cert.is_global ? 2.0 * eps + kappa : 2.0 * eps;
  double x_norm = spectral_norm(x);

  auto psd_violation = [](const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()),
                                             Eigen::EigenvaluesOnly);
    return std::max(0.0, -es.eigenvalues()(0));
  };

  std::map<std::string, double>& res = cert.residuals;
  res["trace_u1"] = std::abs(cert.u1.trace() - 1.0);

  Vector combined = lift_matrix(x) * cert.y;
  if (cert.is_global) combined -= detail::w_aggregate(cert.w_block, n, r);
  Matrix rank2 = combined * e.transpose() + e * combined.transpose();
  res["rank2_eq"] = (rank2 - (cert.u1 - cert.u2)).norm();

  res["psd_u1"] = psd_violation(cert.u1);
  res["psd_u2"] = psd_violation(cert.u2);
  if (cert.is_global) res["psd_w"] = psd_violation(cert.w_block);

  const Eigen::Index d = cert.y.size();
  Matrix block = Matrix::Zero(d + 1, d + 1);
  block.topLeftCorner(d, d) = cert.g;
  block.topRightCorner(d, 1) = -cert.y;
  block.bottomLeftCorner(1, d) = -cert.y.transpose();
  block(d, d) = cert.lam;
  res["psd_block"] = psd_violation(block);

  double obj;
  if (cert.is_global) {
    Matrix lift = lift_matrix(x);
    Matrix gram = lift.transpose() * lift;
    obj = cert.u2.trace() + (gram * cert.w_block).trace() + level * cert.w_block.trace() +
          level * level * x_norm * x_norm * cert.lam + cert.g.trace();
  } else {
    obj = cert.u2.trace() + 4.0 * eps * eps * x_norm * x_norm * cert.lam + cert.g.trace();
  }
  res["objective"] = std::abs(obj - cert.objective);
  (void)tol;
  return cert;
}

struct EtaBounds {
  double eta_lower = 0.0;      // (1 - delta)/(1 + delta)
  double eta0 = 0.0;           // analytic worst-case dual value
  double eta_upper = 0.0;      // certificate objective
  double ratio_threshold = 0.0;
};

inline EtaBounds eta_bounds(const AlignmentStats& st, const DualCertificate& cert, double delta,
                            int r, int r_star) {
  EtaBounds out;
  out.eta_lower = (1.0 - delta) / (1.0 + delta);
  out.eta0 = eta0(st.alpha, st.beta);
  out.eta_upper = cert.objective;
  out.ratio_threshold = eta0_threshold(r, r_star);
  return out;
}

}  // namespace certify
}  // namespace senselab
