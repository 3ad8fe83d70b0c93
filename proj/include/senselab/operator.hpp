#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "senselab/linalg.hpp"

namespace senselab {

// Linear measurement operator M -> [<A_1,M>, ..., <A_m,M>] together with its
// stacked matrix form (row i = vec(A_i)^T), materialized on first use.
class SensingOperator {
 public:
  SensingOperator() = default;
  SensingOperator(int n, std::vector<Matrix> sensing)
      : n_(n), m_(static_cast<int>(sensing.size())), sensing_(std::move(sensing)) {
    for (const auto& a : sensing_)
      if (a.rows() != n_ || a.cols() != n_)
        throw DimensionError("sensing matrix is not n x n");
  }

  int n() const { return n_; }
  int m() const { return m_; }
  const std::vector<Matrix>& sensing() const { return sensing_; }

  const Matrix& matrix_form() const {
    if (!a_mat_) {
      Matrix a(m_, n_ * n_);
      for (int i = 0; i < m_; ++i) a.row(i) = vec(sensing_[i]).transpose();
      a_mat_ = std::move(a);
    }
    return *a_mat_;
  }

  double op_norm() const {
    if (!op_norm_) op_norm_ = spectral_norm(matrix_form());
    return *op_norm_;
  }

  Vector apply_forward(const Matrix& m) const {
    if (m.rows() != n_ || m.cols() != n_) throw DimensionError("apply_forward: matrix is not n x n");
    return matrix_form() * vec(m);
  }

  Matrix apply_adjoint(const Vector& y) const {
    if (y.size() != m_) throw DimensionError("apply_adjoint: vector length is not m");
    return mat(Vector(matrix_form().transpose() * y));
  }

 private:
  int n_ = 0;
  int m_ = 0;
  std::vector<Matrix> sensing_;
  mutable std::optional<Matrix> a_mat_;
  mutable std::optional<double> op_norm_;
};

struct GroundTruth {
  Matrix m_star;    // n x n symmetric PSD
  int r_star = 0;   // rank
  Vector spectrum;  // the r_star positive eigenvalues, descending

  void validate() const {
    if ((m_star - m_star.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw ValidationError("ground truth is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(m_star);
    Vector ev = es.eigenvalues().reverse();  // descending
    if (r_star < 1 || r_star > m_star.rows()) throw ValidationError("invalid r_star");
    if (ev(r_star - 1) <= 0) throw ValidationError("lambda_{r*}(M*) is not positive");
    for (int i = r_star; i < ev.size(); ++i)
      if (std::abs(ev(i)) > 1e-10) throw ValidationError("M* has nonzero eigenvalues beyond r_star");
  }
};

struct NoiseModel {
  enum class Kind { None, Gaussian, SubGaussian };
  Kind kind = Kind::None;
  double sigma = 0.0;

  static std::string kind_name(Kind k) {
    switch (k) {
      case Kind::None: return "none";
      case Kind::Gaussian: return "gaussian";
      case Kind::SubGaussian: return "subg";
    }
    return "none";
  }
  static Kind parse_kind(const std::string& s) {
    if (s == "none") return Kind::None;
    if (s == "gaussian") return Kind::Gaussian;
    if (s == "subg") return Kind::SubGaussian;
    throw ParameterError("unknown noise kind: " + s);
  }

  // One noise vector draw. The bounded sub-Gaussian model is uniform on
  // [-sigma, sigma], which is sigma-sub-Gaussian.
  Vector sample(int m, Rng& rng) const {
    Vector w = Vector::Zero(m);
    switch (kind) {
      case Kind::None: break;
      case Kind::Gaussian:
        for (int i = 0; i < m; ++i) w(i) = sigma * rng.normal();
        break;
      case Kind::SubGaussian:
        for (int i = 0; i < m; ++i) w(i) = rng.uniform(-sigma, sigma);
        break;
    }
    return w;
  }
};

struct ProblemInstance {
  SensingOperator op;
  GroundTruth truth;
  int r = 0;            // search rank, r >= r_star
  Vector noise;         // realized w
  Vector measurements;  // b - w with b = A(M*)
  NoiseModel noise_model;
  std::uint64_t seed = 0;
};

inline ProblemInstance generate_instance(int n, int m, int r, int r_star, const Vector& spectrum,
                                         const NoiseModel& noise_model, std::uint64_t seed) {
  if (r_star < 1 || r < r_star) throw ParameterError("require r >= r_star >= 1");
  if (spectrum.size() != r_star) throw ParameterError("spectrum must have r_star entries");
  for (int i = 0; i < r_star; ++i)
    if (spectrum(i) <= 0) throw ParameterError("spectrum entries must be positive");

  // Independent streams: sensing matrices, ground-truth frame, noise.
  Rng rng_a = Rng::derive(seed, 0);
  Rng rng_u = Rng::derive(seed, 1);
  Rng rng_w = Rng::derive(seed, 2);

  double scale = 1.0 / std::sqrt(static_cast<double>(m));
  std::vector<Matrix> sensing;
  sensing.reserve(m);
  for (int i = 0; i < m; ++i) sensing.push_back(scale * gaussian_matrix(n, n, rng_a));

  Matrix u = random_orthonormal(n, r_star, rng_u);
  Matrix m_star = u * spectrum.asDiagonal() * u.transpose();
  m_star = 0.5 * (m_star + m_star.transpose());

  ProblemInstance inst;
  inst.op = SensingOperator(n, std::move(sensing));
  inst.truth = GroundTruth{m_star, r_star, spectrum};
  inst.r = r;
  inst.noise = noise_model.sample(m, rng_w);
  inst.measurements = inst.op.apply_forward(m_star) - inst.noise;
  inst.noise_model = noise_model;
  inst.seed = seed;
  return inst;
}

struct RipEstimate {
  int g = 0;
  double delta_upper = 0.0;  // spectral bound, valid for all ranks
  double delta_lower = 0.0;  // Monte-Carlo witness
  int trials = 0;
  Matrix worst_witness;  // unit-Frobenius matrix of rank <= g attaining delta_lower
};

// Spectral upper bound max(1 - lambda_min(A^T A), lambda_max(A^T A) - 1),
// clamped at 0; lambda_min is 0 whenever m < n^2.
inline double rip_delta_upper(const SensingOperator& op) {
  Vector sv = singular_values(op.matrix_form());
  double lam_max = sv(0) * sv(0);
  double lam_min = 0.0;
  Eigen::Index dim = static_cast<Eigen::Index>(op.n()) * op.n();
  if (op.m() >= dim) {
    double s = sv(sv.size() - 1);
    lam_min = s * s;
  }
  return std::max(0.0, std::max(1.0 - lam_min, lam_max - 1.0));
}

inline RipEstimate estimate_rip(const SensingOperator& op, int g, int trials, std::uint64_t seed) {
  if (g < 1 || g > op.n()) throw ParameterError("require 1 <= g <= n");
  RipEstimate est;
  est.g = g;
  est.trials = trials;
  est.delta_upper = rip_delta_upper(op);
  est.delta_lower = 0.0;
  est.worst_witness = Matrix::Zero(op.n(), op.n());
  // Deterministic rank-1 coordinate probes; the random sweep rarely hits an
  // axis-aligned worst case exactly.
  for (int i = 0; i < op.n(); ++i) {
    Matrix m = Matrix::Zero(op.n(), op.n());
    m(i, i) = 1.0;
    double dev = std::abs(op.apply_forward(m).squaredNorm() - 1.0);
    if (dev >= est.delta_lower) {
      est.delta_lower = dev;
      est.worst_witness = m;
    }
  }
  for (int t = 0; t < trials; ++t) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(t));
    Matrix u = gaussian_matrix(op.n(), g, rng);
    Matrix v = gaussian_matrix(op.n(), g, rng);
    Matrix m = u * v.transpose();
    m /= m.norm();
    double dev = std::abs(op.apply_forward(m).squaredNorm() - 1.0);
    if (dev >= est.delta_lower) {
      est.delta_lower = dev;
      est.worst_witness = m;
    }
  }
  return est;
}

}  // namespace senselab
