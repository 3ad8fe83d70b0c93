#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>

#include "senselab/operator.hpp"

namespace senselab {
namespace bounds {

// Small-sigma_r branch of the global/strict-saddle guarantee: the positive
// root d of (1-delta) d^2 = (eps + kappa/2) sqrt(r) d + (4 eps + 2 kappa) sqrt(r) ||M*||_F.
inline double global_branch1(double delta, double eps, double kappa, int r, double m_star_fro) {
  if (delta < 0 || delta >= 1) throw ParameterError("require delta in [0, 1)");
  if (eps < 0 || kappa < 0) throw ParameterError("require eps, kappa >= 0");
  double a = 1.0 - delta;
  double b = (eps + 0.5 * kappa) * std::sqrt(static_cast<double>(r));
  double c = (4.0 * eps + 2.0 * kappa) * std::sqrt(static_cast<double>(r)) * m_star_fro;
  if (b == 0.0 && c == 0.0) return 0.0;
  return (b + std::sqrt(b * b + 4.0 * a * c)) / (2.0 * a);
}

// The literal closed form with the minus sign under the radical; defined only
// when its radicand is nonnegative. Reported alongside the root-based value.
inline std::optional<double> global_branch1_printed(double delta, double eps, double kappa, int r,
                                                    double m_star_fro) {
  double level = eps + 0.5 * kappa;
  double sr = std::sqrt(static_cast<double>(r));
  double radicand = level * level * r - 16.0 * (1.0 - delta) * level * sr * m_star_fro;
  if (radicand < 0) return std::nullopt;
  return (level * sr + std::sqrt(radicand)) / (2.0 * (1.0 - delta));
}

inline double branch2_rip_threshold(int r, int r_star) {
  return 1.0 / (1.0 + std::sqrt(static_cast<double>(r_star) / r));
}

// Large-sigma_r branch: solve the quadratic inequality in d^{1/2},
//   L s^2 <= c1 s + c0,  d = s^2,
// with L = (1-delta)/(1+delta) - sqrt(r*/r)/(2+sqrt(r*/r)).
inline double global_branch2(double delta, double eps, double kappa, int r, int r_star,
                             double m_star_fro) {
  if (delta < 0 || delta >= 1) throw ParameterError("require delta in [0, 1)");
  if (eps < 0 || kappa < 0) throw ParameterError("require eps, kappa >= 0");
  if (r_star < 1 || r < r_star) throw ParameterError("require r >= r_star >= 1");
  double ratio = std::sqrt(static_cast<double>(r_star) / r);
  double lcoef = (1.0 - delta) / (1.0 + delta) - ratio / (2.0 + ratio);
  if (lcoef <= 0)
    throw HypothesisError("RIP constant must satisfy delta < 1/(1+sqrt(r*/r)) = " +
                          std::to_string(branch2_rip_threshold(r, r_star)));
  double level = 2.0 * eps + kappa;
  double c1 = 2.0 * std::sqrt(level * (1.0 + delta));
  double c0 = level * std::sqrt(static_cast<double>(r_star)) + c1 * std::sqrt(m_star_fro);
  if (c1 == 0.0 && c0 == 0.0) return 0.0;
  double s = (c1 + std::sqrt(c1 * c1 + 4.0 * lcoef * c0)) / (2.0 * lcoef);
  return s * s;
}

// Rank-1 specialization: 3 (1 + sqrt(2)) eps (1 + delta) / (1 - 2 delta).
inline double rank1_bound(double delta, double eps) {
  if (delta < 0) throw ParameterError("require delta >= 0");
  if (delta >= 0.5) throw HypothesisError("rank-1 bound requires delta < 1/2");
  if (eps < 0) throw ParameterError("require eps >= 0");
  return 3.0 * (1.0 + std::sqrt(2.0)) * eps * (1.0 + delta) / (1.0 - 2.0 * delta);
}

struct LocalBound {
  double outer_radius = 0.0;  // tau * lambda_{r*}(M*)
  double inner1 = 0.0;        // small-sigma_r inner radius
  double inner2 = 0.0;        // large-sigma_r inner radius
  double c_tau = 0.0;         // C(tau, M*)
};

inline double c_tau_mstar(double tau, double lam1, double lam_rstar) {
  return std::sqrt(2.0 * (lam1 + tau * lam_rstar));
}

inline LocalBound local_bound(double delta, double eps, double tau, double lam1, double lam_rstar,
                              int r, double m_star_fro) {
  if (tau <= 0 || tau >= 1) throw ParameterError("require tau in (0, 1)");
  if (lam1 < lam_rstar || lam_rstar <= 0) throw ParameterError("require lam1 >= lam_rstar > 0");
  if (delta >= std::sqrt(1.0 - tau))
    throw HypothesisError("local bound requires delta < sqrt(1 - tau)");
  LocalBound out;
  out.outer_radius = tau * lam_rstar;
  out.inner1 = global_branch1(delta, eps, 0.0, r, m_star_fro);
  out.c_tau = c_tau_mstar(tau, lam1, lam_rstar);
  out.inner2 =
      std::sqrt(eps) * std::pow(1.0 + delta, 1.5) * out.c_tau / (std::sqrt(1.0 - tau) - delta);
  return out;
}

// Sub-Gaussian tail lower bound on P(||A^T w|| <= eps):
// max(0, 1 - 2 exp(-w0^2 / (16 m sigma^2))) with w0 = eps / ||A||_2.
inline double noise_event_prob(double sigma, int m, double a_norm, double eps) {
  if (sigma <= 0) throw ParameterError("require sigma > 0");
  if (m < 1 || a_norm <= 0 || eps < 0) throw ParameterError("invalid noise-event inputs");
  double w0 = eps / a_norm;
  double p = 1.0 - 2.0 * std::exp(-w0 * w0 / (16.0 * m * sigma * sigma));
  return std::max(0.0, std::min(1.0, p));
}

// Inverse of noise_event_prob in eps for a target probability p in (0, 1).
inline double invert_eps(double sigma, int m, double a_norm, double p) {
  if (p <= 0 || p >= 1) throw ParameterError("require p in (0, 1)");
  if (sigma <= 0) throw ParameterError("require sigma > 0");
  return a_norm * std::sqrt(16.0 * m * sigma * sigma * std::log(2.0 / (1.0 - p)));
}

struct McProbability {
  double estimate = 0.0;
  double halfwidth = 0.0;  // 1.96 sqrt(p(1-p)/trials)
  int trials = 0;
};

// Empirical P(||A^T w|| <= eps) under the given noise model.
inline McProbability noise_event_prob_mc(const SensingOperator& op, const NoiseModel& model,
                                         double eps, int trials, std::uint64_t seed) {
  if (trials < 1) throw ParameterError("trials must be >= 1");
  int hits = 0;
  for (int t = 0; t < trials; ++t) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(t));
    Vector w = model.sample(op.m(), rng);
    if ((op.matrix_form().transpose() * w).norm() <= eps) ++hits;
  }
  McProbability out;
  out.trials = trials;
  out.estimate = static_cast<double>(hits) / trials;
  out.halfwidth = 1.96 * std::sqrt(out.estimate * (1.0 - out.estimate) / trials);
  return out;
}

struct PriorBound {
  double bound = 0.0;
  double probability = 0.0;  // 1 - 10/n^2
  std::string hypothesis = "delta < 1/10, r = r*";
};

// Earlier Gaussian-noise guarantee: 20 sqrt(log(n)/m) sigma_w.
inline PriorBound prior_bound_thm1(int n, int m, double sigma_w) {
  if (n < 1 || m < 1) throw ParameterError("require n, m >= 1");
  PriorBound out;
  out.bound = 20.0 * std::sqrt(std::log(static_cast<double>(n)) / m) * sigma_w;
  out.probability = 1.0 - 10.0 / (static_cast<double>(n) * n);
  return out;
}

struct BoundInputs {
  double delta = 0.0;
  double eps = 0.0;
  double kappa = 0.0;
  int r = 1;
  int r_star = 1;
  double m_star_fro = 0.0;
  double lam1 = 0.0;
  double lam_rstar = 0.0;
  double tau = 0.2;
  double sigma_r_x = -1.0;  // < 0 means unknown (effective = max of branches)
};

struct BoundReport {
  double branch_threshold = 0.0;  // sqrt((eps + kappa/2)/(1 + delta))
  double branch1 = 0.0;
  double branch2 = 0.0;
  double effective = 0.0;
  std::string effective_branch;  // "branch1" | "branch2" | "max"
  double event_prob_lower = -1.0;
};

inline BoundReport evaluate_global(const BoundInputs& in) {
  BoundReport rep;
  rep.branch_threshold = std::sqrt((in.eps + 0.5 * in.kappa) / (1.0 + in.delta));
  rep.branch1 = global_branch1(in.delta, in.eps, in.kappa, in.r, in.m_star_fro);
  rep.branch2 = global_branch2(in.delta, in.eps, in.kappa, in.r, in.r_star, in.m_star_fro);
  if (in.sigma_r_x >= 0) {
    bool small = in.sigma_r_x <= rep.branch_threshold;
    rep.effective = small ? rep.branch1 : rep.branch2;
    rep.effective_branch = small ? "branch1" : "branch2";
  } else {
    rep.effective = std::max(rep.branch1, rep.branch2);
    rep.effective_branch = "max";
  }
  return rep;
}

inline BoundReport evaluate_local(const BoundInputs& in) {
  BoundReport rep;
  rep.branch_threshold = std::sqrt(in.eps / (1.0 + in.delta));
  LocalBound lb =
      local_bound(in.delta, in.eps, in.tau, in.lam1, in.lam_rstar, in.r, in.m_star_fro);
  rep.branch1 = lb.inner1;
  rep.branch2 = lb.inner2;
  if (in.sigma_r_x >= 0) {
    bool small = in.sigma_r_x <= rep.branch_threshold;
    rep.effective = small ? rep.branch1 : rep.branch2;
    rep.effective_branch = small ? "branch1" : "branch2";
  } else {
    rep.effective = std::max(rep.branch1, rep.branch2);
    rep.effective_branch = "max";
  }
  return rep;
}

enum class TheoremKind { Global, Local };

struct RequiredDelta {
  double delta = 0.0;
  bool feasible = false;  // false when even delta = 0 exceeds the target
};

// Largest delta inside the hypothesis region whose effective bound stays below
// the target distance; bisection on the (monotone) delta -> bound map.
inline RequiredDelta required_delta(double target_distance, double eps, BoundInputs inputs,
                                    TheoremKind kind, double tol = 1e-9) {
  if (target_distance <= 0) throw ParameterError("target distance must be positive");
  inputs.eps = eps;
  double hi_limit = kind == TheoremKind::Global
                        ? branch2_rip_threshold(inputs.r, inputs.r_star)
                        : std::sqrt(1.0 - inputs.tau);
  auto bound_at = [&](double delta) {
    BoundInputs in = inputs;
    in.delta = delta;
    return kind == TheoremKind::Global ? evaluate_global(in).effective
                                       : evaluate_local(in).effective;
  };
  RequiredDelta out;
  double b0 = bound_at(0.0);
  if (b0 > target_distance) return out;  // infeasible even at delta = 0
  out.feasible = true;
  double lo = 0.0;
  double hi = hi_limit * (1.0 - 1e-9);
  if (bound_at(hi) <= target_distance) {
    out.delta = hi;
    return out;
  }
  while (hi - lo > tol) {
    double mid = 0.5 * (lo + hi);
    double bm = bound_at(mid);
    if (bm < b0 - 1e-12 * (1.0 + b0))
      throw ValidationError("bound is not monotone in delta on the bracket");
    if (bm <= target_distance)
      lo = mid;
    else
      hi = mid;
  }
  out.delta = lo;
  return out;
}

}  // namespace bounds
}  // namespace senselab
