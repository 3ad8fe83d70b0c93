#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "senselab/objective.hpp"

namespace senselab {

// Step-size policy. Auto is the smoothness-surrogate rule (monotone descent at
// desk scale). Polyak uses f(X_k)/||grad f(X_k)||^2, which targets the known
// zero optimum of a noiseless instance; in the overparametrized case the
// surrogate step leaves the rank-excess directions decaying only like 1/k,
// while the Polyak step keeps the decay geometric.
enum class StepPolicy { Auto, Polyak };

struct SolverConfig {
  double step_size = 0.0;       // > 0 overrides the policy with a fixed step
  StepPolicy step_policy = StepPolicy::Auto;
  int max_iters = 50000;
  double grad_tol = 1e-6;       // target kappa for soc residuals
  double perturb_radius = -1.0; // < 0 means default (= grad_tol)
  int perturb_interval = 100;   // iterations between allowed perturbations
  int eig_check_interval = 25;
  std::uint64_t seed = 0;
  double delta_upper = -1.0;    // < 0 means compute from the operator
};

struct IterRecord {
  int iter = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double err_frob = 0.0;  // ||X X^T - M*||_F
};

struct IterTrace {
  std::vector<IterRecord> records;
  FactorPoint final_point;
  std::string termination;  // "converged" | "max_iters"
};

struct DivergenceError : std::runtime_error {
  IterTrace trace;
  explicit DivergenceError(IterTrace t)
      : std::runtime_error("solver diverged: loss grew 10x from start"), trace(std::move(t)) {}
};

inline void write_trace_csv(const IterTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << "iter,loss,grad_norm,err_frob\n";
  out.precision(17);
  for (const auto& rec : trace.records)
    out << rec.iter << "," << rec.loss << "," << rec.grad_norm << "," << rec.err_frob << "\n";
}

namespace detail {

// Smoothness surrogate (1 + delta)(3||X||_2^2 + ||mat_s(A^T(b-w))||_F); the
// auto step is 0.25 / L and is refreshed whenever the iterates grow.
inline double smoothness_surrogate(const ProblemInstance& inst, double x_norm, double delta_upper) {
  Matrix back = mat_s(Vector(inst.op.matrix_form().transpose() * inst.measurements));
  return (1.0 + delta_upper) * (3.0 * x_norm * x_norm + back.norm());
}

struct SolverState {
  double delta_upper;
  double step;
  double norm_ref;
  bool auto_step;
  bool polyak;
};

inline SolverState init_state(const ProblemInstance& inst, const Matrix& x0,
                              const SolverConfig& cfg) {
  SolverState st;
  st.delta_upper = cfg.delta_upper >= 0 ? cfg.delta_upper : rip_delta_upper(inst.op);
  st.norm_ref = spectral_norm(x0);
  st.polyak = cfg.step_size <= 0 && cfg.step_policy == StepPolicy::Polyak;
  st.auto_step = cfg.step_size <= 0 && !st.polyak;
  st.step = cfg.step_size > 0
                ? cfg.step_size
                : 0.25 / smoothness_surrogate(inst, std::max(st.norm_ref, 1.0), st.delta_upper);
  return st;
}

inline void maybe_refresh_step(const ProblemInstance& inst, SolverState& st, double x_norm) {
  if (st.auto_step && x_norm > 1.5 * st.norm_ref) {
    st.norm_ref = x_norm;
    st.step = 0.25 / smoothness_surrogate(inst, std::max(x_norm, 1.0), st.delta_upper);
  }
}

// Step for the current iterate; loss and squared gradient norm are the values
// already computed this iteration.
inline double current_step(const SolverState& st, double loss, double grad_sq) {
  if (st.polyak && grad_sq > 0) return loss / grad_sq;
  return st.step;
}

}  // namespace detail

inline IterTrace gradient_descent(const ProblemInstance& inst, const Matrix& x0,
                                  const SolverConfig& cfg) {
  check_factor_shape(inst, x0);
  detail::SolverState st = detail::init_state(inst, x0, cfg);

  Matrix x = x0;
  IterTrace trace;
  double loss0 = 0.0;
  for (int k = 0; k <= cfg.max_iters; ++k) {
    Residual res = residual(inst, x);
    double f = 0.5 * res.fit.squaredNorm();
    Matrix grad = 2.0 * mat_s(Vector(inst.op.matrix_form().transpose() * res.fit)) * x;
    double gn = grad.norm();
    trace.records.push_back({k, f, gn, res.e.norm()});
    if (k == 0) loss0 = f;
    if (f > 10.0 * std::max(loss0, 1e-300)) {
      trace.final_point = make_factor_point(x);
      trace.termination = "diverged";
      throw DivergenceError(std::move(trace));
    }
    double x_norm = spectral_norm(x);
    double kappa_grad = gn / std::max(x_norm, x_norm > 0 ? x_norm : 1.0);
    if (kappa_grad <= cfg.grad_tol) {
      trace.termination = "converged";
      break;
    }
    if (k == cfg.max_iters) {
      trace.termination = "max_iters";
      break;
    }
    detail::maybe_refresh_step(inst, st, x_norm);
    x -= detail::current_step(st, f, gn * gn) * grad;
  }
  trace.final_point = make_factor_point(x);
  return trace;
}

inline IterTrace perturbed_gd(const ProblemInstance& inst, const Matrix& x0,
                              const SolverConfig& cfg) {
  check_factor_shape(inst, x0);
  detail::SolverState st = detail::init_state(inst, x0, cfg);
  double radius = cfg.perturb_radius >= 0 ? cfg.perturb_radius : cfg.grad_tol;
  double eig_tol = std::max(1e-12, 0.01 * cfg.grad_tol);
  Rng rng = Rng::derive(cfg.seed, 0x9e7);

  Matrix x = x0;
  IterTrace trace;
  double loss0 = 0.0;
  int last_perturb = -cfg.perturb_interval;
  int last_eig_check = -cfg.eig_check_interval;
  for (int k = 0; k <= cfg.max_iters; ++k) {
    Residual res = residual(inst, x);
    double f = 0.5 * res.fit.squaredNorm();
    Matrix grad = 2.0 * mat_s(Vector(inst.op.matrix_form().transpose() * res.fit)) * x;
    double gn = grad.norm();
    trace.records.push_back({k, f, gn, res.e.norm()});
    if (k == 0) loss0 = f;
    if (f > 10.0 * std::max(loss0, 1e-300)) {
      trace.final_point = make_factor_point(x);
      trace.termination = "diverged";
      throw DivergenceError(std::move(trace));
    }
    double x_norm = spectral_norm(x);
    double kappa_grad = gn / std::max(x_norm, x_norm > 0 ? x_norm : 1.0);

    if (kappa_grad <= cfg.grad_tol && k - last_perturb >= cfg.perturb_interval &&
        k - last_eig_check >= cfg.eig_check_interval) {
      last_eig_check = k;
      double lam_min = min_hessian_eig(inst, x, eig_tol).first;
      double kappa_eig = std::max(0.0, -lam_min);
      if (kappa_eig <= cfg.grad_tol) {
        trace.termination = "converged";
        break;
      }
      // escape direction: uniform in the Frobenius ball of the given radius
      Matrix dir = gaussian_matrix(static_cast<int>(x.rows()), static_cast<int>(x.cols()), rng);
      dir /= dir.norm();
      double u = std::pow(rng.uniform01(), 1.0 / static_cast<double>(x.size()));
      x += (radius * u) * dir;
      last_perturb = k;
      continue;
    }
    if (k == cfg.max_iters) {
      trace.termination = "max_iters";
      break;
    }
    detail::maybe_refresh_step(inst, st, x_norm);
    x -= detail::current_step(st, f, gn * gn) * grad;
  }
  trace.final_point = make_factor_point(x);
  return trace;
}

// kappa~ = min{lambda_0 - eps, D eps}: the stationarity tolerance that makes a
// perturbed-GD output an (eps, kappa)-approximate second-order point.
inline double pgd_tolerance(double d_radius, double lambda0, double eps) {
  if (d_radius <= 0 || d_radius > 1) throw ParameterError("require D in (0, 1]");
  if (lambda0 <= 0) throw ParameterError("require lambda0 > 0");
  if (eps <= 0 || eps >= lambda0) throw ParameterError("require eps in (0, lambda0)");
  return std::min(lambda0 - eps, d_radius * eps);
}

struct SaddleProbe {
  double lambda0 = 0.0;  // -max over samples of lambda_min(hess f_0)
  bool valid = false;    // false when some sample had lambda_min >= 0
  double worst_lambda_min = 0.0;
};

// Heuristic estimate of the largest lambda_0 valid on {||X||_2 < D} by
// sampling the noiseless Hessian's smallest eigenvalue.
inline SaddleProbe saddle_probe(const ProblemInstance& inst, double d_radius, int samples,
                                std::uint64_t seed) {
  if (samples < 1) throw ParameterError("samples must be >= 1");
  double worst = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < samples; ++s) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(s));
    Matrix dir = gaussian_matrix(inst.op.n(), inst.r, rng);
    double sn = spectral_norm(dir);
    Matrix x = sn > 0 ? Matrix((d_radius * rng.uniform01() / sn) * dir)
                      : Matrix::Zero(inst.op.n(), inst.r);
    HessianOp h = hessian_op_noiseless(inst, x);
    EigResult eig = min_eig_lanczos([&h](const Vector& v) { return h.apply_vec(v); }, h.dim(),
                                    1e-9, seed + 31 * s);
    worst = std::max(worst, eig.value);
  }
  SaddleProbe probe;
  probe.worst_lambda_min = worst;
  probe.lambda0 = -worst;
  probe.valid = worst < 0;
  return probe;
}

}  // namespace senselab
