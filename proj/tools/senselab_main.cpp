// Command-line front end: instance generation, solving, bound contour grids,
// end-to-end verification, and dual certification.
//
// Exit codes: 0 success, 2 usage/validation, 3 divergence, 4 verification failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "senselab/senselab.hpp"

namespace {

using namespace senselab;
using nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Vector default_spectrum(int r_star) {
  Vector s = Vector::Ones(r_star);
  s(0) = 1.5;
  return s;
}

Matrix default_init(const ProblemInstance& inst, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0xA11);
  Matrix x0 = gaussian_matrix(inst.op.n(), inst.r, rng);
  double target = std::sqrt(inst.truth.m_star.norm());
  if (x0.norm() > 0) x0 *= target / x0.norm();
  return x0;
}

json solution_to_json(const ProblemInstance& inst, const IterTrace& trace) {
  const Matrix& x = trace.final_point.x;
  SocResiduals soc = soc_residuals(inst, x);
  Residual res = residual(inst, x);
  json j;
  j["n"] = inst.op.n();
  j["r"] = inst.r;
  std::vector<double> x_rm;
  x_rm.reserve(x.size());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index c = 0; c < x.cols(); ++c) x_rm.push_back(x(i, c));
  j["x"] = x_rm;
  j["kappa_grad"] = soc.kappa_grad;
  j["kappa_eig"] = soc.kappa_eig;
  j["realized_eps"] = certify::realized_eps(inst);
  j["err_frob"] = res.e.norm();
  j["loss"] = 0.5 * res.fit.squaredNorm();
  j["sigma_r"] = trace.final_point.sigma_r;
  j["x_norm"] = trace.final_point.op_norm;
  j["iterations"] = trace.records.empty() ? 0 : trace.records.back().iter;
  j["termination"] = trace.termination;
  return j;
}

Matrix solution_from_json(const json& j) {
  int n = j.at("n").get<int>();
  int r = j.at("r").get<int>();
  auto vals = j.at("x").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(vals.size()) != static_cast<Eigen::Index>(n) * r)
    throw ValidationError("solution field 'x' has wrong length");
  Matrix x(n, r);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < r; ++c) x(i, c) = vals[static_cast<std::size_t>(i) * r + c];
  return x;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << content;
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  int n = 20, m = 480, r = 3, r_star = 3;
  double sigma = 0.0;
  std::string noise = "gaussian";
  std::uint64_t seed = 0;
  std::string out = "instance.json";
  std::vector<double> spectrum;
  int rip_trials = 200;
};

int run_gen(const GenArgs& a) {
  NoiseModel model;
  model.kind = a.sigma == 0.0 ? NoiseModel::Kind::None : NoiseModel::parse_kind(a.noise);
  model.sigma = a.sigma;
  Vector spectrum;
  if (a.spectrum.empty())
    spectrum = default_spectrum(a.r_star);
  else {
    spectrum = Eigen::Map<const Vector>(a.spectrum.data(), a.spectrum.size());
  }
  ProblemInstance inst = generate_instance(a.n, a.m, a.r, a.r_star, spectrum, model, a.seed);
  save_instance(inst, a.out);
  RipEstimate rip = estimate_rip(inst.op, std::min(a.r + a.r_star, a.n), a.rip_trials, a.seed);
  std::cout << "instance written to " << a.out << "\n"
            << "rip(g=" << rip.g << "): delta in [" << fmt_double(rip.delta_lower) << ", "
            << fmt_double(rip.delta_upper) << "] (" << rip.trials << " trials)\n";
  return 0;
}

// ---------------------------------------------------------------- solve

struct SolveArgs {
  std::string instance;
  std::string algo = "pgd";
  std::string step_policy = "auto";
  SolverConfig cfg;
  std::string trace_out = "trace.csv";
  std::string solution_out = "solution.json";
};

int run_solve(const SolveArgs& a_in) {
  SolveArgs a = a_in;
  if (a.step_policy == "polyak") a.cfg.step_policy = StepPolicy::Polyak;
  ProblemInstance inst = load_instance(a.instance);
  Matrix x0 = default_init(inst, a.cfg.seed);
  IterTrace trace;
  try {
    trace = a.algo == "gd" ? gradient_descent(inst, x0, a.cfg) : perturbed_gd(inst, x0, a.cfg);
  } catch (const DivergenceError& e) {
    write_trace_csv(e.trace, a.trace_out);
    std::cerr << e.what() << " (partial trace written to " << a.trace_out << ")\n";
    return 3;
  }
  write_trace_csv(trace, a.trace_out);
  write_text(a.solution_out, solution_to_json(inst, trace).dump(2) + "\n");
  const auto& last = trace.records.back();
  std::cout << "terminated: " << trace.termination << " after " << last.iter
            << " iterations, err_frob=" << fmt_double(last.err_frob) << "\n";
  return 0;
}

// ---------------------------------------------------------------- contour

struct ContourArgs {
  std::string figure = "global";
  std::string out = "contour.csv";
  std::string config;
  // §4 defaults
  int n = 50, m = 10, r = 10, r_star = 10;
  double a_norm = 2.0, sigma = 0.05, m_star_fro = 3.3, lam1 = 1.5, lam_rstar = 1.0;
  double tau = 0.2, kappa = 0.0;
  double x_min = 0.0, x_max = -1.0;  // x_max < 0: mode-dependent default
  int x_steps = 40;
  double p_min = 0.05, p_max = 0.95;
  int p_steps = 20;
};

void apply_config_file(ContourArgs& a) {
  if (a.config.empty()) return;
  std::ifstream in(a.config);
  if (!in) throw ParseError("cannot open config '" + a.config + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed config: ") + e.what());
  }
  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("n", a.n);
  get("m", a.m);
  get("r", a.r);
  get("r_star", a.r_star);
  get("a_norm", a.a_norm);
  get("sigma", a.sigma);
  get("m_star_fro", a.m_star_fro);
  get("lam1", a.lam1);
  get("lam_rstar", a.lam_rstar);
  get("tau", a.tau);
  get("kappa", a.kappa);
  get("x_min", a.x_min);
  get("x_max", a.x_max);
  get("x_steps", a.x_steps);
  get("p_min", a.p_min);
  get("p_max", a.p_max);
  get("p_steps", a.p_steps);
}

int run_contour(const ContourArgs& args_in) {
  ContourArgs a = args_in;
  apply_config_file(a);
  if (a.x_steps < 2 || a.p_steps < 2) throw ParameterError("grid steps must be >= 2");
  if (a.p_min <= 0 || a.p_max >= 1 || a.p_min >= a.p_max)
    throw ParameterError("probability range must be inside (0, 1)");

  bool delta_mode = a.figure == "delta";
  double x_max = a.x_max;
  if (x_max < 0) {
    if (a.figure == "global")
      x_max = bounds::branch2_rip_threshold(a.r, a.r_star) * (1.0 - 1e-9);
    else if (a.figure == "local")
      x_max = std::sqrt(1.0 - a.tau) * (1.0 - 1e-9);
    else
      x_max = 10.0;
  }
  double x_lo = delta_mode && a.x_min <= 0 ? 1e-3 : a.x_min;

  bounds::BoundInputs base;
  base.kappa = a.kappa;
  base.r = a.r;
  base.r_star = a.r_star;
  base.m_star_fro = a.m_star_fro;
  base.lam1 = a.lam1;
  base.lam_rstar = a.lam_rstar;
  base.tau = a.tau;

  int cells = a.x_steps * a.p_steps;
  std::vector<std::string> rows(cells);
  parallel_for(cells, [&](int idx) {
    int xi = idx / a.p_steps;
    int pi = idx % a.p_steps;
    double x = x_lo + (x_max - x_lo) * xi / (a.x_steps - 1);
    double p = a.p_min + (a.p_max - a.p_min) * pi / (a.p_steps - 1);
    double eps = bounds::invert_eps(a.sigma, a.m, a.a_norm, p);
    std::ostringstream row;
    row << fmt_double(x) << "," << fmt_double(p) << "," << fmt_double(eps) << ",";
    try {
      if (delta_mode) {
        bounds::RequiredDelta rd =
            bounds::required_delta(x, eps, base, bounds::TheoremKind::Global);
        if (rd.feasible)
          row << fmt_double(rd.delta) << ",";
        else
          row << ",infeasible_at_delta_0";
      } else {
        bounds::BoundInputs in = base;
        in.delta = x;
        in.eps = eps;
        bounds::BoundReport rep =
            a.figure == "global" ? bounds::evaluate_global(in) : bounds::evaluate_local(in);
        row << fmt_double(rep.branch1) << "," << fmt_double(rep.branch2) << ","
            << fmt_double(rep.effective) << ",";
      }
    } catch (const HypothesisError& e) {
      if (delta_mode)
        row << "," << e.what();
      else
        row << ",,," << e.what();
    }
    rows[idx] = row.str();
  });

  std::ostringstream out;
  out << (delta_mode ? "x,prob,eps,delta_max,reason" : "x,prob,eps,branch1,branch2,effective,reason")
      << "\n";
  for (const auto& r : rows) out << r << "\n";
  write_text(a.out, out.str());
  std::cout << "contour grid (" << cells << " cells) written to " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- verify

struct VerifyArgs {
  int trials = 20;
  int n = 10, m = 1600, r = 6, r_star = 2;
  double sigma = 0.01;
  double kappa = 1e-6;
  int max_iters = 50000;
  std::uint64_t seed = 1;
  std::string out = "verify.json";
};

int run_verify(const VerifyArgs& a) {
  NoiseModel model{a.sigma == 0.0 ? NoiseModel::Kind::None : NoiseModel::Kind::Gaussian, a.sigma};
  std::vector<json> trial_reports(a.trials);
  std::vector<int> failures;
  std::mutex mu;

  parallel_for(a.trials, [&](int t) {
    std::uint64_t trial_seed = Rng::mix(a.seed) + static_cast<std::uint64_t>(t);
    ProblemInstance inst =
        generate_instance(a.n, a.m, a.r, a.r_star, default_spectrum(a.r_star), model, trial_seed);
    double delta_upper = rip_delta_upper(inst.op);

    SolverConfig cfg;
    cfg.grad_tol = a.kappa;
    cfg.max_iters = a.max_iters;
    cfg.seed = trial_seed;
    cfg.delta_upper = delta_upper;
    // noiseless trials have a known zero optimum; the Polyak step keeps the
    // overparametrized flat directions decaying geometrically
    if (a.sigma == 0.0) cfg.step_policy = StepPolicy::Polyak;
    IterTrace trace = perturbed_gd(inst, default_init(inst, trial_seed), cfg);

    const Matrix& x = trace.final_point.x;
    double eps = certify::realized_eps(inst);
    double err = residual(inst, x).e.norm();

    bounds::BoundInputs in;
    in.delta = delta_upper;
    in.eps = eps;
    in.kappa = a.kappa;
    in.r = a.r;
    in.r_star = a.r_star;
    in.m_star_fro = inst.truth.m_star.norm();
    in.sigma_r_x = trace.final_point.sigma_r;
    json jt;
    bool contained = false;
    std::string reason;
    try {
      bounds::BoundReport rep = bounds::evaluate_global(in);
      // tiny absolute slack so noiseless runs (bound exactly 0, err at solver
      // tolerance) count as contained
      contained = err <= rep.effective + 1e-6;
      jt["bound_effective"] = rep.effective;
      jt["bound_branch"] = rep.effective_branch;
    } catch (const HypothesisError& e) {
      reason = e.what();
    }

    double eta_lower = (1.0 - delta_upper) / (1.0 + delta_upper);
    double dual_objective = std::numeric_limits<double>::infinity();
    bool sandwich = true;
    try {
      certify::DualCertificate cert =
          certify::build_global_certificate(x, inst.truth.m_star, a.r_star, eps, a.kappa);
      dual_objective = cert.objective;
      sandwich = eta_lower <= cert.objective + 1e-6;
    } catch (const ParameterError&) {
      // X X^T numerically equals M*: nothing to certify, the sandwich is vacuous
    }

    jt["trial"] = t;
    jt["seed"] = trial_seed;
    jt["delta_upper"] = delta_upper;
    jt["realized_eps"] = eps;
    jt["err_frob"] = err;
    jt["termination"] = trace.termination;
    jt["contained"] = contained;
    jt["sandwich"] = sandwich;
    jt["dual_objective"] = dual_objective;
    jt["eta_lower"] = eta_lower;
    if (!reason.empty()) jt["hypothesis_violation"] = reason;
    if (delta_upper < 0.1 && a.r == a.r_star)
      jt["prior_bound"] = bounds::prior_bound_thm1(a.n, a.m, a.sigma).bound;

    std::scoped_lock lock(mu);
    trial_reports[t] = std::move(jt);
    if (!contained || !sandwich) {
      failures.push_back(t);
      save_instance(inst, a.out + ".failed_trial_" + std::to_string(t) + ".instance.json");
      write_text(a.out + ".failed_trial_" + std::to_string(t) + ".solution.json",
                 solution_to_json(inst, trace).dump(2) + "\n");
    }
  });

  json report;
  report["trials"] = trial_reports;
  report["pass_count"] = a.trials - static_cast<int>(failures.size());
  report["fail_count"] = static_cast<int>(failures.size());
  write_text(a.out, report.dump(2) + "\n");
  std::cout << (a.trials - failures.size()) << "/" << a.trials << " trials passed\n";
  return failures.empty() ? 0 : 4;
}

// ---------------------------------------------------------------- certify

struct CertifyArgs {
  std::string instance;
  std::string solution;
  std::string out = "certificate.json";
  double kappa = -1.0;  // < 0: use solution's soc residual
  double eps = -1.0;    // < 0: realized ||A^T w||
  double tau = 0.2;
};

json necessary_to_json(const certify::NecessaryCheck& chk) {
  return json{{"foc_lhs", chk.foc_lhs},       {"foc_rhs", chk.foc_rhs},
              {"foc_margin", chk.foc_margin}, {"foc_pass", chk.foc_pass},
              {"soc_min_eig", chk.soc_min_eig}, {"soc_rhs", chk.soc_rhs},
              {"soc_margin", chk.soc_margin}, {"soc_pass", chk.soc_pass}};
}

json certificate_to_json(const std::string& kind, const certify::DualCertificate& cert,
                         const certify::AlignmentStats& st, double delta, int r, int r_star) {
  certify::EtaBounds eb = certify::eta_bounds(st, cert, delta, r, r_star);
  json residuals = json::object();
  for (const auto& [name, value] : cert.residuals) residuals[name] = value;
  return json{{"kind", kind},
              {"objective", cert.objective},
              {"eta_lower", eb.eta_lower},
              {"eta0", eb.eta0},
              {"ratio_threshold", eb.ratio_threshold},
              {"residuals", residuals},
              {"alpha", st.alpha},
              {"beta", st.beta},
              {"theta", st.theta},
              {"gamma", cert.gamma},
              {"perp_flag", st.perp_flag}};
}

int run_certify(const CertifyArgs& a) {
  ProblemInstance inst = load_instance(a.instance);
  std::ifstream in(a.solution);
  if (!in) throw ParseError("cannot open '" + a.solution + "'");
  json sol = json::parse(in);
  Matrix x = solution_from_json(sol);
  if (x.rows() != inst.op.n() || x.cols() != inst.r)
    throw DimensionError("solution dimensions do not match the instance");

  double eps = a.eps >= 0 ? a.eps : certify::realized_eps(inst);
  double kappa = a.kappa;
  if (kappa < 0)
    kappa = std::max(sol.value("kappa_grad", 0.0), sol.value("kappa_eig", 0.0));

  certify::NecessaryCheck chk = certify::check_necessary(inst, x, kappa, eps);
  certify::AlignmentStats st = certify::align_decompose(x, inst.truth.m_star, inst.truth.r_star);
  double delta_upper = rip_delta_upper(inst.op);

  json report;
  report["necessary"] = necessary_to_json(chk);
  report["realized_eps"] = eps;
  report["kappa"] = kappa;
  report["delta_upper"] = delta_upper;

  certify::DualCertificate cert =
      certify::build_global_certificate(x, inst.truth.m_star, inst.truth.r_star, eps, kappa);
  report["global"] =
      certificate_to_json("global", cert, st, delta_upper, inst.r, inst.truth.r_star);

  double err = st.e.norm();
  double outer = a.tau * inst.truth.spectrum(inst.truth.r_star - 1);
  if (err <= outer && st.x_norm > 0 && eps > 0) {
    certify::DualCertificate local =
        certify::build_local_certificate(x, inst.truth.m_star, inst.truth.r_star, eps);
    report["local"] =
        certificate_to_json("local", local, st, delta_upper, inst.r, inst.truth.r_star);
  } else {
    report["local"] = nullptr;
  }
  write_text(a.out, report.dump(2) + "\n");
  std::cout << "certificate report written to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"noisy overparametrized matrix sensing: landscape bounds and certificates"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* cmd_gen = app.add_subcommand("gen", "generate a seeded problem instance");
  cmd_gen->add_option("--n", gen.n);
  cmd_gen->add_option("--m", gen.m);
  cmd_gen->add_option("--r", gen.r);
  cmd_gen->add_option("--r-star", gen.r_star);
  cmd_gen->add_option("--sigma", gen.sigma);
  cmd_gen->add_option("--noise", gen.noise)->check(CLI::IsMember({"gaussian", "subg", "none"}));
  cmd_gen->add_option("--seed", gen.seed);
  cmd_gen->add_option("--out", gen.out);
  cmd_gen->add_option("--spectrum", gen.spectrum);
  cmd_gen->add_option("--rip-trials", gen.rip_trials);

  SolveArgs solve;
  auto* cmd_solve = app.add_subcommand("solve", "run (perturbed) gradient descent");
  cmd_solve->add_option("--instance", solve.instance)->required();
  cmd_solve->add_option("--algo", solve.algo)->check(CLI::IsMember({"gd", "pgd"}));
  cmd_solve->add_option("--step", solve.cfg.step_size);
  cmd_solve->add_option("--step-policy", solve.step_policy)
      ->check(CLI::IsMember({"auto", "polyak"}));
  cmd_solve->add_option("--max-iters", solve.cfg.max_iters);
  cmd_solve->add_option("--grad-tol", solve.cfg.grad_tol);
  cmd_solve->add_option("--perturb-radius", solve.cfg.perturb_radius);
  cmd_solve->add_option("--perturb-interval", solve.cfg.perturb_interval);
  cmd_solve->add_option("--eig-interval", solve.cfg.eig_check_interval);
  cmd_solve->add_option("--seed", solve.cfg.seed);
  cmd_solve->add_option("--trace-out", solve.trace_out);
  cmd_solve->add_option("--solution-out", solve.solution_out);

  ContourArgs contour;
  auto* cmd_contour = app.add_subcommand("contour", "emit theorem-bound contour grids as CSV");
  cmd_contour->add_option("--figure", contour.figure)
      ->check(CLI::IsMember({"global", "local", "delta"}));
  cmd_contour->add_option("--out", contour.out);
  cmd_contour->add_option("--config", contour.config);
  cmd_contour->add_option("--n", contour.n);
  cmd_contour->add_option("--m", contour.m);
  cmd_contour->add_option("--r", contour.r);
  cmd_contour->add_option("--r-star", contour.r_star);
  cmd_contour->add_option("--a-norm", contour.a_norm);
  cmd_contour->add_option("--sigma", contour.sigma);
  cmd_contour->add_option("--mstar-fro", contour.m_star_fro);
  cmd_contour->add_option("--lam1", contour.lam1);
  cmd_contour->add_option("--lam-rstar", contour.lam_rstar);
  cmd_contour->add_option("--tau", contour.tau);
  cmd_contour->add_option("--kappa", contour.kappa);
  cmd_contour->add_option("--x-min", contour.x_min);
  cmd_contour->add_option("--x-max", contour.x_max);
  cmd_contour->add_option("--x-steps", contour.x_steps);
  cmd_contour->add_option("--p-min", contour.p_min);
  cmd_contour->add_option("--p-max", contour.p_max);
  cmd_contour->add_option("--p-steps", contour.p_steps);

  VerifyArgs verify;
  auto* cmd_verify = app.add_subcommand("verify", "end-to-end bound containment trials");
  cmd_verify->add_option("--trials", verify.trials);
  cmd_verify->add_option("--n", verify.n);
  cmd_verify->add_option("--m", verify.m);
  cmd_verify->add_option("--r", verify.r);
  cmd_verify->add_option("--r-star", verify.r_star);
  cmd_verify->add_option("--sigma", verify.sigma);
  cmd_verify->add_option("--kappa", verify.kappa);
  cmd_verify->add_option("--max-iters", verify.max_iters);
  cmd_verify->add_option("--seed", verify.seed);
  cmd_verify->add_option("--out", verify.out);

  CertifyArgs certify_args;
  auto* cmd_certify = app.add_subcommand("certify", "build and check dual certificates");
  cmd_certify->add_option("--instance", certify_args.instance)->required();
  cmd_certify->add_option("--solution", certify_args.solution)->required();
  cmd_certify->add_option("--out", certify_args.out);
  cmd_certify->add_option("--kappa", certify_args.kappa);
  cmd_certify->add_option("--eps", certify_args.eps);
  cmd_certify->add_option("--tau", certify_args.tau);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return 2;
  }

  try {
    if (cmd_gen->parsed()) return run_gen(gen);
    if (cmd_solve->parsed()) return run_solve(solve);
    if (cmd_contour->parsed()) return run_contour(contour);
    if (cmd_verify->parsed()) return run_verify(verify);
    if (cmd_certify->parsed()) return run_certify(certify_args);
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const HypothesisError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
