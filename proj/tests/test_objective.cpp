#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "senselab/objective.hpp"

using namespace senselab;

namespace {

ProblemInstance make_instance(int n, int m, int r, int r_star, double sigma, std::uint64_t seed) {
  Vector spectrum = Vector::Ones(r_star);
  spectrum(0) = 1.5;
  NoiseModel nm{sigma > 0 ? NoiseModel::Kind::Gaussian : NoiseModel::Kind::None, sigma};
  return generate_instance(n, m, r, r_star, spectrum, nm, seed);
}

// X padded from the eigendecomposition of M*, so X X^T = M* exactly.
Matrix exact_factor(const ProblemInstance& inst) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(inst.truth.m_star);
  const int n = inst.op.n();
  Matrix x = Matrix::Zero(n, inst.r);
  for (int i = 0; i < inst.truth.r_star; ++i)
    x.col(i) = std::sqrt(es.eigenvalues()(n - 1 - i)) * es.eigenvectors().col(n - 1 - i);
  return x;
}

double fd_loss_derivative(const ProblemInstance& inst, const Matrix& x, const Matrix& dir,
                          double h) {
  return (loss(inst, x + h * dir) - loss(inst, x - h * dir)) / (2.0 * h);
}

}  // namespace

TEST_CASE("loss and residual basics") {
  ProblemInstance inst = make_instance(6, 60, 3, 2, 0.0, 2);
  Matrix x = exact_factor(inst);
  CHECK(loss(inst, x) == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(residual(inst, x).e.norm() < 1e-12);

  Matrix zero = Matrix::Zero(6, 3);
  CHECK(loss(inst, zero) == doctest::Approx(0.5 * inst.measurements.squaredNorm()));

  Rng rng(31);
  Matrix xr = gaussian_matrix(6, 3, rng);
  Residual res = residual(inst, xr);
  CHECK(loss(inst, xr) == doctest::Approx(0.5 * res.fit.squaredNorm()));
  CHECK(res.e.size() == 36);
  CHECK(res.fit.size() == 60);
  CHECK_THROWS_AS(loss(inst, Matrix::Zero(5, 3)), DimensionError);
}

TEST_CASE("gradient vanishes at the noiseless global factor and at zero") {
  ProblemInstance inst = make_instance(6, 60, 3, 2, 0.0, 4);
  CHECK(gradient(inst, exact_factor(inst)).norm() < 1e-12);
  CHECK(gradient(inst, Matrix::Zero(6, 3)).norm() == 0.0);
}

TEST_CASE("gradient matches central finite differences") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ProblemInstance inst = make_instance(5, 30, 2, 1, seed % 2 ? 0.05 : 0.0, seed);
    Rng rng = Rng::derive(seed, 99);
    Matrix x = gaussian_matrix(5, 2, rng);
    Matrix g = gradient(inst, x);
    double h = 1e-5 * (1.0 + spectral_norm(x));
    double tol = 1e-5 * (1.0 + g.norm());
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); ++j) {
        Matrix dir = Matrix::Zero(5, 2);
        dir(i, j) = 1.0;
        CHECK(std::abs(g(i, j) - fd_loss_derivative(inst, x, dir, h)) <= tol);
      }
  }
}

TEST_CASE("hessian: dense vs hvp vs finite differences") {
  ProblemInstance inst = make_instance(6, 50, 2, 2, 0.03, 12);
  Rng rng(55);
  Matrix x = gaussian_matrix(6, 2, rng);
  Matrix dense = hessian_dense(inst, x);

  CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() < 1e-10);

  for (int t = 0; t < 5; ++t) {
    Matrix u = gaussian_matrix(6, 2, rng);
    Vector hv = dense * vec(u);
    Matrix hv_mat = Eigen::Map<const Matrix>(hv.data(), 6, 2);
    CHECK((hessian_hvp(inst, x, u) - hv_mat).norm() < 1e-9);

    // quadratic form against second-order central differences of the loss
    double h = 1e-4 * (1.0 + spectral_norm(x));
    double quad = vec(u).dot(hv);
    double fd =
        (loss(inst, x + h * u) - 2.0 * loss(inst, x) + loss(inst, x - h * u)) / (h * h);
    CHECK(std::abs(quad - fd) <= 1e-4 * (1.0 + std::abs(quad)));
  }
  CHECK_THROWS_AS(hessian_hvp(inst, x, Matrix::Zero(3, 3)), DimensionError);
}

TEST_CASE("dense hessian equals the kronecker-plus-lift formula") {
  ProblemInstance inst = make_instance(5, 40, 2, 1, 0.02, 8);
  Rng rng(7);
  Matrix x = gaussian_matrix(5, 2, rng);
  const Matrix& a = inst.op.matrix_form();
  Matrix core = grad_core(inst, x);

  // build Xhat explicitly: Xhat vec(U) = vec(X U^T + U X^T)
  Matrix xhat(25, 10);
  Matrix u = Matrix::Zero(5, 2);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 5; ++i) {
      u(i, j) = 1.0;
      xhat.col(j * 5 + i) = vec(Matrix(x * u.transpose() + u * x.transpose()));
      u(i, j) = 0.0;
    }
  Matrix expected = xhat.transpose() * a.transpose() * a * xhat;
  for (int b = 0; b < 2; ++b) expected.block(b * 5, b * 5, 5, 5) += 2.0 * core;
  CHECK((hessian_dense(inst, x) - expected).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("lanczos matches the dense eigensolver") {
  ProblemInstance inst = make_instance(6, 45, 2, 2, 0.05, 19);
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    Matrix x = gaussian_matrix(6, 2, rng);
    Matrix dense = hessian_dense(inst, x);
    Eigen::SelfAdjointEigenSolver<Matrix> es(dense);
    double tol = 1e-9;
    auto [lam, evec] = min_hessian_eig(inst, x, tol);
    CHECK(std::abs(lam - es.eigenvalues()(0)) <= 1e-7 * (1.0 + std::abs(lam)));
    // returned vector is a genuine Ritz vector
    Vector v = vec(evec);
    CHECK((dense * v - lam * v).norm() <= 1e-6 * (1.0 + std::abs(lam)));
  }
}

TEST_CASE("lanczos handles low-dimensional and diagonal operators") {
  Vector d(8);
  d << 4, -3, 1, 0.5, 2, 7, -1, 6;
  auto apply = [&](const Vector& v) { return Vector(d.asDiagonal() * v); };
  EigResult res = min_eig_lanczos(apply, 8, 1e-10, 5);
  CHECK(res.value == doctest::Approx(-3.0).epsilon(1e-9));
  CHECK_THROWS_AS(min_eig_lanczos(apply, 8, -1.0), ParameterError);
}

TEST_CASE("min eigenvalue at a noiseless minimum and homogeneity in the operator") {
  ProblemInstance inst = make_instance(6, 80, 2, 2, 0.0, 23);
  Matrix x = exact_factor(inst);
  auto [lam, evec] = min_hessian_eig(inst, x, 1e-9);
  CHECK(lam >= -1e-8);

  // scaling every A_i by c scales the Hessian (hence lambda_min) by c^2
  double c = 1.7;
  std::vector<Matrix> scaled;
  for (const auto& a : inst.op.sensing()) scaled.push_back(c * a);
  ProblemInstance inst2 = inst;
  inst2.op = SensingOperator(inst.op.n(), std::move(scaled));
  inst2.measurements = inst2.op.apply_forward(inst.truth.m_star) - inst.noise;
  Rng rng(61);
  Matrix xr = gaussian_matrix(6, 2, rng);
  // compare quadratic forms directly (noise enters linearly, so use w = 0 variants)
  Matrix h1 = hessian_op_noiseless(inst, xr).dense();
  Matrix h2 = hessian_op_noiseless(inst2, xr).dense();
  CHECK((h2 - c * c * h1).cwiseAbs().maxCoeff() < 1e-8 * (1.0 + h2.cwiseAbs().maxCoeff()));
}

TEST_CASE("soc residuals: minimizer, zero point, orthogonal invariance") {
  ProblemInstance inst = make_instance(6, 80, 2, 2, 0.0, 29);
  SocResiduals at_min = soc_residuals(inst, exact_factor(inst));
  CHECK(at_min.kappa_grad <= 1e-8);
  CHECK(at_min.kappa_eig <= 1e-8);
  CHECK_FALSE(at_min.zero_point);

  Matrix zero = Matrix::Zero(6, 2);
  SocResiduals at_zero = soc_residuals(inst, zero);
  CHECK(at_zero.zero_point);
  // at X = 0 the Hessian is 2 I_r (x) mat_s(A^T(Ae + w))
  Matrix core = grad_core(inst, zero);
  Eigen::SelfAdjointEigenSolver<Matrix> es(core);
  double expected = std::max(0.0, -2.0 * es.eigenvalues()(0));
  CHECK(at_zero.kappa_eig == doctest::Approx(expected).epsilon(1e-6));

  Rng rng(41);
  Matrix x = gaussian_matrix(6, 2, rng);
  Matrix q = random_orthonormal(2, 2, rng);
  SocResiduals s1 = soc_residuals(inst, x);
  SocResiduals s2 = soc_residuals(inst, Matrix(x * q));
  CHECK(s1.kappa_grad == doctest::Approx(s2.kappa_grad).epsilon(1e-8));
  CHECK(s1.kappa_eig == doctest::Approx(s2.kappa_eig).epsilon(1e-6));
  CHECK(loss(inst, x) == doctest::Approx(loss(inst, Matrix(x * q))));
}

TEST_CASE("hessian quadratic form lower bound from the rip constant") {
  ProblemInstance inst = make_instance(5, 500, 2, 2, 0.02, 37);
  double delta = rip_delta_upper(inst.op);
  Rng rng(43);
  for (int t = 0; t < 20; ++t) {
    Matrix x = gaussian_matrix(5, 2, rng);
    Matrix u = gaussian_matrix(5, 2, rng);
    double quad = vec(u).dot(vec(hessian_hvp(inst, x, u)));
    double lift = (x * u.transpose() + u * x.transpose()).squaredNorm();
    double lower = (1.0 - delta) * lift - 2.0 * grad_core(inst, x).norm() * u.squaredNorm();
    CHECK(quad >= lower - 1e-8 * (1.0 + std::abs(quad)));
  }
}

TEST_CASE("factor point caches match a fresh svd") {
  Rng rng(47);
  Matrix x = gaussian_matrix(7, 3, rng);
  FactorPoint fp = make_factor_point(x);
  Eigen::JacobiSVD<Matrix> svd(x);
  CHECK(std::abs(fp.op_norm - svd.singularValues()(0)) < 1e-10);
  CHECK(std::abs(fp.sigma_r - svd.singularValues()(2)) < 1e-10);
}

TEST_CASE("second order report is internally consistent") {
  ProblemInstance inst = make_instance(5, 40, 2, 1, 0.05, 53);
  Rng rng(59);
  Matrix x = gaussian_matrix(5, 2, rng);
  SecondOrderReport rep = second_order_report(inst, x);
  CHECK(rep.loss == doctest::Approx(loss(inst, x)));
  CHECK(rep.grad_norm == doctest::Approx(rep.grad.norm()));
  CHECK(rep.residual.size() == 25);
  Eigen::SelfAdjointEigenSolver<Matrix> es(hessian_dense(inst, x));
  CHECK(rep.hess_min_eig == doctest::Approx(es.eigenvalues()(0)).epsilon(1e-7));
}
