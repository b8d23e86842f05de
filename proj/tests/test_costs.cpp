#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "arpl/costs.hpp"
#include "arpl/errors.hpp"
#include "arpl/rng.hpp"
#include "oracles.hpp"

using namespace arpl;

namespace {

costs::QuadraticCostParams simple_params(int dx, int du) {
  return costs::QuadraticCostParams(Matrix::Identity(dx, dx), Matrix::Identity(du, du),
                                    State::Zero(dx), Matrix::Identity(dx, dx));
}

Matrix random_psd(int n, Rng& rng) {
  Matrix a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
  }
  return a * a.transpose();
}

costs::AdmmResidualTerms random_residual(int dx, int du, Rng& rng) {
  costs::AdmmResidualTerms ar;
  ar.rho_x = rng.uniform(0.0, 5.0);
  ar.rho_u = rng.uniform(0.0, 5.0);
  ar.x_pl = rng.normal_vector(dx);
  ar.u_pl = rng.normal_vector(du);
  ar.lambda_x = rng.normal_vector(dx);
  ar.lambda_u = rng.normal_vector(du);
  return ar;
}

}  // namespace

TEST_CASE("running cost vanishes at the goal with zero control and zero rho") {
  const auto cp = simple_params(3, 2);
  const auto ar = costs::AdmmResidualTerms::zeroed(3, 2);
  const auto r = costs::running_cost(State::Zero(3), Vector::Zero(2), cp, ar);
  CHECK(r.value == 0.0);
  CHECK(r.grad_x.cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.grad_u.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unit quadratic: Q=I, xhat=e1 gives 1") {
  const auto cp = simple_params(3, 1);
  State x = State::Zero(3);
  x[0] = 1.0;
  const auto r =
      costs::running_cost(x, Vector::Zero(1), cp, costs::AdmmResidualTerms::zeroed(3, 1));
  CHECK(r.value == doctest::Approx(1.0));
}

TEST_CASE("running-cost derivatives match central differences") {
  Rng rng(3);
  const int dx = 4, du = 2;
  Vector goal = rng.normal_vector(dx);
  costs::QuadraticCostParams cp(random_psd(dx, rng), random_psd(du, rng) +
                                                         0.1 * Matrix::Identity(du, du),
                                goal, random_psd(dx, rng));
  const auto ar = random_residual(dx, du, rng);
  const State x = rng.normal_vector(dx);
  const Vector u = rng.normal_vector(du);
  const auto r = costs::running_cost(x, u, cp, ar);

  const Vector gx = oracles::fd_gradient(
      [&](const Vector& xx) { return costs::running_cost(xx, u, cp, ar).value; }, x);
  const Vector gu = oracles::fd_gradient(
      [&](const Vector& uu) { return costs::running_cost(x, uu, cp, ar).value; }, u);
  const double scale_x = std::max(1.0, r.grad_x.cwiseAbs().maxCoeff());
  const double scale_u = std::max(1.0, r.grad_u.cwiseAbs().maxCoeff());
  CHECK((r.grad_x - gx).cwiseAbs().maxCoeff() / scale_x <= 1e-6);
  CHECK((r.grad_u - gu).cwiseAbs().maxCoeff() / scale_u <= 1e-6);

  // Hessians are constant; check against FD of the analytic gradient.
  const Matrix hxx = oracles::fd_jacobian(
      [&](const Vector& xx) { return costs::running_cost(xx, u, cp, ar).grad_x; }, x);
  const Matrix huu = oracles::fd_jacobian(
      [&](const Vector& uu) { return costs::running_cost(x, uu, cp, ar).grad_u; }, u);
  CHECK((r.hess_xx - hxx).cwiseAbs().maxCoeff() <= 1e-6 * scale_x);
  CHECK((r.hess_uu - huu).cwiseAbs().maxCoeff() <= 1e-6 * scale_u);
  CHECK((r.hess_xx - r.hess_xx.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.hess_uu - r.hess_uu.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.hess_ux.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("terminal cost") {
  Rng rng(5);
  SUBCASE("zero at the goal") {
    const auto cp = simple_params(3, 1);
    CHECK(costs::terminal_cost(State::Zero(3), cp).value == 0.0);
  }
  SUBCASE("Qf=2I on a unit deviation gives 2") {
    costs::QuadraticCostParams cp(Matrix::Identity(2, 2), Matrix::Identity(1, 1),
                                  State::Zero(2), 2.0 * Matrix::Identity(2, 2));
    State x = State::Zero(2);
    x[0] = 1.0;
    CHECK(costs::terminal_cost(x, cp).value == doctest::Approx(2.0));
  }
  SUBCASE("derivatives match central differences") {
    costs::QuadraticCostParams cp(random_psd(3, rng), Matrix::Identity(1, 1),
                                  rng.normal_vector(3), random_psd(3, rng));
    const State x = rng.normal_vector(3);
    const auto r = costs::terminal_cost(x, cp);
    const Vector gx = oracles::fd_gradient(
        [&](const Vector& xx) { return costs::terminal_cost(xx, cp).value; }, x);
    CHECK((r.grad_x - gx).cwiseAbs().maxCoeff() /
              std::max(1.0, r.grad_x.cwiseAbs().maxCoeff()) <=
          1e-6);
  }
}

TEST_CASE("cost is nonnegative for random PSD weights and residual terms") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int dx = 2 + static_cast<int>(rng.next_u64() % 3);
    const int du = 1 + static_cast<int>(rng.next_u64() % 2);
    costs::QuadraticCostParams cp(random_psd(dx, rng), random_psd(du, rng),
                                  rng.normal_vector(dx), random_psd(dx, rng));
    const auto ar = random_residual(dx, du, rng);
    const auto r = costs::running_cost(rng.normal_vector(dx), rng.normal_vector(du), cp, ar);
    CHECK(r.value >= 0.0);
  }
}

TEST_CASE("zero rho reduces exactly to the plain tracking cost") {
  Rng rng(13);
  costs::QuadraticCostParams cp(random_psd(3, rng), random_psd(2, rng), rng.normal_vector(3),
                                random_psd(3, rng));
  auto ar = random_residual(3, 2, rng);
  ar.rho_x = 0.0;
  ar.rho_u = 0.0;
  const State x = rng.normal_vector(3);
  const Vector u = rng.normal_vector(2);
  const auto with_terms = costs::running_cost(x, u, cp, ar);
  const auto plain = costs::running_cost(x, u, cp, costs::AdmmResidualTerms::zeroed(3, 2));
  CHECK(with_terms.value == plain.value);
  CHECK((with_terms.grad_x - plain.grad_x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((with_terms.grad_u - plain.grad_u).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("construction rejects non-symmetric or indefinite weights") {
  Matrix bad(2, 2);
  bad << 1.0, 0.5, -0.5, 1.0;  // not symmetric
  CHECK_THROWS_AS(costs::QuadraticCostParams(bad, Matrix::Identity(1, 1), State::Zero(2),
                                             Matrix::Identity(2, 2)),
                  ConfigError);
  Matrix indefinite(2, 2);
  indefinite << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(costs::QuadraticCostParams(indefinite, Matrix::Identity(1, 1),
                                             State::Zero(2), Matrix::Identity(2, 2)),
                  ConfigError);
  CHECK_THROWS_AS(costs::QuadraticCostParams(Matrix::Identity(2, 2), Matrix::Identity(1, 1),
                                             State::Zero(3), Matrix::Identity(2, 2)),
                  ConfigError);
}

TEST_CASE("shape mismatch raises a contract error") {
  const auto cp = simple_params(3, 2);
  CHECK_THROWS_AS(
      costs::running_cost(State::Zero(2), Vector::Zero(2), cp,
                          costs::AdmmResidualTerms::zeroed(3, 2)),
      ConfigError);
}
