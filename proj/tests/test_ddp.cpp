#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "arpl/ddp.hpp"
#include "arpl/errors.hpp"
#include "arpl/rng.hpp"
#include "oracles.hpp"

using namespace arpl;

namespace {

struct LqrInstance {
  Matrix A, B, Q, R, Qf;
  State x0;
  int horizon;
};

LqrInstance random_lqr(Rng& rng, int max_dx = 4, int horizon = 50) {
  const int dx = 1 + static_cast<int>(rng.next_u64() % max_dx);
  const int du = 1 + static_cast<int>(rng.next_u64() % std::min(dx, 2));
  LqrInstance inst;
  inst.horizon = horizon;
  inst.A = Matrix(dx, dx);
  inst.B = Matrix(dx, du);
  for (int i = 0; i < dx; ++i) {
    for (int j = 0; j < dx; ++j) inst.A(i, j) = rng.uniform(-1.0, 1.0);
    for (int j = 0; j < du; ++j) inst.B(i, j) = rng.uniform(-1.0, 1.0);
  }
  // Keep the open loop from overflowing over the horizon.
  const double radius = inst.A.eigenvalues().cwiseAbs().maxCoeff();
  if (radius > 1.05) inst.A *= 1.05 / radius;
  Vector qd(dx), rd(du), qfd(dx);
  for (int i = 0; i < dx; ++i) qd[i] = rng.uniform(0.0, 2.0);
  for (int i = 0; i < du; ++i) rd[i] = rng.uniform(0.1, 2.0);
  for (int i = 0; i < dx; ++i) qfd[i] = rng.uniform(0.0, 5.0);
  inst.Q = qd.asDiagonal();
  inst.R = rd.asDiagonal();
  inst.Qf = qfd.asDiagonal();
  inst.x0 = rng.normal_vector(dx);
  return inst;
}

costs::QuadraticCostParams lqr_cost(const LqrInstance& inst) {
  return costs::QuadraticCostParams(inst.Q, inst.R, State::Zero(inst.A.rows()), inst.Qf);
}

ddp::DdpSettings tight_settings() {
  ddp::DdpSettings s;
  s.cost_tolerance = 1e-13;
  s.mu_init = 1e-8;
  return s;
}

}  // namespace

TEST_CASE("riccati_lqr one-step scalar instance") {
  const Matrix one = Matrix::Identity(1, 1);
  State x0(1);
  x0 << 1.0;
  const auto sol = ddp::riccati_lqr(one, one, one, one, one, 1, x0);
  CHECK(sol.trajectory.controls[0][0] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("riccati_lqr with zero state cost returns zero controls") {
  Rng rng(2);
  const auto inst = random_lqr(rng);
  const int dx = static_cast<int>(inst.A.rows());
  const auto sol = ddp::riccati_lqr(inst.A, inst.B, Matrix::Zero(dx, dx), inst.R,
                                    Matrix::Zero(dx, dx), 10, inst.x0);
  for (const auto& u : sol.trajectory.controls) {
    CHECK(u.cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("riccati_lqr value matches brute-force minimization on a 2-step scalar instance") {
  // A=0: the first control regulates, the rest stay zero.
  const Matrix zero = Matrix::Zero(1, 1);
  const Matrix one = Matrix::Identity(1, 1);
  State x0(1);
  x0 << 1.3;
  const auto sol = ddp::riccati_lqr(zero, one, one, one, 2.0 * one, 2, x0);
  CHECK(std::abs(sol.trajectory.controls[1][0]) <= 1e-12);

  const double expected_value = x0[0] * sol.value_hessian(0, 0) * x0[0];
  double best = std::numeric_limits<double>::infinity();
  for (double u0 = -2.0; u0 <= 2.0; u0 += 1e-4) {
    for (double u1 = -0.5; u1 <= 0.5; u1 += 1e-3) {
      const double x1 = u0;       // A = 0
      const double x2 = u1;
      const double cost = x0[0] * x0[0] + u0 * u0 + x1 * x1 + u1 * u1 + 2.0 * x2 * x2;
      best = std::min(best, cost);
    }
  }
  CHECK(expected_value == doctest::Approx(best).epsilon(1e-6));
}

TEST_CASE("riccati_lqr rejects singular R") {
  const Matrix one = Matrix::Identity(1, 1);
  State x0(1);
  x0 << 1.0;
  CHECK_THROWS_AS(ddp::riccati_lqr(one, one, one, Matrix::Zero(1, 1), one, 3, x0),
                  ConfigError);
}

TEST_CASE("backward pass on a one-step scalar problem gives k = -0.5") {
  // f = x + u, running cost u^2, terminal x^2, x0 = 1, nominal u = 0.
  envs::LinearModel model(Matrix::Identity(1, 1), Matrix::Identity(1, 1));
  costs::QuadraticCostParams cp(Matrix::Zero(1, 1), Matrix::Identity(1, 1), State::Zero(1),
                                Matrix::Identity(1, 1));
  ddp::Trajectory traj;
  traj.states = {State::Ones(1), State::Ones(1)};
  traj.controls = {Vector::Zero(1)};
  const auto bp = ddp::backward_pass(traj, model, cp, ddp::ResidualSchedule{}, 0.0);
  REQUIRE(bp.success);
  CHECK(bp.gains.feedforward[0][0] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("backward pass at an exact optimum has vanishing feedforward") {
  Rng rng(4);
  const auto inst = random_lqr(rng, 3, 20);
  const auto riccati = ddp::riccati_lqr(inst.A, inst.B, inst.Q, inst.R, inst.Qf,
                                        inst.horizon, inst.x0);
  envs::LinearModel model(inst.A, inst.B);
  const auto bp =
      ddp::backward_pass(riccati.trajectory, model, lqr_cost(inst), ddp::ResidualSchedule{}, 0.0);
  REQUIRE(bp.success);
  for (const auto& k : bp.gains.feedforward) {
    CHECK(k.cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("backward-pass gains match the Riccati feedback on an LQR instance") {
  Rng rng(5);
  const auto inst = random_lqr(rng, 4, 15);
  const auto riccati = ddp::riccati_lqr(inst.A, inst.B, inst.Q, inst.R, inst.Qf,
                                        inst.horizon, inst.x0);
  envs::LinearModel model(inst.A, inst.B);
  // Any nominal works on an LQR problem; use the zero-control rollout.
  ddp::Trajectory traj;
  traj.states.assign(inst.horizon + 1, inst.x0);
  traj.controls.assign(inst.horizon, Vector::Zero(inst.B.cols()));
  for (int t = 0; t < inst.horizon; ++t) {
    traj.states[t + 1] = inst.A * traj.states[t];
  }
  const auto bp =
      ddp::backward_pass(traj, model, lqr_cost(inst), ddp::ResidualSchedule{}, 0.0);
  REQUIRE(bp.success);
  for (int t = 0; t < inst.horizon; ++t) {
    CHECK((bp.gains.feedback[t] + riccati.feedback[t]).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("forward pass with zero step returns the same trajectory") {
  Rng rng(6);
  const auto inst = random_lqr(rng, 3, 10);
  envs::LinearModel model(inst.A, inst.B);
  ddp::Trajectory traj;
  traj.states.assign(inst.horizon + 1, State());
  traj.controls.assign(inst.horizon, Vector());
  traj.states[0] = inst.x0;
  for (int t = 0; t < inst.horizon; ++t) {
    traj.controls[t] = rng.normal_vector(inst.B.cols());
    traj.states[t + 1] = model.step(traj.states[t], traj.controls[t]);
  }
  const auto bp = ddp::backward_pass(traj, model, lqr_cost(inst), ddp::ResidualSchedule{}, 0.0);
  REQUIRE(bp.success);
  const auto fp =
      ddp::forward_pass(traj, bp.gains, model, lqr_cost(inst), ddp::ResidualSchedule{}, 0.0);
  REQUIRE(fp.finite);
  for (int t = 0; t < inst.horizon; ++t) {
    CHECK((fp.trajectory.controls[t] - traj.controls[t]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("LQR one-shot: full forward step from any nominal hits the optimum") {
  Rng rng(7);
  const auto inst = random_lqr(rng, 3, 25);
  envs::LinearModel model(inst.A, inst.B);
  ddp::Trajectory traj;
  traj.states.assign(inst.horizon + 1, State());
  traj.controls.assign(inst.horizon, Vector::Zero(inst.B.cols()));
  traj.states[0] = inst.x0;
  for (int t = 0; t < inst.horizon; ++t) {
    traj.states[t + 1] = model.step(traj.states[t], traj.controls[t]);
  }
  const auto bp = ddp::backward_pass(traj, model, lqr_cost(inst), ddp::ResidualSchedule{}, 0.0);
  REQUIRE(bp.success);
  const auto fp =
      ddp::forward_pass(traj, bp.gains, model, lqr_cost(inst), ddp::ResidualSchedule{}, 1.0);
  REQUIRE(fp.finite);
  const auto riccati = ddp::riccati_lqr(inst.A, inst.B, inst.Q, inst.R, inst.Qf,
                                        inst.horizon, inst.x0);
  for (int t = 0; t < inst.horizon; ++t) {
    CHECK((fp.trajectory.controls[t] - riccati.trajectory.controls[t]).cwiseAbs().maxCoeff() <=
          1e-9);
  }
}

TEST_CASE("solve_ddp from the goal equilibrium is immediately optimal") {
  envs::CartPoleParams params;
  envs::CartPole model(params);
  Vector qd(4), rd(1), qfd(4);
  qd << 1.0, 0.1, 10.0, 0.1;
  rd << 0.01;
  qfd << 10.0, 1.0, 100.0, 1.0;
  costs::QuadraticCostParams cp(qd.asDiagonal(), rd.asDiagonal(), State::Zero(4),
                                qfd.asDiagonal());
  const auto result =
      ddp::solve_ddp(State::Zero(4), model, cp, 50, ddp::ResidualSchedule{}, tight_settings());
  CHECK(result.cost <= 1e-8);
  for (const auto& u : result.trajectory.controls) {
    CHECK(u.cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("solve_ddp matches the Riccati oracle on random LQR instances") {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const auto inst = random_lqr(rng);
    envs::LinearModel model(inst.A, inst.B);
    const auto result = ddp::solve_ddp(inst.x0, model, lqr_cost(inst), inst.horizon,
                                       ddp::ResidualSchedule{}, tight_settings());
    const auto riccati = ddp::riccati_lqr(inst.A, inst.B, inst.Q, inst.R, inst.Qf,
                                          inst.horizon, inst.x0);
    double worst = 0.0;
    for (int t = 0; t < inst.horizon; ++t) {
      worst = std::max(worst, (result.trajectory.controls[t] -
                               riccati.trajectory.controls[t]).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("accepted iteration costs decrease strictly") {
  envs::CartPoleParams params;
  envs::CartPole model(params);
  Vector qd(4), rd(1), qfd(4);
  qd << 1.0, 0.1, 10.0, 0.1;
  rd << 0.01;
  qfd << 10.0, 1.0, 100.0, 1.0;
  State x0(4);
  x0 << 0.0, 0.0, M_PI, 0.0;
  costs::QuadraticCostParams cp(qd.asDiagonal(), rd.asDiagonal(), State::Zero(4),
                                qfd.asDiagonal());
  ddp::DdpSettings settings;
  settings.max_iters = 40;
  const auto result =
      ddp::solve_ddp(x0, model, cp, 60, ddp::ResidualSchedule{}, settings);
  REQUIRE(result.cost_history.size() >= 2);
  for (std::size_t i = 1; i < result.cost_history.size(); ++i) {
    CHECK(result.cost_history[i] < result.cost_history[i - 1]);
  }
  CHECK(result.cost <= result.cost_history.front());
}

TEST_CASE("goal translation on an integrator model shifts nothing but the frame") {
  Rng rng(9);
  const int dx = 3, du = 3, T = 20;
  const Matrix A = Matrix::Identity(dx, dx);
  Matrix B(dx, du);
  for (int i = 0; i < dx; ++i) {
    for (int j = 0; j < du; ++j) B(i, j) = rng.uniform(-1.0, 1.0);
  }
  envs::LinearModel model(A, B);
  const State x0 = rng.normal_vector(dx);
  const State goal = rng.normal_vector(dx);
  const State offset = rng.normal_vector(dx);
  const Matrix q = Matrix::Identity(dx, dx);
  const Matrix r = 0.1 * Matrix::Identity(du, du);
  const Matrix qf = 5.0 * Matrix::Identity(dx, dx);

  costs::QuadraticCostParams cp_a(q, r, goal, qf);
  costs::QuadraticCostParams cp_b(q, r, goal + offset, qf);
  const auto res_a =
      ddp::solve_ddp(x0, model, cp_a, T, ddp::ResidualSchedule{}, tight_settings());
  const auto res_b = ddp::solve_ddp(x0 + offset, model, cp_b, T, ddp::ResidualSchedule{},
                                    tight_settings());
  for (int t = 0; t < T; ++t) {
    CHECK((res_a.trajectory.controls[t] - res_b.trajectory.controls[t]).cwiseAbs().maxCoeff() <=
          1e-9);
  }
}

TEST_CASE("consensus residual terms: DDP agrees with an affine LQR oracle") {
  Rng rng(10);
  const auto inst = random_lqr(rng, 3, 15);
  const int dx = static_cast<int>(inst.A.rows());
  const int du = static_cast<int>(inst.B.cols());
  envs::LinearModel model(inst.A, inst.B);

  ddp::ResidualSchedule rs = ddp::ResidualSchedule::zeroed(dx, du, inst.horizon);
  rs.rho_x = 2.5;
  rs.rho_u = 1.5;
  for (auto& v : rs.x_pl) v = rng.normal_vector(dx);
  for (auto& v : rs.u_pl) v = rng.normal_vector(du);
  for (auto& v : rs.lambda_x) v = rng.normal_vector(dx);
  for (auto& v : rs.lambda_u) v = rng.normal_vector(du);

  const auto result =
      ddp::solve_ddp(inst.x0, model, lqr_cost(inst), inst.horizon, rs, tight_settings());

  oracles::AffineLqr oracle;
  oracle.A = inst.A;
  oracle.B = inst.B;
  for (int t = 0; t < inst.horizon; ++t) {
    oracle.Qt.push_back(inst.Q + 0.5 * rs.rho_x * Matrix::Identity(dx, dx));
    oracle.qt.push_back(-rs.rho_x * (rs.x_pl[t] - rs.lambda_x[t]));
    oracle.Rt.push_back(inst.R + 0.5 * rs.rho_u * Matrix::Identity(du, du));
    oracle.rt.push_back(-rs.rho_u * (rs.u_pl[t] - rs.lambda_u[t]));
  }
  oracle.Pf = inst.Qf + 0.5 * rs.rho_x * Matrix::Identity(dx, dx);
  oracle.pf = -rs.rho_x * (rs.x_pl.back() - rs.lambda_x.back());
  const auto sol = oracle.solve(inst.x0);

  for (int t = 0; t < inst.horizon; ++t) {
    CHECK((result.trajectory.controls[t] - sol.controls[t]).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("proximal dominance: large rho_u pulls controls toward u_pl - lambda_u") {
  Rng rng(11);
  const Matrix A = 0.8 * Matrix::Identity(1, 1);
  const Matrix B = Matrix::Identity(1, 1);
  envs::LinearModel model(A, B);
  costs::QuadraticCostParams cp(Matrix::Identity(1, 1), 0.1 * Matrix::Identity(1, 1),
                                State::Zero(1), Matrix::Identity(1, 1));
  const int T = 10;
  State x0(1);
  x0 << 1.0;

  ddp::ResidualSchedule rs = ddp::ResidualSchedule::zeroed(1, 1, T);
  for (auto& v : rs.u_pl) v = Vector::Constant(1, 0.7);
  for (auto& v : rs.lambda_u) v = Vector::Constant(1, 0.2);

  double prev_dist = std::numeric_limits<double>::infinity();
  for (double rho : {1.0, 10.0, 100.0, 1000.0}) {
    rs.rho_u = rho;
    const auto result = ddp::solve_ddp(x0, model, cp, T, rs, tight_settings());
    double dist = 0.0;
    for (const auto& u : result.trajectory.controls) {
      dist = std::max(dist, std::abs(u[0] - 0.5));  // u_pl - lambda_u = 0.5
    }
    CHECK(dist < prev_dist);
    prev_dist = dist;
  }
  rs.rho_u = 1e5;
  const auto limit = ddp::solve_ddp(x0, model, cp, T, rs, tight_settings());
  for (const auto& u : limit.trajectory.controls) {
    CHECK(std::abs(u[0] - 0.5) <= 1e-3);
  }
}

namespace {

// Integrator whose step blows up outside a narrow control band; any
// improving candidate is rejected in the forward pass.
class ControlBarrierModel : public envs::LinearModel {
 public:
  ControlBarrierModel()
      : envs::LinearModel(Matrix::Identity(1, 1), Matrix::Identity(1, 1)) {}
  State step(const State& x, const Vector& u) const override {
    if (u.cwiseAbs().maxCoeff() > 1e-12) {
      throw DynamicsError("control barrier");
    }
    return envs::LinearModel::step(x, u);
  }
};

}  // namespace

TEST_CASE("no acceptable step at mu_max yields a convergence-failure result") {
  ControlBarrierModel model;
  State goal(1);
  goal << 50.0;
  costs::QuadraticCostParams cp(Matrix::Identity(1, 1), 1e-6 * Matrix::Identity(1, 1), goal,
                                Matrix::Identity(1, 1));
  ddp::DdpSettings settings;
  settings.max_iters = 100;
  const auto result =
      ddp::solve_ddp(State::Zero(1), model, cp, 3, ddp::ResidualSchedule{}, settings);
  CHECK_FALSE(result.converged);
  CHECK(result.cost == result.cost_history.front());
  CHECK(result.cost_history.size() == 1);
}

TEST_CASE("cart-pole swing-up reaches the upright region") {
  envs::CartPoleParams params;
  envs::CartPole model(params);
  Vector qd(4), rd(1), qfd(4);
  qd << 1.0, 0.1, 10.0, 0.1;
  rd << 0.01;
  qfd << 10.0, 1.0, 100.0, 1.0;
  costs::QuadraticCostParams cp(qd.asDiagonal(), rd.asDiagonal(), State::Zero(4),
                                qfd.asDiagonal());
  State x0(4);
  x0 << 0.0, 0.0, M_PI, 0.0;
  ddp::DdpSettings settings;
  settings.max_iters = 300;
  const auto result = ddp::solve_ddp(x0, model, cp, 150, ddp::ResidualSchedule{}, settings);
  const double theta = result.trajectory.states.back()[2];
  CHECK(std::abs(std::atan2(std::sin(theta), std::cos(theta))) < 0.05);
}
