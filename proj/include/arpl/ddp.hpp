#pragma once

#include <limits>
#include <vector>

#include "arpl/common.hpp"
#include "arpl/costs.hpp"
#include "arpl/envs.hpp"

namespace arpl::ddp {

// T-step trajectory: states[0..T], controls[0..T-1], states[0] == x0.
struct Trajectory {
  std::vector<State> states;
  std::vector<Control> controls;

  const State& x0() const { return states.front(); }
  int horizon() const { return static_cast<int>(controls.size()); }
};

// Per-step affine feedback: du*(t) = feedforward[t] + feedback[t] * dx.
struct DdpGains {
  std::vector<Vector> feedforward;
  std::vector<Matrix> feedback;
};

struct DdpSettings {
  int max_iters = 200;
  double cost_tolerance = 1e-9;
  double mu_init = 1e-8;   // Quu regularization, raised x10 on failure
  double mu_min = 1e-10;   // decayed /2 on success down to this floor
  double mu_max = 1e10;
  std::vector<double> line_search_steps = {1.0,       1.0 / 2.0,  1.0 / 4.0, 1.0 / 8.0,
                                           1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0};
  // Optional symmetric control clamp applied during rollouts; +inf disables.
  double control_limit = std::numeric_limits<double>::infinity();

  void validate() const;
};

// Consensus residual terms along a whole trajectory: running entries for
// t = 0..T-1 and a state-only entry at the terminal index T. An inactive
// schedule (rho == 0) reproduces the plain tracking problem.
struct ResidualSchedule {
  double rho_x = 0.0;
  double rho_u = 0.0;
  std::vector<State> x_pl;        // T+1
  std::vector<Control> u_pl;      // T
  std::vector<State> lambda_x;    // T+1
  std::vector<Control> lambda_u;  // T

  static ResidualSchedule zeroed(int state_dim, int control_dim, int horizon);

  bool active() const { return rho_x != 0.0 || rho_u != 0.0; }
  costs::AdmmResidualTerms at(int t) const;        // running entry
  costs::AdmmResidualTerms terminal_entry() const; // state parts at index T
};

struct BackwardPassResult {
  DdpGains gains;
  bool success = false;  // false: Quu + mu I not positive definite somewhere
  // Expected cost change of a step of scale a is a*d1 + a^2/2*d2.
  double d1 = 0.0;
  double d2 = 0.0;
};

struct ForwardPassResult {
  Trajectory trajectory;
  double cost = 0.0;
  bool finite = false;
};

struct DdpResult {
  Trajectory trajectory;
  double cost = 0.0;
  std::vector<double> cost_history;  // initial rollout + accepted iterations
  bool converged = false;
  int iterations = 0;
};

double trajectory_cost(const Trajectory& traj, const costs::QuadraticCostParams& cp,
                       const ResidualSchedule& ar);

BackwardPassResult backward_pass(const Trajectory& traj, const envs::DynamicsModel& model,
                                 const costs::QuadraticCostParams& cp,
                                 const ResidualSchedule& ar, double mu);

ForwardPassResult forward_pass(const Trajectory& traj, const DdpGains& gains,
                               const envs::DynamicsModel& model,
                               const costs::QuadraticCostParams& cp,
                               const ResidualSchedule& ar, double step_scale,
                               double control_limit = std::numeric_limits<double>::infinity());

// Iterates backward/forward passes with mu adaptation and a backtracking line
// search until the predicted or realized improvement drops below
// cost_tolerance. On total line-search failure at mu_max the best trajectory
// found so far is returned with converged = false.
DdpResult solve_ddp(const State& x0, const envs::DynamicsModel& model,
                    const costs::QuadraticCostParams& cp, int horizon,
                    const ResidualSchedule& ar, const DdpSettings& settings,
                    const std::vector<Control>* warm_start_controls = nullptr);

struct RiccatiSolution {
  Trajectory trajectory;
  std::vector<Matrix> feedback;  // u_t = -feedback[t] * x_t
  Matrix value_hessian;          // P_0; optimal cost is x0' P_0 x0
};

// Exact finite-horizon discrete LQR for cost
// sum_t (x'Qx + u'Ru) + x_T'Qf x_T subject to x' = Ax + Bu.
RiccatiSolution riccati_lqr(const Matrix& A, const Matrix& B, const Matrix& Q,
                            const Matrix& R, const Matrix& Qf, int horizon, const State& x0);

}  // namespace arpl::ddp
