#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "arpl/advreg.hpp"
#include "arpl/common.hpp"
#include "arpl/costs.hpp"
#include "arpl/ddp.hpp"
#include "arpl/envs.hpp"
#include "arpl/policy.hpp"

namespace arpl::admm {

struct AdmmSettings {
  int max_iterations = 15;  // P
  int patience = 2;         // iterations without Q_BC improvement before stopping
  double rho_x = 10.0;
  double rho_u = 1.0;
  int pl_gradient_steps = 50;
  double pl_step_size = 1e-2;

  void validate() const;
};

// One training trajectory task: start state, the goal parameters appended to
// the policy input, and the corresponding full-state tracking goal.
struct InitialCondition {
  State x0;
  Vector goal_params;  // may be empty (fixed-goal tasks)
  State x_goal;
};

struct AdmmProblem {
  const envs::DynamicsModel* model = nullptr;
  Matrix Q, R, Qf;
  int horizon = 0;
  ddp::DdpSettings ddp_settings;
  advreg::PerturbationConfig perturbation;
  advreg::TrainSettings training;
  AdmmSettings settings;
  bool normalize_per_sample = false;
  std::uint64_t seed = 0;
  std::vector<int> policy_layers;  // full chain [d_z, hidden..., d_u]

  void validate() const;
};

// Consensus state: trajectory-optimizer and policy-learning copies of every
// trajectory, scaled dual variables, penalties, iteration counter.
struct AdmmState {
  std::vector<InitialCondition> tasks;
  std::vector<costs::QuadraticCostParams> task_costs;
  std::vector<ddp::Trajectory> to_trajs;
  std::vector<ddp::Trajectory> pl_trajs;
  std::vector<std::vector<State>> dual_x;    // per trajectory, T+1 entries
  std::vector<std::vector<Control>> dual_u;  // per trajectory, T entries
  double rho_x = 0.0;
  double rho_u = 0.0;
  int iteration = 0;

  int trajectory_count() const { return static_cast<int>(tasks.size()); }
};

struct IterationRecord {
  int iteration = 0;
  double q_bc = 0.0;
  double primal_residual_x = 0.0;
  double primal_residual_u = 0.0;
  int ddp_failures = 0;
};

AdmmState init_admm_state(const AdmmProblem& problem,
                          const std::vector<InitialCondition>& tasks);

// Behavioral-cloning datasets over the (state, control) pairs of the PL or
// TO copies, with goal parameters appended to each input.
advreg::Dataset pl_dataset(const AdmmState& state, const AdmmProblem& problem);
advreg::Dataset to_dataset(const AdmmState& state, const AdmmProblem& problem);

// Solves every trajectory with DDP under the consensus-augmented running
// cost; the first iteration runs with zeroed residual terms. Returns the
// number of trajectories where DDP did not converge (best iterate kept).
int primal_to_update(AdmmState& state, const AdmmProblem& problem);

// Warm-started policy training on the PL copies.
advreg::TrainResult policy_update(const AdmmState& state, const AdmmProblem& problem,
                                  const policy::MlpParams& w_prev);

// Per-trajectory minimization of the cloning loss plus proximity to the TO
// copies: states by backtracking gradient descent, controls in closed form.
// Returns the number of trajectories where the objective failed to decrease
// (previous copies kept).
int primal_pl_update(AdmmState& state, const AdmmProblem& problem,
                     const policy::MlpParams& params);

// lambda += TO - PL for states and controls.
void dual_update(AdmmState& state);

// Frobenius norms of the state and control consensus residuals.
std::pair<double, double> primal_residuals(const AdmmState& state);

using IterationCallback = std::function<void(
    int iteration, const policy::MlpParams& params, const IterationRecord& record,
    const advreg::TrainResult& training)>;

struct AdmmResult {
  policy::MlpParams best_params;   // lowest recorded Q_BC
  policy::MlpParams final_params;  // last iteration
  std::vector<IterationRecord> history;
  AdmmState state;
};

// Full training loop: primal TO update, policy update, primal PL update,
// dual update, repeated until Q_BC stops improving for `patience` iterations
// or max_iterations is reached.
AdmmResult run_admm(const AdmmProblem& problem, const std::vector<InitialCondition>& tasks,
                    const IterationCallback& on_iteration = {});

}  // namespace arpl::admm
