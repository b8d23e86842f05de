#include "arpl/admm.hpp"

#include <cmath>
#include <limits>

#include "arpl/errors.hpp"
#include "arpl/parallel.hpp"
#include "arpl/rng.hpp"

namespace arpl::admm {
namespace {

constexpr std::uint64_t kPolicyInitTag = 0x77696e6974;
constexpr std::uint64_t kPolicyTrainTag = 0x706f6c69;

using policy::make_input;

ddp::ResidualSchedule consensus_schedule(const AdmmState& state, int i) {
  ddp::ResidualSchedule rs;
  rs.rho_x = state.rho_x;
  rs.rho_u = state.rho_u;
  rs.x_pl = state.pl_trajs[i].states;
  rs.u_pl = state.pl_trajs[i].controls;
  rs.lambda_x = state.dual_x[i];
  rs.lambda_u = state.dual_u[i];
  return rs;
}

// Q_BC share of one trajectory plus its proximity terms; the PL-update
// objective for trajectory i.
double pl_objective(const ddp::Trajectory& pl, const ddp::Trajectory& to,
                    const std::vector<State>& dual_x, const std::vector<Control>& dual_u,
                    const policy::MlpParams& params, const Vector& goal_params,
                    double normalizer, double rho_x, double rho_u,
                    policy::Scratch& scratch) {
  const int T = pl.horizon();
  double value = 0.0;
  for (int t = 0; t < T; ++t) {
    const PolicyInput z = make_input(pl.states[t], goal_params);
    value += (policy::forward(params, z, scratch) - pl.controls[t]).squaredNorm() / normalizer;
    value += 0.5 * rho_u * (to.controls[t] - pl.controls[t] + dual_u[t]).squaredNorm();
  }
  for (int t = 1; t <= T; ++t) {
    value += 0.5 * rho_x * (to.states[t] - pl.states[t] + dual_x[t]).squaredNorm();
  }
  return value;
}

}  // namespace

void AdmmSettings::validate() const {
  if (max_iterations < 1 || patience < 1) {
    throw ConfigError("admm settings: max_iterations and patience must be >= 1");
  }
  if (rho_x < 0.0 || rho_u < 0.0) {
    throw ConfigError("admm settings: penalties must be nonnegative");
  }
  if (pl_gradient_steps < 0 || pl_step_size <= 0.0) {
    throw ConfigError("admm settings: PL update step count/size invalid");
  }
}

void AdmmProblem::validate() const {
  if (model == nullptr) throw ConfigError("admm problem: model missing");
  if (horizon < 1) throw ConfigError("admm problem: horizon must be >= 1");
  if (policy_layers.size() < 2 || policy_layers.back() != model->control_dim()) {
    throw ConfigError("admm problem: policy output dim must match the control dim");
  }
  settings.validate();
  perturbation.validate();
  training.validate();
}

AdmmState init_admm_state(const AdmmProblem& problem,
                          const std::vector<InitialCondition>& tasks) {
  problem.validate();
  if (tasks.empty()) throw ConfigError("admm: at least one initial condition required");
  const int dx = problem.model->state_dim();
  const int du = problem.model->control_dim();
  const int dz = problem.policy_layers.front();

  AdmmState state;
  state.tasks = tasks;
  state.rho_x = problem.settings.rho_x;
  state.rho_u = problem.settings.rho_u;
  for (const auto& task : tasks) {
    if (task.x0.size() != dx || task.x_goal.size() != dx) {
      throw ConfigError("admm: initial condition state dims do not match the model");
    }
    if (static_cast<int>(task.x0.size() + task.goal_params.size()) != dz) {
      throw ConfigError("admm: policy input dim must equal state dim + goal dims");
    }
    state.task_costs.emplace_back(problem.Q, problem.R, task.x_goal, problem.Qf);
  }
  state.to_trajs.resize(tasks.size());
  state.pl_trajs.resize(tasks.size());
  state.dual_x.assign(tasks.size(), std::vector<State>(problem.horizon + 1, State::Zero(dx)));
  state.dual_u.assign(tasks.size(), std::vector<Control>(problem.horizon, Control::Zero(du)));
  return state;
}

static advreg::Dataset dataset_from(const std::vector<ddp::Trajectory>& trajs,
                                    const AdmmState& state, const AdmmProblem& problem) {
  advreg::Dataset data;
  data.trajectory_count = state.trajectory_count();
  data.normalize_per_sample = problem.normalize_per_sample;
  data.samples.reserve(trajs.size() * problem.horizon);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    for (int t = 0; t < trajs[i].horizon(); ++t) {
      data.samples.push_back(
          {make_input(trajs[i].states[t], state.tasks[i].goal_params), trajs[i].controls[t]});
    }
  }
  return data;
}

advreg::Dataset pl_dataset(const AdmmState& state, const AdmmProblem& problem) {
  return dataset_from(state.pl_trajs, state, problem);
}

advreg::Dataset to_dataset(const AdmmState& state, const AdmmProblem& problem) {
  return dataset_from(state.to_trajs, state, problem);
}

int primal_to_update(AdmmState& state, const AdmmProblem& problem) {
  const int n = state.trajectory_count();
  const bool first = state.iteration <= 1 || state.pl_trajs[0].states.empty();
  std::vector<int> failed(n, 0);
  parallel_for(n, [&](std::size_t i) {
    ddp::ResidualSchedule rs;
    if (!first) rs = consensus_schedule(state, static_cast<int>(i));
    const std::vector<Control>* warm =
        state.to_trajs[i].states.empty() ? nullptr : &state.to_trajs[i].controls;
    const auto result = ddp::solve_ddp(state.tasks[i].x0, *problem.model, state.task_costs[i],
                                       problem.horizon, rs, problem.ddp_settings, warm);
    state.to_trajs[i] = result.trajectory;
    failed[i] = result.converged ? 0 : 1;
  });
  int failures = 0;
  for (int f : failed) failures += f;
  return failures;
}

advreg::TrainResult policy_update(const AdmmState& state, const AdmmProblem& problem,
                                  const policy::MlpParams& w_prev) {
  const advreg::Dataset data = pl_dataset(state, problem);
  advreg::TrainSettings ts = problem.training;
  ts.seed = seed_mix({problem.seed, static_cast<std::uint64_t>(state.iteration),
                      kPolicyTrainTag});
  return advreg::train_policy(data, w_prev, problem.perturbation, ts);
}

int primal_pl_update(AdmmState& state, const AdmmProblem& problem,
                     const policy::MlpParams& params) {
  const int n = state.trajectory_count();
  const int T = problem.horizon;
  const int dx = problem.model->state_dim();
  const double normalizer = problem.normalize_per_sample
                                ? static_cast<double>(n) * static_cast<double>(T)
                                : static_cast<double>(n);
  std::vector<int> flagged(n, 0);

  parallel_for(n, [&](std::size_t i) {
    policy::Scratch scratch;
    const ddp::Trajectory& to = state.to_trajs[i];
    const auto& dual_x = state.dual_x[i];
    const auto& dual_u = state.dual_u[i];
    const Vector& goal = state.tasks[i].goal_params;

    ddp::Trajectory pl = state.pl_trajs[i];
    const double initial_objective =
        pl_objective(pl, to, dual_x, dual_u, params, goal, normalizer, state.rho_x,
                     state.rho_u, scratch);

    // States x_1..x_T by gradient descent with backtracking; x_0 stays pinned.
    double step = problem.settings.pl_step_size;
    double current = initial_objective;
    std::vector<State> grad(T + 1, State::Zero(dx));
    for (int it = 0; it < problem.settings.pl_gradient_steps; ++it) {
      for (int t = 1; t <= T; ++t) {
        grad[t] = state.rho_x * (pl.states[t] - to.states[t] - dual_x[t]);
        if (t < T) {
          const PolicyInput z = make_input(pl.states[t], goal);
          const Vector diff = policy::forward(params, z, scratch) - pl.controls[t];
          Vector gz(z.size());
          policy::backprop(params, z, (2.0 / normalizer) * diff, nullptr, &gz, scratch);
          grad[t] += gz.head(dx);
        }
      }
      bool accepted = false;
      for (int back = 0; back < 20; ++back) {
        ddp::Trajectory candidate = pl;
        for (int t = 1; t <= T; ++t) candidate.states[t] -= step * grad[t];
        const double value = pl_objective(candidate, to, dual_x, dual_u, params, goal,
                                          normalizer, state.rho_x, state.rho_u, scratch);
        if (value < current) {
          pl = std::move(candidate);
          current = value;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
    }

    // Controls in closed form given the final states:
    // u* = ((2/n) pi(x) + rho_u (u_to + lambda_u)) / (2/n + rho_u).
    const double bc_coeff = 2.0 / normalizer;
    for (int t = 0; t < T; ++t) {
      const PolicyInput z = make_input(pl.states[t], goal);
      const Vector pred = policy::forward(params, z, scratch);
      pl.controls[t] = (bc_coeff * pred + state.rho_u * (to.controls[t] + dual_u[t])) /
                       (bc_coeff + state.rho_u);
    }

    const double final_objective = pl_objective(pl, to, dual_x, dual_u, params, goal,
                                                normalizer, state.rho_x, state.rho_u, scratch);
    if (final_objective <= initial_objective) {
      state.pl_trajs[i] = std::move(pl);
    } else {
      flagged[i] = 1;  // keep previous copies
    }
  });

  int flags = 0;
  for (int f : flagged) flags += f;
  return flags;
}

void dual_update(AdmmState& state) {
  for (int i = 0; i < state.trajectory_count(); ++i) {
    const auto& to = state.to_trajs[i];
    const auto& pl = state.pl_trajs[i];
    for (std::size_t t = 0; t < to.states.size(); ++t) {
      state.dual_x[i][t] += to.states[t] - pl.states[t];
    }
    for (std::size_t t = 0; t < to.controls.size(); ++t) {
      state.dual_u[i][t] += to.controls[t] - pl.controls[t];
    }
  }
}

std::pair<double, double> primal_residuals(const AdmmState& state) {
  double sx = 0.0, su = 0.0;
  for (int i = 0; i < state.trajectory_count(); ++i) {
    for (std::size_t t = 0; t < state.to_trajs[i].states.size(); ++t) {
      sx += (state.to_trajs[i].states[t] - state.pl_trajs[i].states[t]).squaredNorm();
    }
    for (std::size_t t = 0; t < state.to_trajs[i].controls.size(); ++t) {
      su += (state.to_trajs[i].controls[t] - state.pl_trajs[i].controls[t]).squaredNorm();
    }
  }
  return {std::sqrt(sx), std::sqrt(su)};
}

AdmmResult run_admm(const AdmmProblem& problem, const std::vector<InitialCondition>& tasks,
                    const IterationCallback& on_iteration) {
  AdmmState state = init_admm_state(problem, tasks);
  policy::MlpParams w =
      policy::init(problem.policy_layers, seed_mix({problem.seed, kPolicyInitTag}));

  AdmmResult result;
  result.best_params = w;
  double best_bc = std::numeric_limits<double>::infinity();
  int stale = 0;

  for (int p = 1; p <= problem.settings.max_iterations; ++p) {
    state.iteration = p;
    const int ddp_failures = primal_to_update(state, problem);
    if (p == 1) state.pl_trajs = state.to_trajs;

    const advreg::TrainResult trained = policy_update(state, problem, w);
    if (trained.diverged) {
      throw TrainingError("admm: policy training diverged at iteration " + std::to_string(p));
    }
    w = trained.params;

    primal_pl_update(state, problem, w);
    dual_update(state);

    IterationRecord rec;
    rec.iteration = p;
    rec.q_bc = advreg::bc_loss(pl_dataset(state, problem), w);
    std::tie(rec.primal_residual_x, rec.primal_residual_u) = primal_residuals(state);
    rec.ddp_failures = ddp_failures;
    result.history.push_back(rec);
    if (on_iteration) on_iteration(p, w, rec, trained);

    if (rec.q_bc < best_bc) {
      best_bc = rec.q_bc;
      result.best_params = w;
      stale = 0;
    } else {
      ++stale;
      if (stale >= problem.settings.patience) break;
    }
  }
  result.final_params = w;
  result.state = std::move(state);
  return result;
}

}  // namespace arpl::admm
