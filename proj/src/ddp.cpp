#include "arpl/ddp.hpp"

#include <cmath>
#include <limits>

#include "arpl/errors.hpp"

namespace arpl::ddp {

void DdpSettings::validate() const {
  if (max_iters < 1 || cost_tolerance <= 0.0 || mu_init <= 0.0 || mu_max < mu_init) {
    throw ConfigError("ddp settings: iteration and tolerance fields must be positive");
  }
  double prev = std::numeric_limits<double>::infinity();
  for (double a : line_search_steps) {
    if (a <= 0.0 || a > 1.0 || a >= prev) {
      throw ConfigError("ddp settings: line-search schedule must be strictly decreasing in (0,1]");
    }
    prev = a;
  }
}

ResidualSchedule ResidualSchedule::zeroed(int state_dim, int control_dim, int horizon) {
  ResidualSchedule rs;
  rs.x_pl.assign(horizon + 1, State::Zero(state_dim));
  rs.u_pl.assign(horizon, Control::Zero(control_dim));
  rs.lambda_x.assign(horizon + 1, State::Zero(state_dim));
  rs.lambda_u.assign(horizon, Control::Zero(control_dim));
  return rs;
}

costs::AdmmResidualTerms ResidualSchedule::at(int t) const {
  costs::AdmmResidualTerms ar;
  if (!active()) return ar;
  ar.rho_x = rho_x;
  ar.rho_u = rho_u;
  ar.x_pl = x_pl[t];
  ar.u_pl = u_pl[t];
  ar.lambda_x = lambda_x[t];
  ar.lambda_u = lambda_u[t];
  return ar;
}

costs::AdmmResidualTerms ResidualSchedule::terminal_entry() const {
  costs::AdmmResidualTerms ar;
  if (!active()) return ar;
  ar.rho_x = rho_x;
  ar.x_pl = x_pl.back();
  ar.lambda_x = lambda_x.back();
  return ar;
}

double trajectory_cost(const Trajectory& traj, const costs::QuadraticCostParams& cp,
                       const ResidualSchedule& ar) {
  double total = 0.0;
  for (int t = 0; t < traj.horizon(); ++t) {
    total += costs::running_cost(traj.states[t], traj.controls[t], cp, ar.at(t)).value;
  }
  total += costs::terminal_cost(traj.states.back(), cp).value;
  if (ar.active()) {
    total += costs::state_residual(traj.states.back(), ar.terminal_entry()).value;
  }
  return total;
}

BackwardPassResult backward_pass(const Trajectory& traj, const envs::DynamicsModel& model,
                                 const costs::QuadraticCostParams& cp,
                                 const ResidualSchedule& ar, double mu) {
  const int T = traj.horizon();
  const int du = model.control_dim();

  BackwardPassResult out;
  out.gains.feedforward.assign(T, Vector());
  out.gains.feedback.assign(T, Matrix());

  auto terminal = costs::terminal_cost(traj.states.back(), cp);
  Vector value_grad = terminal.grad_x;
  Matrix value_hess = terminal.hess_xx;
  if (ar.active()) {
    const auto res = costs::state_residual(traj.states.back(), ar.terminal_entry());
    value_grad += res.grad_x;
    value_hess += res.hess_xx;
  }

  Matrix fx, fu;
  for (int t = T - 1; t >= 0; --t) {
    const auto l = costs::running_cost(traj.states[t], traj.controls[t], cp, ar.at(t));
    model.jacobians(traj.states[t], traj.controls[t], fx, fu);

    const Vector q_x = l.grad_x + fx.transpose() * value_grad;
    const Vector q_u = l.grad_u + fu.transpose() * value_grad;
    const Matrix q_xx = l.hess_xx + fx.transpose() * value_hess * fx;
    const Matrix q_ux = l.hess_ux + fu.transpose() * value_hess * fx;
    Matrix q_uu = l.hess_uu + fu.transpose() * value_hess * fu;
    q_uu = 0.5 * (q_uu + q_uu.transpose());

    const Matrix q_uu_reg = q_uu + mu * Matrix::Identity(du, du);
    Eigen::LLT<Matrix> llt(q_uu_reg);
    if (llt.info() != Eigen::Success) {
      out.success = false;
      return out;
    }
    const Vector k = -llt.solve(q_u);
    const Matrix K = -llt.solve(q_ux);

    out.d1 += k.dot(q_u);
    out.d2 += k.dot(q_uu_reg * k);

    value_grad = q_x + K.transpose() * q_uu_reg * k + K.transpose() * q_u + q_ux.transpose() * k;
    value_hess = q_xx + K.transpose() * q_uu_reg * K + K.transpose() * q_ux + q_ux.transpose() * K;
    value_hess = 0.5 * (value_hess + value_hess.transpose());

    out.gains.feedforward[t] = k;
    out.gains.feedback[t] = K;
  }
  out.success = true;
  return out;
}

ForwardPassResult forward_pass(const Trajectory& traj, const DdpGains& gains,
                               const envs::DynamicsModel& model,
                               const costs::QuadraticCostParams& cp,
                               const ResidualSchedule& ar, double step_scale,
                               double control_limit) {
  const int T = traj.horizon();
  ForwardPassResult out;
  out.trajectory.states.assign(T + 1, State());
  out.trajectory.controls.assign(T, Control());
  out.trajectory.states[0] = traj.states[0];

  constexpr double kStateGuard = 1e8;
  for (int t = 0; t < T; ++t) {
    Control u = traj.controls[t] + step_scale * gains.feedforward[t] +
                gains.feedback[t] * (out.trajectory.states[t] - traj.states[t]);
    if (std::isfinite(control_limit)) {
      u = u.cwiseMax(-control_limit).cwiseMin(control_limit);
    }
    out.trajectory.controls[t] = u;
    State next;
    try {
      next = model.step(out.trajectory.states[t], u);
    } catch (const DynamicsError&) {
      return out;  // rejected candidate
    }
    if (!all_finite(next) || next.cwiseAbs().maxCoeff() > kStateGuard) {
      return out;
    }
    out.trajectory.states[t + 1] = next;
  }
  out.cost = trajectory_cost(out.trajectory, cp, ar);
  out.finite = std::isfinite(out.cost);
  return out;
}

namespace {

Trajectory initial_rollout(const State& x0, const envs::DynamicsModel& model, int horizon,
                           const std::vector<Control>* warm_start_controls,
                           double control_limit) {
  Trajectory traj;
  traj.states.assign(horizon + 1, State());
  traj.controls.assign(horizon, Control::Zero(model.control_dim()));
  if (warm_start_controls != nullptr) {
    if (static_cast<int>(warm_start_controls->size()) != horizon) {
      throw ConfigError("solve_ddp: warm-start control count does not match horizon");
    }
    traj.controls = *warm_start_controls;
  }
  traj.states[0] = x0;
  for (int t = 0; t < horizon; ++t) {
    Control u = traj.controls[t];
    if (std::isfinite(control_limit)) {
      u = u.cwiseMax(-control_limit).cwiseMin(control_limit);
      traj.controls[t] = u;
    }
    traj.states[t + 1] = model.step(traj.states[t], u);
  }
  return traj;
}

}  // namespace

DdpResult solve_ddp(const State& x0, const envs::DynamicsModel& model,
                    const costs::QuadraticCostParams& cp, int horizon,
                    const ResidualSchedule& ar, const DdpSettings& settings,
                    const std::vector<Control>* warm_start_controls) {
  settings.validate();
  if (!all_finite(x0) || x0.size() != model.state_dim()) {
    throw ConfigError("solve_ddp: initial state is non-finite or mis-sized");
  }
  const int T = horizon;
  if (T <= 0) throw ConfigError("solve_ddp: horizon must be >= 1");
  if (ar.active() && static_cast<int>(ar.u_pl.size()) != T) {
    throw ConfigError("solve_ddp: residual schedule length does not match horizon");
  }

  DdpResult result;
  result.trajectory =
      initial_rollout(x0, model, T, warm_start_controls, settings.control_limit);
  result.cost = trajectory_cost(result.trajectory, cp, ar);
  result.cost_history.push_back(result.cost);

  double mu = settings.mu_init;
  for (int iter = 0; iter < settings.max_iters; ++iter) {
    result.iterations = iter + 1;
    const auto bp = backward_pass(result.trajectory, model, cp, ar, mu);
    if (!bp.success) {
      mu *= 10.0;
      if (mu > settings.mu_max) return result;  // convergence failure, best so far
      continue;
    }

    // Largest reduction the local model predicts (at full step).
    const double predicted = -(bp.d1 + 0.5 * bp.d2);
    if (predicted < settings.cost_tolerance && mu <= 10.0 * settings.mu_init) {
      result.converged = true;
      return result;
    }

    bool accepted = false;
    for (double alpha : settings.line_search_steps) {
      const auto fp = forward_pass(result.trajectory, bp.gains, model, cp, ar, alpha,
                                   settings.control_limit);
      if (!fp.finite) continue;
      const double expected = -(alpha * bp.d1 + 0.5 * alpha * alpha * bp.d2);
      const double reduction = result.cost - fp.cost;
      if (reduction > 1e-4 * std::max(expected, 0.0) && fp.cost < result.cost) {
        result.trajectory = fp.trajectory;
        result.cost = fp.cost;
        result.cost_history.push_back(fp.cost);
        mu = std::max(settings.mu_min, 0.5 * mu);
        accepted = true;
        if (reduction < settings.cost_tolerance) {
          result.converged = true;
          return result;
        }
        break;
      }
    }
    if (!accepted) {
      mu *= 10.0;
      if (mu > settings.mu_max) return result;  // convergence failure
    }
  }
  return result;
}

RiccatiSolution riccati_lqr(const Matrix& A, const Matrix& B, const Matrix& Q,
                            const Matrix& R, const Matrix& Qf, int horizon, const State& x0) {
  if (horizon < 1) throw ConfigError("riccati_lqr: horizon must be >= 1");
  Eigen::LLT<Matrix> r_check(R);
  if (r_check.info() != Eigen::Success) {
    throw ConfigError("riccati_lqr: R must be positive definite");
  }

  RiccatiSolution out;
  out.feedback.assign(horizon, Matrix());
  std::vector<Matrix> value(horizon + 1);
  value[horizon] = Qf;
  for (int t = horizon - 1; t >= 0; --t) {
    const Matrix& P = value[t + 1];
    const Matrix BtP = B.transpose() * P;
    const Matrix gain = (R + BtP * B).llt().solve(BtP * A);
    Matrix Pt = Q + A.transpose() * P * A - A.transpose() * P * B * gain;
    value[t] = 0.5 * (Pt + Pt.transpose());
    out.feedback[t] = gain;
  }
  out.value_hessian = value[0];

  out.trajectory.states.assign(horizon + 1, State());
  out.trajectory.controls.assign(horizon, Control());
  out.trajectory.states[0] = x0;
  for (int t = 0; t < horizon; ++t) {
    out.trajectory.controls[t] = -out.feedback[t] * out.trajectory.states[t];
    out.trajectory.states[t + 1] =
        A * out.trajectory.states[t] + B * out.trajectory.controls[t];
  }
  return out;
}

}  // namespace arpl::ddp
