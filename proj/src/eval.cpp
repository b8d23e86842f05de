#include "arpl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "arpl/errors.hpp"

namespace arpl::eval {
namespace {

double wrap_angle_abs(double theta) {
  return std::abs(std::atan2(std::sin(theta), std::cos(theta)));
}

double spectral_norm(const Matrix& m) {
  return m.jacobiSvd().singularValues()[0];
}

}  // namespace

void DisturbanceSpec::validate() const {
  if (zeta < 0.0) throw ConfigError("disturbance: zeta must be nonnegative");
  if (kind == DisturbanceKind::ModelMismatch && delta_mass == 0.0) {
    throw ConfigError("disturbance: model mismatch requires a delta_mass");
  }
}

RolloutResult rollout(const policy::MlpParams& params, const envs::DynamicsModel& model,
                      const State& x0, const Vector& goal_params,
                      const costs::QuadraticCostParams& cp, int horizon,
                      const DisturbanceSpec& disturbance, Rng& rng, double blowup_norm) {
  disturbance.validate();
  const int dx = model.state_dim();
  const auto ar = costs::AdmmResidualTerms::zeroed(dx, model.control_dim());

  RolloutResult out;
  out.states.reserve(horizon + 1);
  out.states.push_back(x0);
  out.controls.reserve(horizon);

  State x = x0;
  double cost = 0.0;
  for (int t = 0; t < horizon; ++t) {
    State measured = x;
    if (disturbance.kind == DisturbanceKind::Sensor && disturbance.zeta > 0.0) {
      measured += rng.uniform_linf_ball(dx, disturbance.zeta);
    }
    const Control u = policy::forward(params, policy::make_input(measured, goal_params));
    out.controls.push_back(u);
    cost += costs::running_cost(x, u, cp, ar).value;

    try {
      x = model.step(x, u);
    } catch (const DynamicsError&) {
      out.diverged = true;
      break;
    }
    if (disturbance.kind == DisturbanceKind::Transition && disturbance.zeta > 0.0) {
      x += rng.uniform_linf_ball(dx, disturbance.zeta);
    }
    out.states.push_back(x);
    if (!all_finite(x) || x.norm() > blowup_norm) {
      out.diverged = true;
      break;
    }
  }

  if (out.diverged) {
    out.cost = std::numeric_limits<double>::infinity();
  } else {
    out.cost = cost + costs::terminal_cost(x, cp).value;
  }
  return out;
}

PercentileCurve cost_percentile(const std::vector<double>& costs, double baseline_max,
                                double cap_multiplier) {
  if (costs.empty()) throw ConfigError("cost_percentile: empty cost list");
  std::vector<double> sorted = costs;
  std::sort(sorted.begin(), sorted.end());
  const double cap = cap_multiplier * baseline_max;

  PercentileCurve curve;
  curve.cap = cap;
  const auto n = static_cast<double>(sorted.size());
  for (int p = 1; p <= 100; ++p) {
    const auto idx = static_cast<std::size_t>(
        std::ceil(static_cast<double>(p) / 100.0 * n)) - 1;
    const double v = sorted[std::min(idx, sorted.size() - 1)];
    curve.percentiles.push_back(static_cast<double>(p));
    curve.capped.push_back(v > cap);
    curve.values.push_back(v > cap ? cap : v);
  }
  return curve;
}

double task_error(const RolloutResult& result, const State& x_goal,
                  const envs::DynamicsModel& model) {
  const State& xf = result.states.back();
  if (const auto* arm = dynamic_cast<const envs::PlanarArm*>(&model)) {
    const int n = arm->params().n_links;
    return (arm->end_effector(xf.head(n)) - arm->end_effector(x_goal.head(n))).norm();
  }
  if (dynamic_cast<const envs::CartPole*>(&model) != nullptr) {
    return wrap_angle_abs(xf[2]);
  }
  return (xf - x_goal).norm();
}

LipschitzEstimate empirical_lipschitz(const policy::MlpParams& params, const PolicyInput& z,
                                      double epsilon, int m, Rng& rng) {
  if (m < 1) throw ConfigError("empirical_lipschitz: need at least one sample");
  if (epsilon <= 0.0) throw ConfigError("empirical_lipschitz: epsilon must be positive");

  const Vector base = policy::forward(params, z);
  policy::Scratch scratch;
  double best = 0.0;
  for (int j = 0; j < m; ++j) {
    Vector delta = rng.uniform_l2_ball(z.size(), epsilon);
    if (j % 2 == 1) {
      // Ascent-refined sample: a few projected gradient steps on the squared
      // output deviation.
      for (int k = 0; k < 5; ++k) {
        const Vector shifted = policy::forward(params, z + delta, scratch);
        Vector grad(z.size());
        policy::backprop(params, z + delta, 2.0 * (shifted - base), nullptr, &grad, scratch);
        delta += 0.5 * epsilon * grad.normalized();
        const double norm = delta.norm();
        if (norm > epsilon) delta *= epsilon / norm;
      }
    }
    const double dn = delta.norm();
    if (dn == 0.0) continue;
    const double ratio = (policy::forward(params, z + delta, scratch) - base).norm() / dn;
    best = std::max(best, ratio);
  }

  LipschitzEstimate est;
  est.base = z;
  est.epsilon = epsilon;
  est.estimate = best;
  est.samples = m;
  return est;
}

BoundDiagnostic lemma2_bound_check(const LinearPolicySystem& sys, double gamma, double zeta,
                                   const State& x0, int n_samples, Rng& rng) {
  if (gamma <= 0.0 || gamma >= 1.0) {
    throw ConfigError("lemma2_bound_check: gamma must lie in (0,1)");
  }
  if (zeta < 0.0 || n_samples < 1) {
    throw ConfigError("lemma2_bound_check: zeta >= 0 and n_samples >= 1 required");
  }

  BoundDiagnostic diag;
  diag.gamma = gamma;
  diag.zeta = zeta;
  diag.c_pi = spectral_norm(sys.G);
  diag.c_f_u = spectral_norm(sys.B);
  diag.c_l_u = sys.cost_u;
  const double c_f_pi = spectral_norm(sys.A + sys.B * sys.G);
  const double c_l_pi = sys.cost_x + sys.cost_u * diag.c_pi;
  if (gamma * c_f_pi >= 1.0) {
    throw ConfigError("lemma2_bound_check: hypothesis gamma * C_f_pi < 1 violated");
  }
  diag.c_j = c_l_pi / (1.0 - gamma * c_f_pi);
  diag.bound_value = diag.c_pi * (diag.c_l_u + gamma * diag.c_j * diag.c_f_u) /
                     (1.0 - gamma) * zeta;

  auto step_cost = [&](const State& x, const Vector& u) {
    return sys.cost_x * x.norm() + sys.cost_u * u.norm();
  };

  // Truncation horizon: discounted tail below 1e-6 of the bound (or of the
  // per-step cost scale when the bound is zero).
  double max_step_cost = 0.0;
  {
    State x = x0;
    for (int t = 0; t < 200; ++t) {
      const Vector u = sys.G * x;
      max_step_cost = std::max(max_step_cost, step_cost(x, u));
      x = sys.A * x + sys.B * u;
    }
  }
  const double tail_target =
      1e-6 * std::max(diag.bound_value, 1e-9) * (1.0 - gamma) / (max_step_cost + 1.0);
  int horizon = 50;
  while (std::pow(gamma, horizon) > tail_target && horizon < 20000) horizon += 50;
  diag.horizon = horizon;

  // Clean reference value.
  double j_clean = 0.0;
  {
    State x = x0;
    double disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const Vector u = sys.G * x;
      j_clean += disc * step_cost(x, u);
      x = sys.A * x + sys.B * u;
      disc *= gamma;
    }
  }

  double worst = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    State x = x0;
    double j = 0.0;
    double disc = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const Vector delta =
          zeta > 0.0 ? rng.uniform_l2_ball(x.size(), zeta) : Vector::Zero(x.size());
      const Vector u = sys.G * (x + delta);
      j += disc * step_cost(x, u);
      x = sys.A * x + sys.B * u;
      disc *= gamma;
    }
    worst = std::max(worst, std::abs(j - j_clean));
  }
  diag.empirical_discrepancy = worst;
  diag.holds = worst <= diag.bound_value + 1e-12;
  return diag;
}

}  // namespace arpl::eval
