#pragma once

#include <vector>

#include "arpl/common.hpp"
#include "arpl/costs.hpp"
#include "arpl/envs.hpp"
#include "arpl/policy.hpp"
#include "arpl/rng.hpp"

namespace arpl::eval {

enum class DisturbanceKind { None, Sensor, Transition, ModelMismatch };

struct DisturbanceSpec {
  DisturbanceKind kind = DisturbanceKind::None;
  double zeta = 0.0;        // l-inf radius for sensor/transition noise
  double delta_mass = 0.0;  // mass reduction applied to the rollout model

  void validate() const;
};

struct RolloutResult {
  std::vector<State> states;
  std::vector<Control> controls;
  double cost = 0.0;  // tracking cost only; +inf when diverged
  bool diverged = false;
};

// Closed-loop policy rollout. Sensor noise corrupts only the measurement fed
// to the policy; transition noise adds a fresh uniform l-inf sample to each
// next state; model mismatch is realized by passing a mass-scaled model. A
// state norm above blowup_norm marks the rollout diverged.
RolloutResult rollout(const policy::MlpParams& params, const envs::DynamicsModel& model,
                      const State& x0, const Vector& goal_params,
                      const costs::QuadraticCostParams& cp, int horizon,
                      const DisturbanceSpec& disturbance, Rng& rng,
                      double blowup_norm = 1e3);

struct PercentileCurve {
  std::vector<double> percentiles;  // 1..100
  std::vector<double> values;       // right-continuous step, capped
  std::vector<bool> capped;
  double cap = 0.0;
};

// Sorted costs mapped to percentiles; values above
// cap_multiplier * baseline_max are reported as capped.
PercentileCurve cost_percentile(const std::vector<double>& costs, double baseline_max,
                                double cap_multiplier);

// Arm: Euclidean end-effector distance to the goal configuration via forward
// kinematics at the final state. Cart-pole: |final pole angle| wrapped to
// [0, pi]. Other models: Euclidean distance of the final state to the goal.
double task_error(const RolloutResult& result, const State& x_goal,
                  const envs::DynamicsModel& model);

struct LipschitzEstimate {
  PolicyInput base;
  double epsilon = 0.0;
  double estimate = 0.0;
  int samples = 0;
};

// Max over m samples of |pi(z) - pi(z+d)| / |d| with d in the epsilon ball;
// samples alternate between uniform draws and ascent-refined draws so that
// growing m keeps earlier samples (nested).
LipschitzEstimate empirical_lipschitz(const policy::MlpParams& params, const PolicyInput& z,
                                      double epsilon, int m, Rng& rng);

// Diagnostic family with exactly computable Lipschitz constants:
// dynamics x' = Ax + Bu, policy u = Gx, per-step cost
// cost_x * |x| + cost_u * |u|.
struct LinearPolicySystem {
  Matrix A, B, G;
  double cost_x = 1.0;
  double cost_u = 1.0;
};

struct BoundDiagnostic {
  double gamma = 0.0;
  double c_pi = 0.0;
  double c_l_u = 0.0;
  double c_f_u = 0.0;
  double c_j = 0.0;
  double zeta = 0.0;
  double empirical_discrepancy = 0.0;
  double bound_value = 0.0;
  int horizon = 0;
  bool holds = false;  // empirical <= bound
};

// Compares the worst observed discounted-value discrepancy under per-step
// state disturbances (n_samples random sequences, |d| <= zeta) against the
// analytic bound C_pi (C_l_u + gamma C_J C_f_u) / (1-gamma) * zeta with
// C_J = C_l_pi / (1 - gamma C_f_pi). Requires gamma * C_f_pi < 1.
BoundDiagnostic lemma2_bound_check(const LinearPolicySystem& sys, double gamma, double zeta,
                                   const State& x0, int n_samples, Rng& rng);

}  // namespace arpl::eval
