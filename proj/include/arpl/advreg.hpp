#pragma once

#include <cstdint>
#include <vector>

#include "arpl/common.hpp"
#include "arpl/policy.hpp"
#include "arpl/rng.hpp"

namespace arpl::advreg {

struct PerturbationConfig {
  double epsilon = 5e-3;    // l2 radius of the perturbation ball
  double sigma = 2.5e-3;    // std of the initial perturbation draw
  int inner_steps = 1;      // K projected gradient ascent steps
  double eta_delta = 5e-3;  // inner ascent step size
  double alpha = 1.0;       // regularization weight
  double eta_w = 1e-3;      // outer step size when used standalone
  // Restrict the perturbation to the first state_dim input components
  // (goal parameters untouched). Off by default: the perturbation covers
  // the full policy input.
  bool perturb_state_only = false;
  int state_dim = 0;

  void validate() const;
};

// One recorded inner ascent step, sufficient to differentiate through it.
struct TapeStep {
  Vector gradient;   // grad_delta r at the previous delta
  Vector candidate;  // pre-projection value
  bool projected = false;  // candidate was strictly outside the ball
};

// delta^0..delta^K with the update records. delta^0 is the raw Gaussian draw
// (not projected); every later delta satisfies |delta| <= epsilon.
struct PerturbationTape {
  std::vector<Vector> deltas;
  std::vector<TapeStep> steps;

  const Vector& final_delta() const { return deltas.back(); }
};

// r(z, W, delta) = |pi(z|W) - pi(z+delta|W)|^2.
double discrepancy(const PolicyInput& z, const policy::MlpParams& params, const Vector& delta);

// Projection onto the l2 ball of the given radius.
Vector project_ball(const Vector& delta, double epsilon);

// K steps of projected gradient ascent on r starting from a Gaussian draw.
PerturbationTape inner_maximize(const PolicyInput& z, const policy::MlpParams& params,
                                const PerturbationConfig& cfg, Rng& rng);

struct Sample {
  PolicyInput input;
  Control target;
};

// Behavioral-cloning dataset. The loss is normalized by the trajectory count
// N (sum over all (i,t) pairs divided by N); normalize_per_sample switches to
// dividing by the sample count instead, which rescales the effective alpha.
struct Dataset {
  std::vector<Sample> samples;
  int trajectory_count = 1;
  bool normalize_per_sample = false;

  double normalizer() const {
    return normalize_per_sample ? static_cast<double>(samples.size())
                                : static_cast<double>(trajectory_count);
  }
};

// (1/N) sum |pi(z|W) - u|^2 over all samples.
double bc_loss(const Dataset& dataset, const policy::MlpParams& params);

// Replaces every input by input + N(0, sigma_g^2 I); targets unchanged.
Dataset gaussian_baseline_batch(const Dataset& dataset, double sigma_g, Rng& rng);

// Gradient-estimator internals are split so that the conventional and
// Stackelberg estimators can be evaluated on identical tapes.
std::vector<PerturbationTape> make_tapes(const Dataset& dataset,
                                         const policy::MlpParams& params,
                                         const PerturbationConfig& cfg, std::uint64_t seed);

struct GradientResult {
  policy::MlpGrad grad;
  double bc_value = 0.0;   // (1/N) sum |pi(z)-u|^2
  double reg_value = 0.0;  // (1/N) sum r at the tape's final delta
};

// Leader-only estimator: grad of Q_BC + (alpha/N) sum r(z, W, delta^K) with
// delta^K treated as a constant.
GradientResult ar_gradient_from_tapes(const Dataset& dataset, const policy::MlpParams& params,
                                      const PerturbationConfig& cfg,
                                      const std::vector<PerturbationTape>& tapes);

// Full Stackelberg estimator: leader terms plus the leader-follower
// interaction obtained by reverse accumulation through the recorded inner
// updates. With interaction_only, returns just the interaction term.
GradientResult sar_gradient_from_tapes(const Dataset& dataset, const policy::MlpParams& params,
                                       const PerturbationConfig& cfg,
                                       const std::vector<PerturbationTape>& tapes,
                                       bool interaction_only = false);

GradientResult ar_policy_gradient(const Dataset& dataset, const policy::MlpParams& params,
                                  const PerturbationConfig& cfg, std::uint64_t seed);
GradientResult sar_policy_gradient(const Dataset& dataset, const policy::MlpParams& params,
                                   const PerturbationConfig& cfg, std::uint64_t seed);

enum class Regularizer { None, Gaussian, Ar, Sar };

struct TrainSettings {
  Regularizer kind = Regularizer::None;
  int epochs = 100;
  int batch_size = 256;
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  double grad_clip_norm = 0.0;   // 0 disables clipping
  double gaussian_sigma = 5e-3;  // input noise std for the Gaussian baseline
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double bc = 0.0;
  double reg = 0.0;
  double grad_norm = 0.0;
};

struct TrainResult {
  policy::MlpParams params;
  std::vector<EpochRecord> history;
  double final_bc = 0.0;
  bool diverged = false;  // params hold the last finite iterate when set
};

// Minibatch AdamW training with the selected gradient estimator. The returned
// parameters are the uniform average of the per-epoch snapshots over the last
// quarter of epochs.
TrainResult train_policy(const Dataset& dataset, const policy::MlpParams& w0,
                         const PerturbationConfig& cfg, const TrainSettings& settings);

}  // namespace arpl::advreg
