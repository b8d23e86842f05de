#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "arpl/admm.hpp"
#include "arpl/advreg.hpp"
#include "arpl/common.hpp"
#include "arpl/envs.hpp"
#include "arpl/eval.hpp"
#include "arpl/policy.hpp"

namespace arpl::io {

enum class ModelKind { CartPole, PlanarArm };

// Parsed and validated run configuration. The schema is strict: unknown keys
// are rejected and the master seed is mandatory. Defaults are filled in at
// parse time so the canonical form (and its hashes) is independent of which
// keys were spelled out.
struct RunConfig {
  std::uint64_t seed = 0;

  ModelKind model_kind = ModelKind::CartPole;
  envs::CartPoleParams cartpole;
  envs::PlanarArmParams arm;

  Vector q_diag, r_diag, qf_diag;
  State x_goal;  // fixed-goal models (cart-pole); per-task goals override

  ddp::DdpSettings ddp_settings;
  admm::AdmmSettings admm_settings;

  advreg::Regularizer regularizer = advreg::Regularizer::None;
  advreg::PerturbationConfig perturbation;
  advreg::TrainSettings training;
  bool normalize_per_sample = false;

  std::vector<int> policy_hidden = {64, 64};

  // Dataset spec: N trajectories of horizon T with initial conditions and
  // goal parameters sampled from boxes.
  int trajectories = 16;
  int horizon = 100;
  Vector x0_low, x0_high;
  Vector goal_low, goal_high;  // empty for fixed-goal models

  // Evaluation spec.
  int eval_rollouts = 100;
  double cap_multiplier = 2.0;
  double blowup_norm = 1e3;
  eval::DisturbanceSpec disturbance;
  int lipschitz_states = 100;
  int lipschitz_samples = 64;
  double lipschitz_epsilon = 5e-3;

  int state_dim() const;
  int control_dim() const;
  int goal_dim() const { return static_cast<int>(goal_low.size()); }
  std::vector<int> policy_layers() const;

  // Canonical JSON text with every field present.
  std::string canonical() const;
  // Hash over the sections that define data/checkpoint identity
  // (seed, model, cost, policy, dataset).
  std::uint64_t identity_hash() const;
  // Hash over the full canonical config; stamped on every output file.
  std::uint64_t config_hash() const;
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

std::uint64_t fnv1a(const std::string& text);

std::unique_ptr<envs::DynamicsModel> make_model(const RunConfig& config);
// Rollout model for a disturbance spec: mass-scaled under model mismatch.
std::unique_ptr<envs::DynamicsModel> make_rollout_model(const RunConfig& config,
                                                        const eval::DisturbanceSpec& d);

costs::QuadraticCostParams make_cost(const RunConfig& config, const State& x_goal);
admm::AdmmProblem make_problem(const RunConfig& config, const envs::DynamicsModel* model);

// Initial conditions sampled from the configured boxes; stream_tag separates
// training draws from held-out evaluation draws.
std::vector<admm::InitialCondition> sample_initial_conditions(const RunConfig& config,
                                                              int count,
                                                              std::uint64_t stream_tag);

constexpr std::uint64_t kTrainDrawTag = 0x747261696e;  // training initial conditions
constexpr std::uint64_t kEvalDrawTag = 0x6576616c;     // held-out evaluation draws

// --- file formats (all documented in the README) ---

void atomic_write(const std::string& path, const std::string& bytes);

void write_init_file(const std::string& path, const RunConfig& config,
                     const std::vector<admm::InitialCondition>& tasks);
std::vector<admm::InitialCondition> read_init_file(const std::string& path,
                                                   const RunConfig& config);

struct Checkpoint {
  policy::MlpParams params;
  std::uint64_t identity_hash = 0;
  int iteration = 0;
  double q_bc = 0.0;
};

void write_checkpoint(const std::string& path, const RunConfig& config,
                      const policy::MlpParams& params, int iteration, double q_bc);
Checkpoint read_checkpoint(const std::string& path);
// Throws IncompatibilityError on hash or dimension mismatch.
void check_checkpoint_compatible(const Checkpoint& ckpt, const RunConfig& config);

struct TrajectoryRecord {
  State x0;
  Vector goal_params;
  std::vector<State> states;
  std::vector<Control> controls;
};

void write_dataset(const std::string& path, const RunConfig& config,
                   const std::vector<TrajectoryRecord>& trajectories);
std::vector<TrajectoryRecord> read_dataset(const std::string& path, const RunConfig& config);

std::string format_double(double v);  // shortest round-trip-exact decimal

// --- experiment drivers (shared by the CLI and the acceptance suite) ---

struct TrainOutputs {
  admm::AdmmResult result;
  std::string checkpoint_path;
};

TrainOutputs train_command(const RunConfig& config, const std::string& init_path,
                           const std::string& out_dir);

struct RolloutRecord {
  std::uint64_t seed = 0;
  double cost = 0.0;
  double baseline_cost = 0.0;
  double task_error = 0.0;
  bool diverged = false;
};

struct EvalOutputs {
  std::vector<RolloutRecord> records;
  eval::PercentileCurve percentiles;
  std::vector<double> lipschitz_estimates;
  double baseline_max = 0.0;
};

EvalOutputs run_evaluation(const RunConfig& config, const policy::MlpParams& params);
void write_eval_outputs(const std::string& out_dir, const RunConfig& config,
                        const EvalOutputs& outputs);

void eval_command(const RunConfig& config, const std::string& checkpoint_path,
                  const std::string& out_dir, const std::vector<double>& eps_sweep);

void gen_init_command(const RunConfig& config, const std::string& out_path);

void report_command(const std::string& out_path, const std::vector<std::string>& inputs);

}  // namespace arpl::io
