#include "arpl/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "arpl/errors.hpp"
#include "arpl/rng.hpp"

namespace arpl::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kEvalRolloutTag = 0x6576726c;
constexpr std::uint64_t kLipschitzTag = 0x6c697073;

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ConfigError("config: unknown key '" + where + key + "'");
    }
  }
}

double num_or(const json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw ConfigError(std::string("config: '") + key + "' must be a number");
  return obj[key].get<double>();
}

int int_or(const json& obj, const char* key, int fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer()) {
    throw ConfigError(std::string("config: '") + key + "' must be an integer");
  }
  return obj[key].get<int>();
}

bool bool_or(const json& obj, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) throw ConfigError(std::string("config: '") + key + "' must be a bool");
  return obj[key].get<bool>();
}

Vector vec_or(const json& obj, const char* key, const Vector& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_array()) throw ConfigError(std::string("config: '") + key + "' must be an array");
  Vector v(obj[key].size());
  Eigen::Index i = 0;
  for (const auto& e : obj[key]) {
    if (!e.is_number()) throw ConfigError(std::string("config: '") + key + "' entries must be numbers");
    v[i++] = e.get<double>();
  }
  return v;
}

json vec_to_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector constant_vec(int n, double value) { return Vector::Constant(n, value); }

}  // namespace

int RunConfig::state_dim() const {
  return model_kind == ModelKind::CartPole ? 4 : 2 * arm.n_links;
}

int RunConfig::control_dim() const {
  return model_kind == ModelKind::CartPole ? 1 : arm.n_links;
}

std::vector<int> RunConfig::policy_layers() const {
  std::vector<int> layers;
  layers.push_back(state_dim() + goal_dim());
  for (int h : policy_hidden) layers.push_back(h);
  layers.push_back(control_dim());
  return layers;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

json canonical_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["model"]["kind"] = c.model_kind == ModelKind::CartPole ? "cartpole" : "arm";
  if (c.model_kind == ModelKind::CartPole) {
    j["model"]["cartpole"] = {{"cart_mass", c.cartpole.cart_mass},
                              {"pole_mass", c.cartpole.pole_mass},
                              {"pole_length", c.cartpole.pole_length},
                              {"gravity", c.cartpole.gravity},
                              {"dt", c.cartpole.dt}};
  } else {
    j["model"]["arm"] = {{"n_links", c.arm.n_links},
                         {"link_masses", c.arm.link_masses},
                         {"link_lengths", c.arm.link_lengths},
                         {"gravity", c.arm.gravity},
                         {"dt", c.arm.dt}};
  }
  j["cost"] = {{"q_diag", vec_to_json(c.q_diag)},
               {"r_diag", vec_to_json(c.r_diag)},
               {"qf_diag", vec_to_json(c.qf_diag)},
               {"x_goal", vec_to_json(c.x_goal)}};
  j["ddp"] = {{"max_iters", c.ddp_settings.max_iters},
              {"cost_tolerance", c.ddp_settings.cost_tolerance},
              {"mu_init", c.ddp_settings.mu_init},
              {"mu_max", c.ddp_settings.mu_max},
              {"control_limit", std::isfinite(c.ddp_settings.control_limit)
                                    ? c.ddp_settings.control_limit
                                    : 0.0}};
  j["admm"] = {{"iterations", c.admm_settings.max_iterations},
               {"patience", c.admm_settings.patience},
               {"rho_x", c.admm_settings.rho_x},
               {"rho_u", c.admm_settings.rho_u},
               {"pl_gradient_steps", c.admm_settings.pl_gradient_steps},
               {"pl_step_size", c.admm_settings.pl_step_size}};
  const char* kind = "none";
  switch (c.regularizer) {
    case advreg::Regularizer::None: kind = "none"; break;
    case advreg::Regularizer::Gaussian: kind = "gaussian"; break;
    case advreg::Regularizer::Ar: kind = "ar"; break;
    case advreg::Regularizer::Sar: kind = "sar"; break;
  }
  j["regularizer"] = {{"kind", kind},
                      {"epsilon", c.perturbation.epsilon},
                      {"sigma", c.perturbation.sigma},
                      {"inner_steps", c.perturbation.inner_steps},
                      {"eta_delta", c.perturbation.eta_delta},
                      {"alpha", c.perturbation.alpha},
                      {"eta_w", c.perturbation.eta_w},
                      {"perturb_state_only", c.perturbation.perturb_state_only}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"batch_size", c.training.batch_size},
                   {"learning_rate", c.training.learning_rate},
                   {"weight_decay", c.training.weight_decay},
                   {"grad_clip_norm", c.training.grad_clip_norm},
                   {"gaussian_sigma", c.training.gaussian_sigma},
                   {"normalize_per_sample", c.normalize_per_sample}};
  j["policy"] = {{"hidden", c.policy_hidden}};
  j["dataset"] = {{"trajectories", c.trajectories},
                  {"horizon", c.horizon},
                  {"x0_low", vec_to_json(c.x0_low)},
                  {"x0_high", vec_to_json(c.x0_high)},
                  {"goal_low", vec_to_json(c.goal_low)},
                  {"goal_high", vec_to_json(c.goal_high)}};
  const char* dkind = "none";
  switch (c.disturbance.kind) {
    case eval::DisturbanceKind::None: dkind = "none"; break;
    case eval::DisturbanceKind::Sensor: dkind = "sensor"; break;
    case eval::DisturbanceKind::Transition: dkind = "transition"; break;
    case eval::DisturbanceKind::ModelMismatch: dkind = "model_mismatch"; break;
  }
  j["eval"] = {{"rollouts", c.eval_rollouts},
               {"cap_multiplier", c.cap_multiplier},
               {"blowup_norm", c.blowup_norm},
               {"disturbance",
                {{"kind", dkind}, {"zeta", c.disturbance.zeta},
                 {"delta_mass", c.disturbance.delta_mass}}},
               {"lipschitz",
                {{"states", c.lipschitz_states},
                 {"samples", c.lipschitz_samples},
                 {"epsilon", c.lipschitz_epsilon}}}};
  return j;
}

}  // namespace

std::string RunConfig::canonical() const { return canonical_json(*this).dump(); }

std::uint64_t RunConfig::identity_hash() const {
  const json full = canonical_json(*this);
  json subset;
  subset["seed"] = full["seed"];
  subset["model"] = full["model"];
  subset["cost"] = full["cost"];
  subset["policy"] = full["policy"];
  subset["dataset"] = full["dataset"];
  return fnv1a(subset.dump());
}

std::uint64_t RunConfig::config_hash() const { return fnv1a(canonical()); }

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  reject_unknown(j, "", {"seed", "model", "cost", "ddp", "admm", "regularizer", "training",
                         "policy", "dataset", "eval"});
  if (!j.contains("seed")) throw ConfigError("config: required key 'seed' missing");
  if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) {
    throw ConfigError("config: 'seed' must be an integer");
  }

  RunConfig c;
  c.seed = j["seed"].get<std::uint64_t>();

  if (!j.contains("model") || !j["model"].is_object() || !j["model"].contains("kind")) {
    throw ConfigError("config: required key 'model.kind' missing");
  }
  const json& jm = j["model"];
  reject_unknown(jm, "model.", {"kind", "cartpole", "arm"});
  const std::string kind = jm["kind"].get<std::string>();
  if (kind == "cartpole") {
    c.model_kind = ModelKind::CartPole;
  } else if (kind == "arm") {
    c.model_kind = ModelKind::PlanarArm;
  } else {
    throw ConfigError("config: 'model.kind' must be 'cartpole' or 'arm'");
  }
  if (jm.contains("cartpole")) {
    const json& jc = jm["cartpole"];
    reject_unknown(jc, "model.cartpole.",
                   {"cart_mass", "pole_mass", "pole_length", "gravity", "dt"});
    c.cartpole.cart_mass = num_or(jc, "cart_mass", c.cartpole.cart_mass);
    c.cartpole.pole_mass = num_or(jc, "pole_mass", c.cartpole.pole_mass);
    c.cartpole.pole_length = num_or(jc, "pole_length", c.cartpole.pole_length);
    c.cartpole.gravity = num_or(jc, "gravity", c.cartpole.gravity);
    c.cartpole.dt = num_or(jc, "dt", c.cartpole.dt);
  }
  c.arm.link_masses = {1.0, 1.0};
  c.arm.link_lengths = {1.0, 1.0};
  if (jm.contains("arm")) {
    const json& ja = jm["arm"];
    reject_unknown(ja, "model.arm.", {"n_links", "link_masses", "link_lengths", "gravity", "dt"});
    c.arm.n_links = int_or(ja, "n_links", 2);
    const Vector masses = vec_or(ja, "link_masses", constant_vec(c.arm.n_links, 1.0));
    const Vector lengths = vec_or(ja, "link_lengths", constant_vec(c.arm.n_links, 1.0));
    c.arm.link_masses.assign(masses.data(), masses.data() + masses.size());
    c.arm.link_lengths.assign(lengths.data(), lengths.data() + lengths.size());
    c.arm.gravity = num_or(ja, "gravity", c.arm.gravity);
    c.arm.dt = num_or(ja, "dt", c.arm.dt);
  }
  if (c.model_kind == ModelKind::CartPole) {
    c.cartpole.validate();
  } else {
    c.arm.validate();
  }

  const int dx = c.state_dim();
  const int du = c.control_dim();

  // Cost defaults: standard swing-up / reaching weightings.
  Vector q_def, qf_def;
  if (c.model_kind == ModelKind::CartPole) {
    q_def = Vector(4);
    q_def << 1.0, 0.1, 10.0, 0.1;
    qf_def = Vector(4);
    qf_def << 10.0, 1.0, 100.0, 1.0;
  } else {
    q_def = Vector(dx);
    qf_def = Vector(dx);
    for (int i = 0; i < du; ++i) {
      q_def[i] = 1.0;
      q_def[du + i] = 0.1;
      qf_def[i] = 10.0;
      qf_def[du + i] = 1.0;
    }
  }
  json jcost = j.value("cost", json::object());
  reject_unknown(jcost, "cost.", {"q_diag", "r_diag", "qf_diag", "x_goal"});
  c.q_diag = vec_or(jcost, "q_diag", q_def);
  c.r_diag = vec_or(jcost, "r_diag", constant_vec(du, 0.01));
  c.qf_diag = vec_or(jcost, "qf_diag", qf_def);
  c.x_goal = vec_or(jcost, "x_goal", Vector::Zero(dx));
  if (c.q_diag.size() != dx || c.qf_diag.size() != dx || c.r_diag.size() != du ||
      c.x_goal.size() != dx) {
    throw ConfigError("config: cost diagonal/goal sizes must match the model dims");
  }

  json jddp = j.value("ddp", json::object());
  reject_unknown(jddp, "ddp.", {"max_iters", "cost_tolerance", "mu_init", "mu_max",
                                "control_limit"});
  c.ddp_settings.max_iters = int_or(jddp, "max_iters", c.ddp_settings.max_iters);
  c.ddp_settings.cost_tolerance = num_or(jddp, "cost_tolerance", c.ddp_settings.cost_tolerance);
  c.ddp_settings.mu_init = num_or(jddp, "mu_init", c.ddp_settings.mu_init);
  c.ddp_settings.mu_max = num_or(jddp, "mu_max", c.ddp_settings.mu_max);
  const double climit = num_or(jddp, "control_limit", 0.0);
  c.ddp_settings.control_limit =
      climit > 0.0 ? climit : std::numeric_limits<double>::infinity();
  c.ddp_settings.validate();

  json jadmm = j.value("admm", json::object());
  reject_unknown(jadmm, "admm.", {"iterations", "patience", "rho_x", "rho_u",
                                  "pl_gradient_steps", "pl_step_size"});
  c.admm_settings.max_iterations = int_or(jadmm, "iterations", c.admm_settings.max_iterations);
  c.admm_settings.patience = int_or(jadmm, "patience", c.admm_settings.patience);
  c.admm_settings.rho_x = num_or(jadmm, "rho_x", c.admm_settings.rho_x);
  c.admm_settings.rho_u = num_or(jadmm, "rho_u", c.admm_settings.rho_u);
  c.admm_settings.pl_gradient_steps =
      int_or(jadmm, "pl_gradient_steps", c.admm_settings.pl_gradient_steps);
  c.admm_settings.pl_step_size = num_or(jadmm, "pl_step_size", c.admm_settings.pl_step_size);
  c.admm_settings.validate();

  json jreg = j.value("regularizer", json::object());
  reject_unknown(jreg, "regularizer.",
                 {"kind", "epsilon", "sigma", "inner_steps", "eta_delta", "alpha", "eta_w",
                  "perturb_state_only"});
  const std::string rkind = jreg.value("kind", "none");
  if (rkind == "none") {
    c.regularizer = advreg::Regularizer::None;
  } else if (rkind == "gaussian") {
    c.regularizer = advreg::Regularizer::Gaussian;
  } else if (rkind == "ar") {
    c.regularizer = advreg::Regularizer::Ar;
  } else if (rkind == "sar") {
    c.regularizer = advreg::Regularizer::Sar;
  } else {
    throw ConfigError("config: 'regularizer.kind' must be none|gaussian|ar|sar");
  }
  c.perturbation.epsilon = num_or(jreg, "epsilon", c.perturbation.epsilon);
  c.perturbation.sigma = num_or(jreg, "sigma", 0.5 * c.perturbation.epsilon);
  c.perturbation.inner_steps = int_or(jreg, "inner_steps", c.perturbation.inner_steps);
  c.perturbation.eta_delta = num_or(jreg, "eta_delta", c.perturbation.eta_delta);
  c.perturbation.alpha = num_or(jreg, "alpha", c.perturbation.alpha);
  c.perturbation.eta_w = num_or(jreg, "eta_w", c.perturbation.eta_w);
  c.perturbation.perturb_state_only = bool_or(jreg, "perturb_state_only", false);
  c.perturbation.state_dim = dx;
  c.perturbation.validate();

  json jtrain = j.value("training", json::object());
  reject_unknown(jtrain, "training.",
                 {"epochs", "batch_size", "learning_rate", "weight_decay", "grad_clip_norm",
                  "gaussian_sigma", "normalize_per_sample"});
  c.training.epochs = int_or(jtrain, "epochs", c.training.epochs);
  c.training.batch_size = int_or(jtrain, "batch_size", c.training.batch_size);
  c.training.learning_rate = num_or(jtrain, "learning_rate", 0.0);
  c.training.weight_decay = num_or(jtrain, "weight_decay", c.training.weight_decay);
  c.training.grad_clip_norm = num_or(jtrain, "grad_clip_norm", c.training.grad_clip_norm);
  c.training.gaussian_sigma = num_or(jtrain, "gaussian_sigma", c.training.gaussian_sigma);
  c.normalize_per_sample = bool_or(jtrain, "normalize_per_sample", false);
  c.training.kind = c.regularizer;
  c.training.validate();

  json jpolicy = j.value("policy", json::object());
  reject_unknown(jpolicy, "policy.", {"hidden"});
  if (jpolicy.contains("hidden")) {
    const Vector h = vec_or(jpolicy, "hidden", Vector());
    c.policy_hidden.clear();
    for (Eigen::Index i = 0; i < h.size(); ++i) {
      if (h[i] < 1 || h[i] != std::floor(h[i])) {
        throw ConfigError("config: 'policy.hidden' entries must be positive integers");
      }
      c.policy_hidden.push_back(static_cast<int>(h[i]));
    }
  }

  // Dataset defaults around the task's rest configuration.
  Vector x0_low_def, x0_high_def, goal_low_def, goal_high_def;
  if (c.model_kind == ModelKind::CartPole) {
    x0_low_def = Vector(4);
    x0_low_def << -0.25, -0.25, M_PI - 0.25, -0.25;
    x0_high_def = Vector(4);
    x0_high_def << 0.25, 0.25, M_PI + 0.25, 0.25;
  } else {
    const int n = c.arm.n_links;
    x0_low_def = Vector::Zero(dx);
    x0_high_def = Vector::Zero(dx);
    x0_low_def[0] = -M_PI / 2.0 - 0.3;
    x0_high_def[0] = -M_PI / 2.0 + 0.3;
    for (int i = 1; i < n; ++i) {
      x0_low_def[i] = -0.3;
      x0_high_def[i] = 0.3;
    }
    for (int i = 0; i < n; ++i) {
      x0_low_def[n + i] = -0.1;
      x0_high_def[n + i] = 0.1;
    }
    goal_low_def = Vector::Zero(n);
    goal_high_def = Vector::Zero(n);
    goal_low_def[0] = -M_PI / 2.0 - 1.0;
    goal_high_def[0] = -M_PI / 2.0 + 1.0;
    for (int i = 1; i < n; ++i) {
      goal_low_def[i] = -1.0;
      goal_high_def[i] = 1.0;
    }
  }
  json jdata = j.value("dataset", json::object());
  reject_unknown(jdata, "dataset.",
                 {"trajectories", "horizon", "x0_low", "x0_high", "goal_low", "goal_high"});
  c.trajectories = int_or(jdata, "trajectories", c.trajectories);
  c.horizon = int_or(jdata, "horizon", c.horizon);
  if (c.trajectories < 1) throw ConfigError("config: 'dataset.trajectories' must be >= 1");
  if (c.horizon < 1) throw ConfigError("config: 'dataset.horizon' must be >= 1");
  c.x0_low = vec_or(jdata, "x0_low", x0_low_def);
  c.x0_high = vec_or(jdata, "x0_high", x0_high_def);
  c.goal_low = vec_or(jdata, "goal_low", goal_low_def);
  c.goal_high = vec_or(jdata, "goal_high", goal_high_def);
  if (c.x0_low.size() != dx || c.x0_high.size() != dx) {
    throw ConfigError("config: 'dataset.x0_low/high' sizes must match the state dim");
  }
  if (c.goal_low.size() != c.goal_high.size()) {
    throw ConfigError("config: 'dataset.goal_low/high' sizes must agree");
  }
  if (c.model_kind == ModelKind::CartPole && c.goal_dim() != 0) {
    throw ConfigError("config: cart-pole runs use a fixed goal (empty goal box)");
  }
  if (c.model_kind == ModelKind::PlanarArm && c.goal_dim() != 0 &&
      c.goal_dim() != c.arm.n_links) {
    throw ConfigError("config: arm goal box must have one entry per joint (or be empty)");
  }
  for (Eigen::Index i = 0; i < c.x0_low.size(); ++i) {
    if (c.x0_low[i] > c.x0_high[i]) throw ConfigError("config: x0 box is empty");
  }
  for (Eigen::Index i = 0; i < c.goal_low.size(); ++i) {
    if (c.goal_low[i] > c.goal_high[i]) throw ConfigError("config: goal box is empty");
  }

  json jeval = j.value("eval", json::object());
  reject_unknown(jeval, "eval.",
                 {"rollouts", "cap_multiplier", "blowup_norm", "disturbance", "lipschitz"});
  c.eval_rollouts = int_or(jeval, "rollouts", c.eval_rollouts);
  c.cap_multiplier = num_or(jeval, "cap_multiplier", c.cap_multiplier);
  c.blowup_norm = num_or(jeval, "blowup_norm", c.blowup_norm);
  if (c.eval_rollouts < 1) throw ConfigError("config: 'eval.rollouts' must be >= 1");
  json jdist = jeval.value("disturbance", json::object());
  reject_unknown(jdist, "eval.disturbance.", {"kind", "zeta", "delta_mass"});
  const std::string dkind = jdist.value("kind", "none");
  if (dkind == "none") {
    c.disturbance.kind = eval::DisturbanceKind::None;
  } else if (dkind == "sensor") {
    c.disturbance.kind = eval::DisturbanceKind::Sensor;
  } else if (dkind == "transition") {
    c.disturbance.kind = eval::DisturbanceKind::Transition;
  } else if (dkind == "model_mismatch") {
    c.disturbance.kind = eval::DisturbanceKind::ModelMismatch;
  } else {
    throw ConfigError("config: 'eval.disturbance.kind' must be none|sensor|transition|model_mismatch");
  }
  c.disturbance.zeta = num_or(jdist, "zeta", 0.0);
  c.disturbance.delta_mass = num_or(jdist, "delta_mass", 0.0);
  c.disturbance.validate();
  json jlip = jeval.value("lipschitz", json::object());
  reject_unknown(jlip, "eval.lipschitz.", {"states", "samples", "epsilon"});
  c.lipschitz_states = int_or(jlip, "states", c.lipschitz_states);
  c.lipschitz_samples = int_or(jlip, "samples", c.lipschitz_samples);
  c.lipschitz_epsilon = num_or(jlip, "epsilon", c.lipschitz_epsilon);

  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::unique_ptr<envs::DynamicsModel> make_model(const RunConfig& config) {
  if (config.model_kind == ModelKind::CartPole) {
    return std::make_unique<envs::CartPole>(config.cartpole);
  }
  return std::make_unique<envs::PlanarArm>(config.arm);
}

std::unique_ptr<envs::DynamicsModel> make_rollout_model(const RunConfig& config,
                                                        const eval::DisturbanceSpec& d) {
  if (d.kind != eval::DisturbanceKind::ModelMismatch) return make_model(config);
  if (config.model_kind == ModelKind::CartPole) {
    return std::make_unique<envs::CartPole>(envs::mass_scaled(config.cartpole, d.delta_mass));
  }
  return std::make_unique<envs::PlanarArm>(envs::mass_scaled(config.arm, d.delta_mass));
}

costs::QuadraticCostParams make_cost(const RunConfig& config, const State& x_goal) {
  return costs::QuadraticCostParams(config.q_diag.asDiagonal(), config.r_diag.asDiagonal(),
                                    x_goal, config.qf_diag.asDiagonal());
}

admm::AdmmProblem make_problem(const RunConfig& config, const envs::DynamicsModel* model) {
  admm::AdmmProblem p;
  p.model = model;
  p.Q = Matrix(config.q_diag.asDiagonal());
  p.R = Matrix(config.r_diag.asDiagonal());
  p.Qf = Matrix(config.qf_diag.asDiagonal());
  p.horizon = config.horizon;
  p.ddp_settings = config.ddp_settings;
  p.perturbation = config.perturbation;
  p.training = config.training;
  p.settings = config.admm_settings;
  p.normalize_per_sample = config.normalize_per_sample;
  p.seed = config.seed;
  p.policy_layers = config.policy_layers();
  return p;
}

std::vector<admm::InitialCondition> sample_initial_conditions(const RunConfig& config,
                                                              int count,
                                                              std::uint64_t stream_tag) {
  if (count < 1) throw ConfigError("initial conditions: count must be >= 1");
  std::vector<admm::InitialCondition> tasks;
  tasks.reserve(count);
  Rng rng(seed_mix({config.seed, stream_tag}));
  const int dx = config.state_dim();
  for (int i = 0; i < count; ++i) {
    admm::InitialCondition task;
    task.x0 = rng.uniform_box(config.x0_low, config.x0_high);
    if (config.goal_dim() > 0) {
      task.goal_params = rng.uniform_box(config.goal_low, config.goal_high);
      task.x_goal = State::Zero(dx);
      task.x_goal.head(config.goal_dim()) = task.goal_params;
    } else {
      task.goal_params = Vector();
      task.x_goal = config.x_goal;
    }
    tasks.push_back(std::move(task));
  }
  return tasks;
}

void atomic_write(const std::string& path, const std::string& bytes) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  fs::rename(tmp, target);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void append_doubles(std::string& blob, const double* data, std::size_t count) {
  blob.append(reinterpret_cast<const char*>(data), count * sizeof(double));
}

}  // namespace

void write_init_file(const std::string& path, const RunConfig& config,
                     const std::vector<admm::InitialCondition>& tasks) {
  std::ostringstream out;
  out << "arpl-init 1 " << hash_hex(config.identity_hash()) << "\n";
  out << tasks.size() << " " << config.state_dim() << " " << config.goal_dim() << "\n";
  for (const auto& task : tasks) {
    for (Eigen::Index i = 0; i < task.x0.size(); ++i) {
      out << (i == 0 ? "" : " ") << format_double(task.x0[i]);
    }
    for (Eigen::Index i = 0; i < task.goal_params.size(); ++i) {
      out << " " << format_double(task.goal_params[i]);
    }
    out << "\n";
  }
  atomic_write(path, out.str());
}

std::vector<admm::InitialCondition> read_init_file(const std::string& path,
                                                   const RunConfig& config) {
  std::istringstream in(read_file(path));
  std::string magic, version, hash;
  in >> magic >> version >> hash;
  if (magic != "arpl-init" || version != "1") {
    throw IncompatibilityError("init file: bad magic or version in '" + path + "'");
  }
  if (hash != hash_hex(config.identity_hash())) {
    throw IncompatibilityError("init file: config identity mismatch for '" + path + "'");
  }
  int n = 0, dx = 0, dg = 0;
  in >> n >> dx >> dg;
  if (n < 1 || dx != config.state_dim() || dg != config.goal_dim()) {
    throw IncompatibilityError("init file: dimension header mismatch");
  }
  std::vector<admm::InitialCondition> tasks(n);
  for (auto& task : tasks) {
    task.x0.resize(dx);
    task.goal_params.resize(dg);
    for (int i = 0; i < dx; ++i) in >> task.x0[i];
    for (int i = 0; i < dg; ++i) in >> task.goal_params[i];
    if (!in) throw IncompatibilityError("init file: truncated data");
    if (dg > 0) {
      task.x_goal = State::Zero(dx);
      task.x_goal.head(dg) = task.goal_params;
    } else {
      task.x_goal = config.x_goal;
    }
  }
  return tasks;
}

void write_checkpoint(const std::string& path, const RunConfig& config,
                      const policy::MlpParams& params, int iteration, double q_bc) {
  std::ostringstream header;
  header << "arpl-checkpoint 1 " << hash_hex(config.identity_hash()) << " tanh "
         << params.layer_dims.size();
  for (int d : params.layer_dims) header << " " << d;
  header << " " << iteration << " " << format_double(q_bc) << "\n";
  std::string bytes = header.str();
  const Vector flat = params.flatten();
  append_doubles(bytes, flat.data(), flat.size());
  atomic_write(path, bytes);
}

Checkpoint read_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos) throw IncompatibilityError("checkpoint: missing header");
  std::istringstream header(bytes.substr(0, nl));
  std::string magic, version, hash, activation;
  std::size_t n_dims = 0;
  header >> magic >> version >> hash >> activation >> n_dims;
  if (magic != "arpl-checkpoint" || version != "1" || activation != "tanh" || n_dims < 2) {
    throw IncompatibilityError("checkpoint: bad header in '" + path + "'");
  }
  std::vector<int> dims(n_dims);
  for (auto& d : dims) header >> d;
  Checkpoint ckpt;
  header >> ckpt.iteration >> ckpt.q_bc;
  if (!header) throw IncompatibilityError("checkpoint: truncated header");
  ckpt.identity_hash = std::stoull(hash, nullptr, 16);

  const char* blob = bytes.data() + nl + 1;
  const std::size_t blob_bytes = bytes.size() - nl - 1;
  std::size_t expected = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    expected += static_cast<std::size_t>(dims[l + 1]) * dims[l] + dims[l + 1];
  }
  if (blob_bytes != expected * sizeof(double)) {
    throw IncompatibilityError("checkpoint: weight blob size mismatch");
  }
  Vector flat(expected);
  std::memcpy(flat.data(), blob, blob_bytes);
  ckpt.params = policy::MlpParams::from_flat(dims, policy::Activation::Tanh, flat);
  return ckpt;
}

void check_checkpoint_compatible(const Checkpoint& ckpt, const RunConfig& config) {
  if (ckpt.identity_hash != config.identity_hash()) {
    throw IncompatibilityError("checkpoint: config identity hash mismatch");
  }
  if (ckpt.params.layer_dims != config.policy_layers()) {
    throw IncompatibilityError("checkpoint: policy layer dims mismatch");
  }
}

void write_dataset(const std::string& path, const RunConfig& config,
                   const std::vector<TrajectoryRecord>& trajectories) {
  if (trajectories.empty()) throw ConfigError("dataset: nothing to write");
  const int T = static_cast<int>(trajectories.front().controls.size());
  std::ostringstream header;
  header << "arpl-dataset 1 " << hash_hex(config.identity_hash()) << " " << trajectories.size()
         << " " << T << " " << config.state_dim() << " " << config.control_dim() << " "
         << config.goal_dim() << "\n";
  std::string bytes = header.str();
  for (const auto& traj : trajectories) {
    append_doubles(bytes, traj.x0.data(), traj.x0.size());
    if (traj.goal_params.size() > 0) {
      append_doubles(bytes, traj.goal_params.data(), traj.goal_params.size());
    }
    for (const auto& x : traj.states) append_doubles(bytes, x.data(), x.size());
    for (const auto& u : traj.controls) append_doubles(bytes, u.data(), u.size());
  }
  atomic_write(path, bytes);
}

std::vector<TrajectoryRecord> read_dataset(const std::string& path, const RunConfig& config) {
  const std::string bytes = read_file(path);
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos) throw IncompatibilityError("dataset: missing header");
  std::istringstream header(bytes.substr(0, nl));
  std::string magic, version, hash;
  int n = 0, T = 0, dx = 0, du = 0, dg = 0;
  header >> magic >> version >> hash >> n >> T >> dx >> du >> dg;
  if (magic != "arpl-dataset" || version != "1" || !header) {
    throw IncompatibilityError("dataset: bad header in '" + path + "'");
  }
  if (hash != hash_hex(config.identity_hash())) {
    throw IncompatibilityError("dataset: config identity mismatch");
  }
  if (dx != config.state_dim() || du != config.control_dim() || dg != config.goal_dim()) {
    throw IncompatibilityError("dataset: dimension mismatch");
  }
  const std::size_t per_traj = static_cast<std::size_t>(dx) + dg +
                               static_cast<std::size_t>(T + 1) * dx +
                               static_cast<std::size_t>(T) * du;
  const char* blob = bytes.data() + nl + 1;
  if (bytes.size() - nl - 1 != per_traj * n * sizeof(double)) {
    throw IncompatibilityError("dataset: blob size mismatch");
  }
  std::vector<TrajectoryRecord> out(n);
  const double* p = reinterpret_cast<const double*>(blob);
  for (auto& traj : out) {
    traj.x0 = Eigen::Map<const Vector>(p, dx);
    p += dx;
    traj.goal_params = Eigen::Map<const Vector>(p, dg);
    p += dg;
    traj.states.resize(T + 1);
    for (auto& x : traj.states) {
      x = Eigen::Map<const Vector>(p, dx);
      p += dx;
    }
    traj.controls.resize(T);
    for (auto& u : traj.controls) {
      u = Eigen::Map<const Vector>(p, du);
      p += du;
    }
  }
  return out;
}

namespace {

std::string csv_head(const RunConfig& config, const std::string& columns) {
  return "# arpl-config " + hash_hex(config.config_hash()) + "\n" + columns + "\n";
}

}  // namespace

TrainOutputs train_command(const RunConfig& config, const std::string& init_path,
                           const std::string& out_dir) {
  fs::create_directories(out_dir);
  const auto model = make_model(config);
  const admm::AdmmProblem problem = make_problem(config, model.get());
  const auto tasks = read_init_file(init_path, config);

  std::string admm_csv =
      csv_head(config, "iteration,q_bc,primal_residual_x,primal_residual_u,ddp_failures");

  auto on_iteration = [&](int p, const policy::MlpParams& w, const admm::IterationRecord& rec,
                          const advreg::TrainResult& trained) {
    admm_csv += std::to_string(p) + "," + format_double(rec.q_bc) + "," +
                format_double(rec.primal_residual_x) + "," +
                format_double(rec.primal_residual_u) + "," +
                std::to_string(rec.ddp_failures) + "\n";
    write_checkpoint(out_dir + "/checkpoint_iter_" + std::to_string(p) + ".bin", config, w, p,
                     rec.q_bc);
    std::string train_csv = csv_head(config, "epoch,q_bc,reg_value,grad_norm");
    for (const auto& e : trained.history) {
      train_csv += std::to_string(e.epoch) + "," + format_double(e.bc) + "," +
                   format_double(e.reg) + "," + format_double(e.grad_norm) + "\n";
    }
    atomic_write(out_dir + "/train_iter_" + std::to_string(p) + ".csv", train_csv);
  };

  TrainOutputs out;
  out.result = admm::run_admm(problem, tasks, on_iteration);
  atomic_write(out_dir + "/admm_history.csv", admm_csv);

  double best_bc = std::numeric_limits<double>::infinity();
  for (const auto& rec : out.result.history) best_bc = std::min(best_bc, rec.q_bc);
  out.checkpoint_path = out_dir + "/checkpoint_final.bin";
  write_checkpoint(out.checkpoint_path, config, out.result.best_params,
                   static_cast<int>(out.result.history.size()), best_bc);

  // The trajectory-optimizer dataset of the final iteration.
  std::vector<TrajectoryRecord> trajs;
  const auto& st = out.result.state;
  for (int i = 0; i < st.trajectory_count(); ++i) {
    TrajectoryRecord rec;
    rec.x0 = st.tasks[i].x0;
    rec.goal_params = st.tasks[i].goal_params;
    rec.states = st.to_trajs[i].states;
    rec.controls = st.to_trajs[i].controls;
    trajs.push_back(std::move(rec));
  }
  write_dataset(out_dir + "/dataset.bin", config, trajs);
  return out;
}

EvalOutputs run_evaluation(const RunConfig& config, const policy::MlpParams& params) {
  const auto nominal = make_model(config);
  const auto rollout_model = make_rollout_model(config, config.disturbance);
  const auto tasks = sample_initial_conditions(config, config.eval_rollouts, kEvalDrawTag);
  const auto zeroed = ddp::ResidualSchedule{};

  EvalOutputs out;
  std::vector<double> costs;
  std::vector<ddp::Trajectory> baselines;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto cp = make_cost(config, tasks[i].x_goal);
    const auto baseline = ddp::solve_ddp(tasks[i].x0, *nominal, cp, config.horizon, zeroed,
                                         config.ddp_settings);
    baselines.push_back(baseline.trajectory);

    const std::uint64_t rollout_seed =
        seed_mix({config.seed, static_cast<std::uint64_t>(i), kEvalRolloutTag});
    Rng rng(rollout_seed);
    const auto rr = eval::rollout(params, *rollout_model, tasks[i].x0, tasks[i].goal_params,
                                  cp, config.horizon, config.disturbance, rng,
                                  config.blowup_norm);
    RolloutRecord rec;
    rec.seed = rollout_seed;
    rec.cost = rr.cost;
    rec.baseline_cost = baseline.cost;
    rec.task_error = eval::task_error(rr, tasks[i].x_goal, *rollout_model);
    rec.diverged = rr.diverged;
    out.records.push_back(rec);
    costs.push_back(rr.cost);
    out.baseline_max = std::max(out.baseline_max, baseline.cost);
  }
  out.percentiles = eval::cost_percentile(costs, out.baseline_max, config.cap_multiplier);

  // Local smoothness probes on states spread over the baseline trajectories.
  const std::size_t total = baselines.size() * static_cast<std::size_t>(config.horizon + 1);
  const std::size_t want = std::min<std::size_t>(config.lipschitz_states, total);
  for (std::size_t j = 0; j < want; ++j) {
    const std::size_t flat = j * total / want;
    const std::size_t traj_idx = flat / (config.horizon + 1);
    const std::size_t t = flat % (config.horizon + 1);
    const PolicyInput z =
        policy::make_input(baselines[traj_idx].states[t], tasks[traj_idx].goal_params);
    Rng rng(seed_mix({config.seed, static_cast<std::uint64_t>(j), kLipschitzTag}));
    out.lipschitz_estimates.push_back(
        eval::empirical_lipschitz(params, z, config.lipschitz_epsilon,
                                  config.lipschitz_samples, rng)
            .estimate);
  }
  return out;
}

void write_eval_outputs(const std::string& out_dir, const RunConfig& config,
                        const EvalOutputs& outputs) {
  fs::create_directories(out_dir);
  std::string rollouts = csv_head(config, "seed,cost,baseline_cost,task_error,diverged");
  for (const auto& r : outputs.records) {
    rollouts += std::to_string(r.seed) + "," + format_double(r.cost) + "," +
                format_double(r.baseline_cost) + "," + format_double(r.task_error) + "," +
                (r.diverged ? "1" : "0") + "\n";
  }
  atomic_write(out_dir + "/rollouts.csv", rollouts);

  std::string percentiles = csv_head(config, "percentile,cost,capped");
  for (std::size_t i = 0; i < outputs.percentiles.values.size(); ++i) {
    percentiles += format_double(outputs.percentiles.percentiles[i]) + "," +
                   format_double(outputs.percentiles.values[i]) + "," +
                   (outputs.percentiles.capped[i] ? "1" : "0") + "\n";
  }
  atomic_write(out_dir + "/percentiles.csv", percentiles);

  std::string lipschitz = csv_head(config, "index,estimate");
  for (std::size_t i = 0; i < outputs.lipschitz_estimates.size(); ++i) {
    lipschitz +=
        std::to_string(i) + "," + format_double(outputs.lipschitz_estimates[i]) + "\n";
  }
  atomic_write(out_dir + "/lipschitz.csv", lipschitz);
}

void eval_command(const RunConfig& config, const std::string& checkpoint_path,
                  const std::string& out_dir, const std::vector<double>& eps_sweep) {
  if (eps_sweep.empty()) {
    const Checkpoint ckpt = read_checkpoint(checkpoint_path);
    check_checkpoint_compatible(ckpt, config);
    const EvalOutputs outputs = run_evaluation(config, ckpt.params);
    write_eval_outputs(out_dir, config, outputs);
    return;
  }

  // Sweep mode: retrain and evaluate per perturbation bound.
  std::string summary = csv_head(
      config, "epsilon,mean_cost,mean_task_error,diverged,median_lipschitz");
  for (double eps : eps_sweep) {
    RunConfig swept = config;
    swept.perturbation.epsilon = eps;
    swept.perturbation.sigma = 0.5 * eps;
    const auto model = make_model(swept);
    const auto problem = make_problem(swept, model.get());
    const auto tasks =
        sample_initial_conditions(swept, swept.trajectories, kTrainDrawTag);
    const auto result = admm::run_admm(problem, tasks);
    const EvalOutputs outputs = run_evaluation(swept, result.best_params);
    const std::string sub = out_dir + "/eps_" + format_double(eps);
    write_eval_outputs(sub, swept, outputs);
    write_checkpoint(sub + "/checkpoint_final.bin", swept, result.best_params,
                     static_cast<int>(result.history.size()), 0.0);

    double cost_sum = 0.0, err_sum = 0.0;
    int diverged = 0;
    for (const auto& r : outputs.records) {
      cost_sum += std::min(r.cost, outputs.percentiles.cap);
      err_sum += r.task_error;
      diverged += r.diverged ? 1 : 0;
    }
    std::vector<double> lips = outputs.lipschitz_estimates;
    std::sort(lips.begin(), lips.end());
    const double median = lips.empty() ? 0.0 : lips[lips.size() / 2];
    const double m = static_cast<double>(outputs.records.size());
    summary += format_double(eps) + "," + format_double(cost_sum / m) + "," +
               format_double(err_sum / m) + "," + std::to_string(diverged) + "," +
               format_double(median) + "\n";
  }
  fs::create_directories(out_dir);
  atomic_write(out_dir + "/eps_sweep.csv", summary);
}

void gen_init_command(const RunConfig& config, const std::string& out_path) {
  const auto tasks =
      sample_initial_conditions(config, config.trajectories, kTrainDrawTag);
  write_init_file(out_path, config, tasks);
}

void report_command(const std::string& out_path, const std::vector<std::string>& inputs) {
  if (inputs.empty()) throw ConfigError("report: no input files");
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> columns;
  std::vector<std::string> percentile_col;
  for (const auto& path : inputs) {
    std::istringstream in(read_file(path));
    std::string line;
    std::vector<std::string> values;
    std::vector<std::string> percentiles;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("percentile", 0) == 0) continue;
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      if (c1 == std::string::npos) throw ConfigError("report: malformed row in " + path);
      percentiles.push_back(line.substr(0, c1));
      values.push_back(line.substr(c1 + 1, c2 == std::string::npos ? c2 : c2 - c1 - 1));
    }
    if (percentile_col.empty()) {
      percentile_col = percentiles;
    } else if (percentile_col.size() != percentiles.size()) {
      throw ConfigError("report: percentile row counts differ across inputs");
    }
    names.push_back(fs::path(path).parent_path().filename().string() + "/" +
                    fs::path(path).stem().string());
    columns.push_back(std::move(values));
  }
  std::string out = "percentile";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  for (std::size_t r = 0; r < percentile_col.size(); ++r) {
    out += percentile_col[r];
    for (const auto& col : columns) out += "," + col[r];
    out += "\n";
  }
  atomic_write(out_path, out);
}

}  // namespace arpl::io
