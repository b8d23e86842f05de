#include "arpl/advreg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "arpl/errors.hpp"
#include "arpl/parallel.hpp"

namespace arpl::advreg {
namespace {

constexpr std::uint64_t kTapeTag = 0x74617065;
constexpr std::uint64_t kGaussTag = 0x67617573;
constexpr std::uint64_t kShuffleTag = 0x73687566;
constexpr std::size_t kChunk = 16;

// Zero pattern for perturbations restricted to the state components.
Vector perturbation_mask(const PerturbationConfig& cfg, Eigen::Index dz) {
  Vector mask = Vector::Ones(dz);
  if (cfg.perturb_state_only) {
    if (cfg.state_dim < 1 || cfg.state_dim > dz) {
      throw ConfigError("perturbation config: state_dim out of range for masked mode");
    }
    mask.tail(dz - cfg.state_dim).setZero();
  }
  return mask;
}

struct SampleWork {
  policy::Scratch scratch;
  policy::SecondOrderVjp sovjp;
};

// grad_delta r(z, W, delta) = J(z+delta)' * 2(pi(z+delta) - pi(z)).
Vector inner_gradient(const policy::MlpParams& params, const PolicyInput& z,
                      const Vector& delta, SampleWork& work) {
  const Vector base = policy::forward(params, z, work.scratch);
  const Vector y = z + delta;
  const Vector shifted = policy::forward(params, y, work.scratch);
  Vector grad(z.size());
  policy::backprop(params, y, 2.0 * (shifted - base), nullptr, &grad, work.scratch);
  return grad;
}

Vector apply_projection_jacobian(const TapeStep& step, double epsilon, const Vector& lam) {
  if (!step.projected) return lam;
  const double norm = step.candidate.norm();
  const Vector unit = step.candidate / norm;
  return (epsilon / norm) * (lam - unit * unit.dot(lam));
}

// Accumulator for one chunk of samples.
struct ChunkAcc {
  policy::MlpGrad grad;
  double bc_raw = 0.0;
  double reg_raw = 0.0;
};

void add_bc_term(const policy::MlpParams& params, const PolicyInput& z, const Control& target,
                 double weight, ChunkAcc& acc, SampleWork& work) {
  const Vector pred = policy::forward(params, z, work.scratch);
  const Vector diff = pred - target;
  acc.bc_raw += diff.squaredNorm();
  policy::backprop(params, z, 2.0 * weight * diff, &acc.grad, nullptr, work.scratch);
}

// Leader term: d r(z, W, delta)/dW with delta constant. Returns r.
double add_leader_term(const policy::MlpParams& params, const PolicyInput& z,
                       const Vector& delta, double weight, ChunkAcc& acc, SampleWork& work) {
  const Vector base = policy::forward(params, z, work.scratch);
  const Vector y = z + delta;
  const Vector shifted = policy::forward(params, y, work.scratch);
  const Vector d = base - shifted;
  if (weight != 0.0) {
    policy::backprop(params, z, 2.0 * weight * d, &acc.grad, nullptr, work.scratch);
    policy::backprop(params, y, -2.0 * weight * d, &acc.grad, nullptr, work.scratch);
  }
  return d.squaredNorm();
}

// Leader-follower interaction: alpha * (dr/d delta^K) * (d delta^K / dW),
// reverse-accumulated through the recorded ascent steps.
void add_interaction_term(const policy::MlpParams& params, const PolicyInput& z,
                          const PerturbationTape& tape, const PerturbationConfig& cfg,
                          const Vector& mask, double weight, ChunkAcc& acc,
                          SampleWork& work) {
  const int K = static_cast<int>(tape.steps.size());
  if (K == 0 || weight == 0.0) return;

  const Vector base = policy::forward(params, z, work.scratch);

  // Cotangent on delta^K: dr/d delta at the final perturbation.
  Vector lam(z.size());
  {
    const Vector y = z + tape.final_delta();
    const Vector shifted = policy::forward(params, y, work.scratch);
    policy::backprop(params, y, 2.0 * (shifted - base), nullptr, &lam, work.scratch);
  }

  for (int k = K; k >= 1; --k) {
    const TapeStep& step = tape.steps[k - 1];
    Vector lam_c = apply_projection_jacobian(step, cfg.epsilon, lam);
    // The ascent direction was masked, so only the masked components of the
    // cotangent flow into this step's update.
    const Vector dir = cfg.perturb_state_only ? lam_c.cwiseProduct(mask).eval() : lam_c;

    const Vector y = z + tape.deltas[k - 1];
    const Vector shifted = policy::forward(params, y, work.scratch);
    const Vector c_r = 2.0 * (shifted - base);

    // s = <c_r, J(y) dir>: second derivatives with c_r frozen, then the
    // c_r-dependence terms via its own Jacobians.
    policy::second_order_vjp(params, y, c_r, dir, work.sovjp, work.scratch);
    const Vector& tangent = work.sovjp.output_tangent;  // J(y) * dir

    const double scale = weight * cfg.eta_delta;
    acc.grad.add_scaled(work.sovjp.wrt_params, scale);
    policy::backprop(params, y, (2.0 * scale) * tangent, &acc.grad, nullptr, work.scratch);
    policy::backprop(params, z, (-2.0 * scale) * tangent, &acc.grad, nullptr, work.scratch);

    // Pull the cotangent back to delta^{k-1}.
    Vector j_t(z.size());
    policy::backprop(params, y, 2.0 * tangent, nullptr, &j_t, work.scratch);
    lam = lam_c + cfg.eta_delta * (work.sovjp.wrt_input + j_t);
  }
  // lam now sits on delta^0, which does not depend on W.
}

GradientResult gradient_from_tapes(const Dataset& dataset, const policy::MlpParams& params,
                                   const PerturbationConfig& cfg,
                                   const std::vector<PerturbationTape>& tapes,
                                   bool interaction, bool leader) {
  if (dataset.samples.empty()) throw ConfigError("policy gradient: empty batch");
  if (tapes.size() != dataset.samples.size()) {
    throw ConfigError("policy gradient: tape count does not match batch");
  }
  const double n = dataset.normalizer();
  const Vector mask = perturbation_mask(cfg, dataset.samples.front().input.size());

  ChunkAcc total;
  total.grad = policy::MlpGrad::zeros_like(params);
  chunked_reduce(
      dataset.samples.size(), kChunk, total,
      [&](std::size_t lo, std::size_t hi, ChunkAcc& acc) {
        acc.grad = policy::MlpGrad::zeros_like(params);
        SampleWork work;
        for (std::size_t i = lo; i < hi; ++i) {
          const Sample& s = dataset.samples[i];
          if (leader) add_bc_term(params, s.input, s.target, 1.0 / n, acc, work);
          const double reg_weight = leader ? cfg.alpha / n : 0.0;
          acc.reg_raw +=
              add_leader_term(params, s.input, tapes[i].final_delta(), reg_weight, acc, work);
          if (interaction) {
            add_interaction_term(params, s.input, tapes[i], cfg, mask, cfg.alpha / n, acc,
                                 work);
          }
        }
      },
      [](ChunkAcc& into, const ChunkAcc& part) {
        if (into.grad.weights.empty()) {
          into.grad = part.grad;
        } else {
          into.grad.add_scaled(part.grad, 1.0);
        }
        into.bc_raw += part.bc_raw;
        into.reg_raw += part.reg_raw;
      });

  GradientResult out;
  out.grad = std::move(total.grad);
  out.bc_value = total.bc_raw / n;
  out.reg_value = total.reg_raw / n;
  return out;
}

}  // namespace

void PerturbationConfig::validate() const {
  if (epsilon < 0.0 || sigma < 0.0 || inner_steps < 0 || alpha < 0.0) {
    throw ConfigError("perturbation config: epsilon, sigma, K and alpha must be nonnegative");
  }
  if (eta_delta <= 0.0 || eta_w <= 0.0) {
    throw ConfigError("perturbation config: step sizes must be positive");
  }
}

double discrepancy(const PolicyInput& z, const policy::MlpParams& params, const Vector& delta) {
  if (delta.size() != z.size()) throw ConfigError("discrepancy: delta dimension mismatch");
  return (policy::forward(params, z) - policy::forward(params, z + delta)).squaredNorm();
}

Vector project_ball(const Vector& delta, double epsilon) {
  if (epsilon < 0.0) throw ConfigError("project_ball: epsilon must be nonnegative");
  const double norm = delta.norm();
  if (norm <= epsilon) return delta;
  if (norm == 0.0) return delta;
  return delta * (epsilon / norm);
}

PerturbationTape inner_maximize(const PolicyInput& z, const policy::MlpParams& params,
                                const PerturbationConfig& cfg, Rng& rng) {
  cfg.validate();
  const Eigen::Index dz = z.size();
  const Vector mask = perturbation_mask(cfg, dz);

  PerturbationTape tape;
  Vector delta = rng.normal_vector(dz, cfg.sigma);
  if (cfg.perturb_state_only) delta = delta.cwiseProduct(mask);
  tape.deltas.push_back(delta);

  SampleWork work;
  for (int k = 1; k <= cfg.inner_steps; ++k) {
    Vector grad = inner_gradient(params, z, delta, work);
    if (cfg.perturb_state_only) grad = grad.cwiseProduct(mask);
    TapeStep step;
    step.gradient = grad;
    step.candidate = delta + cfg.eta_delta * grad;
    step.projected = step.candidate.norm() > cfg.epsilon;
    delta = step.projected ? Vector(step.candidate * (cfg.epsilon / step.candidate.norm()))
                           : step.candidate;
    tape.steps.push_back(std::move(step));
    tape.deltas.push_back(delta);
  }
  return tape;
}

double bc_loss(const Dataset& dataset, const policy::MlpParams& params) {
  if (dataset.samples.empty()) throw ConfigError("bc_loss: empty batch");
  double raw = 0.0;
  chunked_reduce(
      dataset.samples.size(), 4 * kChunk, raw,
      [&](std::size_t lo, std::size_t hi, double& acc) {
        policy::Scratch scratch;
        for (std::size_t i = lo; i < hi; ++i) {
          const Sample& s = dataset.samples[i];
          acc += (policy::forward(params, s.input, scratch) - s.target).squaredNorm();
        }
      },
      [](double& into, double part) { into += part; });
  return raw / dataset.normalizer();
}

Dataset gaussian_baseline_batch(const Dataset& dataset, double sigma_g, Rng& rng) {
  if (sigma_g < 0.0) throw ConfigError("gaussian baseline: sigma must be nonnegative");
  Dataset out = dataset;
  for (Sample& s : out.samples) {
    s.input += rng.normal_vector(s.input.size(), sigma_g);
  }
  return out;
}

std::vector<PerturbationTape> make_tapes(const Dataset& dataset,
                                         const policy::MlpParams& params,
                                         const PerturbationConfig& cfg, std::uint64_t seed) {
  std::vector<PerturbationTape> tapes(dataset.samples.size());
  parallel_for(dataset.samples.size(), [&](std::size_t i) {
    Rng rng(seed_mix({seed, static_cast<std::uint64_t>(i), kTapeTag}));
    tapes[i] = inner_maximize(dataset.samples[i].input, params, cfg, rng);
  });
  return tapes;
}

GradientResult ar_gradient_from_tapes(const Dataset& dataset, const policy::MlpParams& params,
                                      const PerturbationConfig& cfg,
                                      const std::vector<PerturbationTape>& tapes) {
  return gradient_from_tapes(dataset, params, cfg, tapes, /*interaction=*/false,
                             /*leader=*/true);
}

GradientResult sar_gradient_from_tapes(const Dataset& dataset, const policy::MlpParams& params,
                                       const PerturbationConfig& cfg,
                                       const std::vector<PerturbationTape>& tapes,
                                       bool interaction_only) {
  return gradient_from_tapes(dataset, params, cfg, tapes, /*interaction=*/true,
                             /*leader=*/!interaction_only);
}

GradientResult ar_policy_gradient(const Dataset& dataset, const policy::MlpParams& params,
                                  const PerturbationConfig& cfg, std::uint64_t seed) {
  return ar_gradient_from_tapes(dataset, params, cfg, make_tapes(dataset, params, cfg, seed));
}

GradientResult sar_policy_gradient(const Dataset& dataset, const policy::MlpParams& params,
                                   const PerturbationConfig& cfg, std::uint64_t seed) {
  return sar_gradient_from_tapes(dataset, params, cfg, make_tapes(dataset, params, cfg, seed));
}

void TrainSettings::validate() const {
  if (epochs < 0 || batch_size < 1) {
    throw ConfigError("train settings: epochs must be >= 0 and batch size >= 1");
  }
  if (learning_rate < 0.0 || weight_decay < 0.0 || grad_clip_norm < 0.0 ||
      gaussian_sigma < 0.0) {
    throw ConfigError("train settings: rates and norms must be nonnegative");
  }
}

namespace {

struct AdamW {
  policy::MlpGrad m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamW(const policy::MlpParams& params)
      : m(policy::MlpGrad::zeros_like(params)), v(policy::MlpGrad::zeros_like(params)) {}

  void update(policy::MlpParams& params, const policy::MlpGrad& grad, double lr, double wd) {
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (int l = 0; l < params.layer_count(); ++l) {
      m.weights[l] = beta1 * m.weights[l] + (1.0 - beta1) * grad.weights[l];
      v.weights[l].array() =
          beta2 * v.weights[l].array() + (1.0 - beta2) * grad.weights[l].array().square();
      params.weights[l].array() -=
          lr * ((m.weights[l].array() / bc1) / ((v.weights[l].array() / bc2).sqrt() + eps) +
                wd * params.weights[l].array());
      m.biases[l] = beta1 * m.biases[l] + (1.0 - beta1) * grad.biases[l];
      v.biases[l].array() =
          beta2 * v.biases[l].array() + (1.0 - beta2) * grad.biases[l].array().square();
      params.biases[l].array() -=
          lr * ((m.biases[l].array() / bc1) / ((v.biases[l].array() / bc2).sqrt() + eps) +
                wd * params.biases[l].array());
    }
  }
};

bool grad_finite(const policy::MlpGrad& g) {
  for (const auto& w : g.weights) {
    if (!all_finite(w)) return false;
  }
  for (const auto& b : g.biases) {
    if (!all_finite(b)) return false;
  }
  return true;
}

}  // namespace

TrainResult train_policy(const Dataset& dataset, const policy::MlpParams& w0,
                         const PerturbationConfig& cfg, const TrainSettings& settings) {
  settings.validate();
  cfg.validate();
  if (dataset.samples.empty()) throw ConfigError("train_policy: empty dataset");

  TrainResult result;
  result.params = w0;
  if (settings.epochs == 0) {
    result.final_bc = bc_loss(dataset, w0);
    return result;
  }

  const std::size_t total = dataset.samples.size();
  const double n = dataset.normalizer();
  const double lr = settings.learning_rate > 0.0 ? settings.learning_rate : cfg.eta_w;
  const Vector mask = perturbation_mask(cfg, dataset.samples.front().input.size());

  policy::MlpParams w = w0;
  policy::MlpParams last_good = w0;
  AdamW opt(w);

  // Uniform average of the per-epoch snapshots over the last quarter.
  const int avg_window = settings.epochs - (3 * settings.epochs) / 4;
  const int avg_from = settings.epochs - avg_window + 1;
  policy::MlpParams avg = w0;
  avg.scale(0.0);
  int avg_count = 0;

  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= settings.epochs && !result.diverged; ++epoch) {
    {
      Rng shuffle_rng(seed_mix({settings.seed, static_cast<std::uint64_t>(epoch), kShuffleTag}));
      for (std::size_t i = total - 1; i > 0; --i) {
        const std::size_t j = shuffle_rng.next_u64() % (i + 1);
        std::swap(order[i], order[j]);
      }
    }

    double bc_raw = 0.0, reg_raw = 0.0, norm_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < total && !result.diverged;
         start += settings.batch_size) {
      const std::size_t bsz = std::min<std::size_t>(settings.batch_size, total - start);
      // Per-sample weight making the minibatch an unbiased estimate of the
      // full-dataset gradient under the configured normalization.
      const double sample_weight = static_cast<double>(total) / (n * static_cast<double>(bsz));

      ChunkAcc batch;
      batch.grad = policy::MlpGrad::zeros_like(w);
      chunked_reduce(
          bsz, kChunk, batch,
          [&](std::size_t lo, std::size_t hi, ChunkAcc& acc) {
            acc.grad = policy::MlpGrad::zeros_like(w);
            SampleWork work;
            for (std::size_t b = lo; b < hi; ++b) {
              const int idx = order[start + b];
              const Sample& s = dataset.samples[idx];
              switch (settings.kind) {
                case Regularizer::None:
                  add_bc_term(w, s.input, s.target, sample_weight, acc, work);
                  break;
                case Regularizer::Gaussian: {
                  Rng rng(seed_mix({settings.seed, static_cast<std::uint64_t>(epoch),
                                    static_cast<std::uint64_t>(idx), kGaussTag}));
                  const Vector noisy =
                      s.input + rng.normal_vector(s.input.size(), settings.gaussian_sigma);
                  add_bc_term(w, noisy, s.target, sample_weight, acc, work);
                  break;
                }
                case Regularizer::Ar:
                case Regularizer::Sar: {
                  add_bc_term(w, s.input, s.target, sample_weight, acc, work);
                  Rng rng(seed_mix({settings.seed, static_cast<std::uint64_t>(epoch),
                                    static_cast<std::uint64_t>(idx), kTapeTag}));
                  const PerturbationTape tape = inner_maximize(s.input, w, cfg, rng);
                  acc.reg_raw += add_leader_term(w, s.input, tape.final_delta(),
                                                 cfg.alpha * sample_weight, acc, work);
                  if (settings.kind == Regularizer::Sar) {
                    add_interaction_term(w, s.input, tape, cfg, mask,
                                         cfg.alpha * sample_weight, acc, work);
                  }
                  break;
                }
              }
            }
          },
          [](ChunkAcc& into, const ChunkAcc& part) {
            if (into.grad.weights.empty()) {
              into.grad = part.grad;
            } else {
              into.grad.add_scaled(part.grad, 1.0);
            }
            into.bc_raw += part.bc_raw;
            into.reg_raw += part.reg_raw;
          });

      if (!std::isfinite(batch.bc_raw) || !std::isfinite(batch.reg_raw) ||
          !grad_finite(batch.grad)) {
        result.diverged = true;
        break;
      }

      const double gnorm = std::sqrt(batch.grad.squared_norm());
      norm_sum += gnorm;
      ++batches;
      if (settings.grad_clip_norm > 0.0 && gnorm > settings.grad_clip_norm) {
        batch.grad.scale(settings.grad_clip_norm / gnorm);
      }
      last_good = w;
      opt.update(w, batch.grad, lr, settings.weight_decay);
      bool params_ok = true;
      for (const auto& wl : w.weights) params_ok = params_ok && all_finite(wl);
      for (const auto& bl : w.biases) params_ok = params_ok && all_finite(bl);
      if (!params_ok) {
        w = last_good;
        result.diverged = true;
        break;
      }
      bc_raw += batch.bc_raw;
      reg_raw += batch.reg_raw;
    }

    if (result.diverged) break;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.bc = bc_raw / n;
    rec.reg = reg_raw / n;
    rec.grad_norm = batches > 0 ? norm_sum / batches : 0.0;
    result.history.push_back(rec);

    if (epoch >= avg_from) {
      avg.add_scaled(w, 1.0);
      ++avg_count;
    }
  }

  if (result.diverged) {
    result.params = w;
    result.final_bc = bc_loss(dataset, w);
  } else {
    avg.scale(1.0 / static_cast<double>(avg_count));
    result.params = avg;
    result.final_bc = bc_loss(dataset, result.params);
  }
  return result;
}

}  // namespace arpl::advreg
