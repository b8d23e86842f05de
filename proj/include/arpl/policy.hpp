#pragma once

#include <cstdint>
#include <vector>

#include "arpl/common.hpp"

namespace arpl::policy {

// Smooth (C-infinity) activations only: the Stackelberg gradient
// differentiates through recorded input-gradient computations, which needs
// well-defined second derivatives everywhere.
enum class Activation { Tanh };

// Fully connected policy network: layer_dims = [d_z, hidden..., d_u], tanh
// hidden layers, linear output. Weights act as w * h + b with w of shape
// (fan_out x fan_in).
struct MlpParams {
  std::vector<int> layer_dims;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Activation activation = Activation::Tanh;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  int layer_count() const { return static_cast<int>(weights.size()); }
  std::size_t param_count() const;

  void validate() const;  // dimension chain and finiteness

  // Flat layout: per layer, weight matrix in column-major order, then bias.
  Vector flatten() const;
  static MlpParams from_flat(const std::vector<int>& layer_dims, Activation activation,
                             const Vector& flat);

  void add_scaled(const MlpParams& other, double factor);  // this += factor*other
  void scale(double factor);
};

// Gradient (or any co-shaped accumulator) over all weights and biases.
struct MlpGrad {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static MlpGrad zeros_like(const MlpParams& params);
  void set_zero();
  void add_scaled(const MlpGrad& other, double factor);
  void scale(double factor);
  double squared_norm() const;
  Vector flatten() const;
};

// Reusable per-layer buffers for the differentiation routines.
struct Scratch {
  std::vector<Vector> pre;       // pre-activations a_l
  std::vector<Vector> post;      // h_l = tanh(a_l), post.back() is the output
  std::vector<Vector> pre_tan;   // tangents of pre-activations
  std::vector<Vector> post_tan;  // tangents of h_l
};

Control forward(const MlpParams& params, const PolicyInput& z);
Control forward(const MlpParams& params, const PolicyInput& z, Scratch& scratch);

// Reverse-mode gradient of <upstream, forward(params, z)> over all
// weights/biases (accumulated into grad) and, when grad_z is non-null, over z.
void backprop(const MlpParams& params, const PolicyInput& z, const Vector& upstream,
              MlpGrad* grad, Vector* grad_z, Scratch& scratch);

MlpGrad grad_params(const MlpParams& params, const PolicyInput& z, const Vector& upstream);
PolicyInput grad_input(const MlpParams& params, const PolicyInput& z, const Vector& upstream);

// Forward-mode directional derivative: d/dt forward(params, z + t*tangent).
Vector jvp(const MlpParams& params, const PolicyInput& z, const Vector& tangent);

struct SecondOrderVjp {
  MlpGrad wrt_params;
  Vector wrt_input;
  Vector output_tangent;  // J_pi(z) * v, reusable by callers
};

// Mixed second derivatives of s(params, z) = <upstream, J_pi(z) * v> with
// upstream and v held constant: exactly the contraction needed to
// differentiate a recorded input-gradient step with respect to the
// parameters. Realized by reverse mode over the dual-number forward pass.
SecondOrderVjp second_order_vjp(const MlpParams& params, const PolicyInput& z,
                                const Vector& upstream, const Vector& v);
void second_order_vjp(const MlpParams& params, const PolicyInput& z, const Vector& upstream,
                      const Vector& v, SecondOrderVjp& out, Scratch& scratch);

// Fan-in-scaled uniform weights in +-1/sqrt(fan_in), zero biases.
// Reproducible per seed.
MlpParams init(const std::vector<int>& layer_dims, std::uint64_t seed,
               Activation activation = Activation::Tanh);

// Policy input convention: state with goal parameters appended.
inline PolicyInput make_input(const State& x, const Vector& goal_params) {
  PolicyInput z(x.size() + goal_params.size());
  z.head(x.size()) = x;
  if (goal_params.size() > 0) z.tail(goal_params.size()) = goal_params;
  return z;
}

}  // namespace arpl::policy
