#include "arpl/policy.hpp"

#include <cmath>

#include "arpl/errors.hpp"
#include "arpl/rng.hpp"

namespace arpl::policy {
namespace {

void check_input(const MlpParams& params, const PolicyInput& z) {
  if (z.size() != params.input_dim()) {
    throw ConfigError("policy: input dimension mismatch");
  }
}

inline double tanh_d1(double t) { return 1.0 - t * t; }          // from t = tanh(a)
inline double tanh_d2(double t) { return -2.0 * t * (1.0 - t * t); }

void resize_layers(std::vector<Vector>& v, const MlpParams& p) {
  v.resize(p.layer_count());
  for (int l = 0; l < p.layer_count(); ++l) v[l].resize(p.layer_dims[l + 1]);
}

}  // namespace

std::size_t MlpParams::param_count() const {
  std::size_t n = 0;
  for (int l = 0; l < layer_count(); ++l) {
    n += static_cast<std::size_t>(weights[l].size()) + biases[l].size();
  }
  return n;
}

void MlpParams::validate() const {
  if (layer_dims.size() < 2) throw ConfigError("policy: need at least input and output dims");
  if (weights.size() + 1 != layer_dims.size() || biases.size() != weights.size()) {
    throw ConfigError("policy: layer count mismatch");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (layer_dims[l] < 1 || layer_dims[l + 1] < 1 ||
        weights[l].rows() != layer_dims[l + 1] || weights[l].cols() != layer_dims[l] ||
        biases[l].size() != layer_dims[l + 1]) {
      throw ConfigError("policy: weight shape inconsistent with layer dims");
    }
    if (!all_finite(weights[l]) || !all_finite(biases[l])) {
      throw ConfigError("policy: non-finite parameters");
    }
  }
}

Vector MlpParams::flatten() const {
  Vector flat(param_count());
  Eigen::Index at = 0;
  for (int l = 0; l < layer_count(); ++l) {
    flat.segment(at, weights[l].size()) =
        Eigen::Map<const Vector>(weights[l].data(), weights[l].size());
    at += weights[l].size();
    flat.segment(at, biases[l].size()) = biases[l];
    at += biases[l].size();
  }
  return flat;
}

MlpParams MlpParams::from_flat(const std::vector<int>& layer_dims, Activation activation,
                               const Vector& flat) {
  MlpParams p;
  p.layer_dims = layer_dims;
  p.activation = activation;
  Eigen::Index at = 0;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const Eigen::Index rows = layer_dims[l + 1];
    const Eigen::Index cols = layer_dims[l];
    if (at + rows * cols + rows > flat.size()) {
      throw ConfigError("policy: flat parameter vector too short for layer dims");
    }
    p.weights.emplace_back(Eigen::Map<const Matrix>(flat.data() + at, rows, cols));
    at += rows * cols;
    p.biases.emplace_back(flat.segment(at, rows));
    at += rows;
  }
  if (at != flat.size()) {
    throw ConfigError("policy: flat parameter vector length mismatch");
  }
  p.validate();
  return p;
}

void MlpParams::add_scaled(const MlpParams& other, double factor) {
  for (int l = 0; l < layer_count(); ++l) {
    weights[l] += factor * other.weights[l];
    biases[l] += factor * other.biases[l];
  }
}

void MlpParams::scale(double factor) {
  for (int l = 0; l < layer_count(); ++l) {
    weights[l] *= factor;
    biases[l] *= factor;
  }
}

MlpGrad MlpGrad::zeros_like(const MlpParams& params) {
  MlpGrad g;
  g.weights.reserve(params.layer_count());
  g.biases.reserve(params.layer_count());
  for (int l = 0; l < params.layer_count(); ++l) {
    g.weights.emplace_back(Matrix::Zero(params.weights[l].rows(), params.weights[l].cols()));
    g.biases.emplace_back(Vector::Zero(params.biases[l].size()));
  }
  return g;
}

void MlpGrad::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

void MlpGrad::add_scaled(const MlpGrad& other, double factor) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += factor * other.weights[l];
    biases[l] += factor * other.biases[l];
  }
}

void MlpGrad::scale(double factor) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] *= factor;
    biases[l] *= factor;
  }
}

double MlpGrad::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weights) s += w.squaredNorm();
  for (const auto& b : biases) s += b.squaredNorm();
  return s;
}

Vector MlpGrad::flatten() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  Vector flat(n);
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.segment(at, weights[l].size()) =
        Eigen::Map<const Vector>(weights[l].data(), weights[l].size());
    at += weights[l].size();
    flat.segment(at, biases[l].size()) = biases[l];
    at += biases[l].size();
  }
  return flat;
}

Control forward(const MlpParams& params, const PolicyInput& z, Scratch& scratch) {
  check_input(params, z);
  const int L = params.layer_count();
  resize_layers(scratch.pre, params);
  resize_layers(scratch.post, params);
  const Vector* h = &z;
  for (int l = 0; l < L; ++l) {
    scratch.pre[l].noalias() = params.weights[l] * (*h);
    scratch.pre[l] += params.biases[l];
    if (l + 1 < L) {
      scratch.post[l] = scratch.pre[l].array().tanh();
    } else {
      scratch.post[l] = scratch.pre[l];
    }
    h = &scratch.post[l];
  }
  return scratch.post.back();
}

Control forward(const MlpParams& params, const PolicyInput& z) {
  Scratch scratch;
  return forward(params, z, scratch);
}

void backprop(const MlpParams& params, const PolicyInput& z, const Vector& upstream,
              MlpGrad* grad, Vector* grad_z, Scratch& scratch) {
  const int L = params.layer_count();
  forward(params, z, scratch);

  // Cotangent on the pre-activation of the current layer; output is linear.
  Vector cot = upstream;
  for (int l = L - 1; l >= 0; --l) {
    const Vector& below = (l == 0) ? z : scratch.post[l - 1];
    if (grad != nullptr) {
      grad->weights[l].noalias() += cot * below.transpose();
      grad->biases[l] += cot;
    }
    if (l == 0) {
      if (grad_z != nullptr) grad_z->noalias() = params.weights[0].transpose() * cot;
    } else {
      Vector down = params.weights[l].transpose() * cot;
      cot = down.cwiseProduct(
          scratch.post[l - 1].unaryExpr([](double t) { return tanh_d1(t); }));
    }
  }
}

MlpGrad grad_params(const MlpParams& params, const PolicyInput& z, const Vector& upstream) {
  MlpGrad g = MlpGrad::zeros_like(params);
  Scratch scratch;
  backprop(params, z, upstream, &g, nullptr, scratch);
  return g;
}

PolicyInput grad_input(const MlpParams& params, const PolicyInput& z, const Vector& upstream) {
  Vector gz(params.input_dim());
  Scratch scratch;
  backprop(params, z, upstream, nullptr, &gz, scratch);
  return gz;
}

Vector jvp(const MlpParams& params, const PolicyInput& z, const Vector& tangent) {
  check_input(params, z);
  const int L = params.layer_count();
  Scratch scratch;
  forward(params, z, scratch);
  Vector tan = tangent;
  for (int l = 0; l < L; ++l) {
    Vector pre_tan = params.weights[l] * tan;
    if (l + 1 < L) {
      tan = pre_tan.cwiseProduct(
          scratch.post[l].unaryExpr([](double t) { return tanh_d1(t); }));
    } else {
      tan = pre_tan;
    }
  }
  return tan;
}

void second_order_vjp(const MlpParams& params, const PolicyInput& z, const Vector& upstream,
                      const Vector& v, SecondOrderVjp& out, Scratch& scratch) {
  check_input(params, z);
  const int L = params.layer_count();

  // Dual-number forward pass at z along direction v.
  forward(params, z, scratch);
  resize_layers(scratch.pre_tan, params);
  resize_layers(scratch.post_tan, params);
  const Vector* tan = &v;
  for (int l = 0; l < L; ++l) {
    scratch.pre_tan[l].noalias() = params.weights[l] * (*tan);
    if (l + 1 < L) {
      scratch.post_tan[l] = scratch.pre_tan[l].cwiseProduct(
          scratch.post[l].unaryExpr([](double t) { return tanh_d1(t); }));
    } else {
      scratch.post_tan[l] = scratch.pre_tan[l];
    }
    tan = &scratch.post_tan[l];
  }
  out.output_tangent = scratch.post_tan.back();

  if (out.wrt_params.weights.empty()) out.wrt_params = MlpGrad::zeros_like(params);
  out.wrt_params.set_zero();

  // Reverse pass over the (value, tangent) graph for s = <upstream, tangent out>.
  Vector cot_pre = Vector::Zero(params.layer_dims[L]);
  Vector cot_pre_tan = upstream;
  for (int l = L - 1; l >= 0; --l) {
    const Vector& below = (l == 0) ? z : scratch.post[l - 1];
    const Vector& below_tan = (l == 0) ? v : scratch.post_tan[l - 1];
    out.wrt_params.weights[l].noalias() += cot_pre * below.transpose();
    out.wrt_params.weights[l].noalias() += cot_pre_tan * below_tan.transpose();
    out.wrt_params.biases[l] += cot_pre;

    Vector cot_h = params.weights[l].transpose() * cot_pre;
    Vector cot_h_tan = params.weights[l].transpose() * cot_pre_tan;
    if (l == 0) {
      out.wrt_input = cot_h;
      break;
    }
    // h = tanh(a), h_tan = tanh'(a) .* a_tan; pull cotangents below the
    // activation, picking up the curvature term from the tangent path.
    const Vector& t = scratch.post[l - 1];
    const Vector& a_tan = scratch.pre_tan[l - 1];
    cot_pre = cot_h.cwiseProduct(t.unaryExpr([](double ti) { return tanh_d1(ti); }));
    cot_pre += cot_h_tan.cwiseProduct(a_tan).cwiseProduct(
        t.unaryExpr([](double ti) { return tanh_d2(ti); }));
    cot_pre_tan = cot_h_tan.cwiseProduct(t.unaryExpr([](double ti) { return tanh_d1(ti); }));
  }
}

SecondOrderVjp second_order_vjp(const MlpParams& params, const PolicyInput& z,
                                const Vector& upstream, const Vector& v) {
  SecondOrderVjp out;
  Scratch scratch;
  second_order_vjp(params, z, upstream, v, out, scratch);
  return out;
}

MlpParams init(const std::vector<int>& layer_dims, std::uint64_t seed, Activation activation) {
  if (layer_dims.size() < 2) {
    throw ConfigError("policy init: need at least input and output dims");
  }
  MlpParams p;
  p.layer_dims = layer_dims;
  p.activation = activation;
  Rng rng(seed_mix({seed, 0x706f6c696379ull}));
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const int rows = layer_dims[l + 1];
    const int cols = layer_dims[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    Matrix w(rows, cols);
    for (int j = 0; j < cols; ++j) {
      for (int i = 0; i < rows; ++i) w(i, j) = rng.uniform(-bound, bound);
    }
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(Vector::Zero(rows));
  }
  p.validate();
  return p;
}

}  // namespace arpl::policy
