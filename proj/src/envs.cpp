#include "arpl/envs.hpp"

#include <cmath>

#include "arpl/errors.hpp"

namespace arpl::envs {
namespace {

// Classic RK4 with fixed step dt.
template <typename Deriv>
State rk4_step(const Deriv& f, const State& x, double dt) {
  const State k1 = f(x);
  const State k2 = f(x + 0.5 * dt * k1);
  const State k3 = f(x + 0.5 * dt * k2);
  const State k4 = f(x + dt * k3);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

void check_finite_result(const State& x, const char* model) {
  if (!all_finite(x)) {
    throw DynamicsError(std::string(model) + ": integration produced a non-finite state");
  }
}

}  // namespace

void DynamicsModel::jacobians(const State& x, const Control& u, Matrix& fx, Matrix& fu) const {
  const int dx = state_dim();
  const int du = control_dim();
  fx.resize(dx, dx);
  fu.resize(dx, du);
  State xp = x, xm = x;
  for (int j = 0; j < dx; ++j) {
    const double h = fd_step * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    fx.col(j) = (step(xp, u) - step(xm, u)) / (2.0 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  Control up = u, um = u;
  for (int j = 0; j < du; ++j) {
    const double h = fd_step * std::max(1.0, std::abs(u[j]));
    up[j] = u[j] + h;
    um[j] = u[j] - h;
    fu.col(j) = (step(x, up) - step(x, um)) / (2.0 * h);
    up[j] = u[j];
    um[j] = u[j];
  }
}

void CartPoleParams::validate() const {
  if (cart_mass <= 0.0 || pole_mass <= 0.0 || pole_length <= 0.0 || dt <= 0.0) {
    throw ConfigError("cart-pole params: masses, length and dt must be positive");
  }
}

CartPole::CartPole(const CartPoleParams& params) : params_(params) { params_.validate(); }

State CartPole::derivative(const State& x, const Control& u) const {
  const double mc = params_.cart_mass;
  const double mp = params_.pole_mass;
  const double l = params_.pole_length;
  const double g = params_.gravity;
  const double force = u[0];

  const double vel = x[1];
  const double theta = x[2];
  const double omega = x[3];
  const double s = std::sin(theta);
  const double c = std::cos(theta);

  // Lagrangian equations of the frictionless cart + point-mass pole:
  //   (mc+mp) a + mp l w' c - mp l w^2 s = F
  //   a c + l w' = g s
  const double denom = mc + mp * s * s;
  const double accel = (force + mp * l * omega * omega * s - mp * g * s * c) / denom;
  const double omega_dot =
      ((mc + mp) * g * s - c * (force + mp * l * omega * omega * s)) / (l * denom);

  State dx(4);
  dx << vel, accel, omega, omega_dot;
  return dx;
}

State CartPole::step(const State& x, const Control& u) const {
  const State next =
      rk4_step([&](const State& s) { return derivative(s, u); }, x, params_.dt);
  check_finite_result(next, "cart-pole");
  return next;
}

double CartPole::energy(const State& x) const {
  const double mc = params_.cart_mass;
  const double mp = params_.pole_mass;
  const double l = params_.pole_length;
  const double vel = x[1];
  const double theta = x[2];
  const double omega = x[3];
  const double kinetic = 0.5 * (mc + mp) * vel * vel +
                         mp * l * vel * omega * std::cos(theta) +
                         0.5 * mp * l * l * omega * omega;
  const double potential = mp * params_.gravity * l * std::cos(theta);
  return kinetic + potential;
}

void PlanarArmParams::validate() const {
  if (n_links != 2 && n_links != 3) {
    throw ConfigError("planar arm params: n_links must be 2 or 3");
  }
  if (static_cast<int>(link_masses.size()) != n_links ||
      static_cast<int>(link_lengths.size()) != n_links) {
    throw ConfigError("planar arm params: list lengths must equal n_links");
  }
  for (double m : link_masses) {
    if (m <= 0.0) throw ConfigError("planar arm params: link masses must be positive");
  }
  for (double l : link_lengths) {
    if (l <= 0.0) throw ConfigError("planar arm params: link lengths must be positive");
  }
  if (dt <= 0.0) throw ConfigError("planar arm params: dt must be positive");
}

PlanarArm::PlanarArm(const PlanarArmParams& params) : params_(params) { params_.validate(); }

namespace {

// Per-link kinematics shared by the mass matrix, bias and energy terms.
// Absolute link angles phi_i = sum of joint angles up to i; link direction
// e(phi) = (cos, sin); tangent e'(phi) = (-sin, cos).
struct ArmKinematics {
  int n;
  std::vector<double> phi, cphi, sphi;
  std::vector<Eigen::Vector2d> com;  // link centers of mass
  std::vector<Matrix> jac;           // 2 x n CoM Jacobians

  ArmKinematics(const PlanarArmParams& p, const Vector& q) : n(p.n_links) {
    phi.resize(n);
    cphi.resize(n);
    sphi.resize(n);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += q[i];
      phi[i] = acc;
      cphi[i] = std::cos(acc);
      sphi[i] = std::sin(acc);
    }
    com.resize(n);
    jac.assign(n, Matrix::Zero(2, n));
    Eigen::Vector2d joint(0.0, 0.0);
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d dir(cphi[i], sphi[i]);
      com[i] = joint + 0.5 * p.link_lengths[i] * dir;
      // d(com_i)/dq_a: every joint at or before link i rotates part of the chain.
      for (int a = 0; a <= i; ++a) {
        Eigen::Vector2d col(0.0, 0.0);
        for (int j = a; j < i; ++j) {
          col += p.link_lengths[j] * Eigen::Vector2d(-sphi[j], cphi[j]);
        }
        col += 0.5 * p.link_lengths[i] * Eigen::Vector2d(-sphi[i], cphi[i]);
        jac[i].col(a) = col;
      }
      joint += p.link_lengths[i] * dir;
    }
  }
};

double rod_inertia(double mass, double length) { return mass * length * length / 12.0; }

}  // namespace

Matrix PlanarArm::mass_matrix(const Vector& q) const {
  const int n = params_.n_links;
  const ArmKinematics kin(params_, q);
  Matrix m = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    m += params_.link_masses[i] * kin.jac[i].transpose() * kin.jac[i];
    // Angular Jacobian of link i is [1,...,1,0,...] (first i+1 entries).
    const double inertia = rod_inertia(params_.link_masses[i], params_.link_lengths[i]);
    m.topLeftCorner(i + 1, i + 1).array() += inertia;
  }
  return m;
}

Vector PlanarArm::gravity_torque(const Vector& q) const {
  const int n = params_.n_links;
  const ArmKinematics kin(params_, q);
  Vector g = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    // dV/dq with V = sum_i m_i g y_com_i; the y-row of the CoM Jacobian.
    g += params_.link_masses[i] * params_.gravity * kin.jac[i].row(1).transpose();
  }
  return g;
}

Vector PlanarArm::bias_forces(const Vector& q, const Vector& qdot) const {
  const int n = params_.n_links;
  const ArmKinematics kin(params_, q);
  Vector phidot(n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += qdot[i];
    phidot[i] = acc;
  }
  Vector bias = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    // CoM acceleration at zero joint acceleration: pure centripetal terms.
    Eigen::Vector2d accel(0.0, 0.0);
    for (int j = 0; j < i; ++j) {
      accel -= params_.link_lengths[j] * phidot[j] * phidot[j] *
               Eigen::Vector2d(kin.cphi[j], kin.sphi[j]);
    }
    accel -= 0.5 * params_.link_lengths[i] * phidot[i] * phidot[i] *
             Eigen::Vector2d(kin.cphi[i], kin.sphi[i]);
    bias += params_.link_masses[i] * kin.jac[i].transpose() * accel;
  }
  // The angular Jacobian is constant, so rotation adds no convective term.
  return bias + gravity_torque(q);
}

State PlanarArm::derivative(const State& x, const Control& u) const {
  const int n = params_.n_links;
  const Vector q = x.head(n);
  const Vector qdot = x.tail(n);
  const Matrix m = mass_matrix(q);
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) {
    throw DynamicsError("planar arm: mass matrix is not positive definite");
  }
  const Vector qddot = llt.solve(u - bias_forces(q, qdot));
  State dx(2 * n);
  dx.head(n) = qdot;
  dx.tail(n) = qddot;
  return dx;
}

State PlanarArm::step(const State& x, const Control& u) const {
  const State next =
      rk4_step([&](const State& s) { return derivative(s, u); }, x, params_.dt);
  check_finite_result(next, "planar arm");
  return next;
}

double PlanarArm::energy(const State& x) const {
  const int n = params_.n_links;
  const Vector q = x.head(n);
  const Vector qdot = x.tail(n);
  const ArmKinematics kin(params_, q);
  double potential = 0.0;
  for (int i = 0; i < n; ++i) {
    potential += params_.link_masses[i] * params_.gravity * kin.com[i].y();
  }
  const double kinetic = 0.5 * qdot.dot(mass_matrix(q) * qdot);
  return kinetic + potential;
}

Eigen::Vector2d PlanarArm::end_effector(const Vector& q) const {
  Eigen::Vector2d p(0.0, 0.0);
  double phi = 0.0;
  for (int i = 0; i < params_.n_links; ++i) {
    phi += q[i];
    p += params_.link_lengths[i] * Eigen::Vector2d(std::cos(phi), std::sin(phi));
  }
  return p;
}

LinearModel::LinearModel(Matrix A, Matrix B) : A_(std::move(A)), B_(std::move(B)) {
  if (A_.rows() != A_.cols() || B_.rows() != A_.rows()) {
    throw ConfigError("linear model: A must be square and B row-compatible");
  }
}

State LinearModel::step(const State& x, const Control& u) const {
  const State next = A_ * x + B_ * u;
  check_finite_result(next, "linear model");
  return next;
}

void LinearModel::jacobians(const State&, const Control&, Matrix& fx, Matrix& fu) const {
  fx = A_;
  fu = B_;
}

CartPoleParams mass_scaled(const CartPoleParams& params, double delta_mass) {
  CartPoleParams out = params;
  out.cart_mass -= delta_mass;
  out.pole_mass -= delta_mass;
  if (out.cart_mass <= 0.0 || out.pole_mass <= 0.0) {
    throw ConfigError("mass_scaled: resulting cart-pole mass would be non-positive");
  }
  return out;
}

PlanarArmParams mass_scaled(const PlanarArmParams& params, double delta_mass) {
  PlanarArmParams out = params;
  for (double& m : out.link_masses) {
    m -= delta_mass;
    if (m <= 0.0) {
      throw ConfigError("mass_scaled: resulting link mass would be non-positive");
    }
  }
  return out;
}

}  // namespace arpl::envs
