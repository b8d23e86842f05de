#pragma once

#include <memory>
#include <vector>

#include "arpl/common.hpp"

namespace arpl::envs {

// One-step discrete dynamics x' = f(x, u). Deterministic given (x, u, params).
class DynamicsModel {
 public:
  virtual ~DynamicsModel() = default;

  virtual int state_dim() const = 0;
  virtual int control_dim() const = 0;

  // Advances one time step. Throws DynamicsError if the result is non-finite.
  virtual State step(const State& x, const Control& u) const = 0;

  // Jacobians of the one-step map. Default: central finite differences with
  // per-coordinate step fd_step * max(1, |value|); models with closed-form
  // derivatives override.
  virtual void jacobians(const State& x, const Control& u, Matrix& fx, Matrix& fu) const;

  // Total mechanical energy at x; 0 for models without one.
  virtual double energy(const State& x) const { return 0.0; }

  double fd_step = 1e-5;
};

struct CartPoleParams {
  double cart_mass = 1.0;    // kg
  double pole_mass = 0.1;    // kg
  double pole_length = 0.5;  // m, pivot to point mass
  double gravity = 9.81;     // m/s^2
  double dt = 0.01;          // s

  void validate() const;  // throws ConfigError on non-positive entries
};

// Frictionless cart with a point-mass pole on a massless rod.
// State [cart position, cart velocity, pole angle, pole angular velocity];
// the angle is measured from upright, so (0,0,pi,0) hangs down.
// Control [horizontal force on the cart]. Integrated with fixed-step RK4.
class CartPole : public DynamicsModel {
 public:
  explicit CartPole(const CartPoleParams& params);

  int state_dim() const override { return 4; }
  int control_dim() const override { return 1; }
  State step(const State& x, const Control& u) const override;
  double energy(const State& x) const override;

  // Continuous-time state derivative (closed-form accelerations).
  State derivative(const State& x, const Control& u) const;

  const CartPoleParams& params() const { return params_; }

 private:
  CartPoleParams params_;
};

struct PlanarArmParams {
  int n_links = 2;  // 2 or 3
  std::vector<double> link_masses;   // kg
  std::vector<double> link_lengths;  // m
  double gravity = 9.81;             // m/s^2
  double dt = 0.01;                  // s

  void validate() const;
};

// Planar serial chain of uniform thin rods with a revolute joint at each
// link, actuated by joint torques. State [q, qdot] with joint angles relative
// to the previous link; q = 0 points the arm along +x, gravity acts along -y.
// Dynamics M(q) qddot + C(q, qdot) qdot + g(q) = tau assembled from
// center-of-mass Jacobians, integrated with fixed-step RK4.
class PlanarArm : public DynamicsModel {
 public:
  explicit PlanarArm(const PlanarArmParams& params);

  int state_dim() const override { return 2 * params_.n_links; }
  int control_dim() const override { return params_.n_links; }
  State step(const State& x, const Control& u) const override;
  double energy(const State& x) const override;

  State derivative(const State& x, const Control& u) const;

  Matrix mass_matrix(const Vector& q) const;
  // Coriolis/centrifugal plus gravity generalized forces.
  Vector bias_forces(const Vector& q, const Vector& qdot) const;
  Vector gravity_torque(const Vector& q) const;

  // Planar position of the end effector (tip of the last link).
  Eigen::Vector2d end_effector(const Vector& q) const;

  const PlanarArmParams& params() const { return params_; }

 private:
  PlanarArmParams params_;
};

// x' = A x + B u with exact Jacobians. Test and diagnostic model.
class LinearModel : public DynamicsModel {
 public:
  LinearModel(Matrix A, Matrix B);

  int state_dim() const override { return static_cast<int>(A_.rows()); }
  int control_dim() const override { return static_cast<int>(B_.cols()); }
  State step(const State& x, const Control& u) const override;
  void jacobians(const State& x, const Control& u, Matrix& fx, Matrix& fu) const override;

  const Matrix& A() const { return A_; }
  const Matrix& B() const { return B_; }

 private:
  Matrix A_, B_;
};

// New params with every mass reduced by delta_mass. Throws ConfigError if a
// resulting mass would be non-positive.
CartPoleParams mass_scaled(const CartPoleParams& params, double delta_mass);
PlanarArmParams mass_scaled(const PlanarArmParams& params, double delta_mass);

}  // namespace arpl::envs
