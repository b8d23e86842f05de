// Test-only oracles: independent implementations used to derive expected
// values. Nothing here may call into the code path it is checking.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "arpl/common.hpp"

namespace oracles {

using arpl::Matrix;
using arpl::Vector;

// Fine-step RK4 integration of dx/dt = f(x) over one interval of length dt,
// subdivided into `substeps` pieces.
inline Vector fine_rk4(const std::function<Vector(const Vector&)>& f, Vector x, double dt,
                       int substeps) {
  const double h = dt / substeps;
  for (int s = 0; s < substeps; ++s) {
    const Vector k1 = f(x);
    const Vector k2 = f(x + 0.5 * h * k1);
    const Vector k3 = f(x + 0.5 * h * k2);
    const Vector k4 = f(x + h * k3);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

// Central finite difference gradient of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-6) {
  Vector g(x.size());
  Vector xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + step;
    xm[i] = x[i] - step;
    g[i] = (f(xp) - f(xm)) / (2.0 * step);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return g;
}

// Central finite difference Jacobian of a vector function.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x,
                          double h = 1e-6) {
  const Vector f0 = f(x);
  Matrix jac(f0.size(), x.size());
  Vector xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + step;
    xm[i] = x[i] - step;
    jac.col(i) = (f(xp) - f(xm)) / (2.0 * step);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return jac;
}

// Richardson-extrapolated central-difference Jacobian: evaluates at h and
// h/2 and cancels the leading error term.
inline Matrix richardson_jacobian(const std::function<Vector(const Vector&)>& f,
                                  const Vector& x, double h = 1e-4) {
  const Matrix coarse = fd_jacobian(f, x, h);
  const Matrix fine = fd_jacobian(f, x, 0.5 * h);
  return fine + (fine - coarse) / 3.0;
}

// Finite-horizon LQR with affine cost terms, solved by an exact backward
// recursion on V_t(x) = x'P x + p'x + const. Running cost
//   x'Qt x + qt'x + u'Rt u + rt'u
// per step (time-varying), terminal x'Pf x + pf'x, dynamics x' = Ax + Bu.
struct AffineLqr {
  Matrix A, B;
  std::vector<Matrix> Qt, Rt;  // per step
  std::vector<Vector> qt, rt;
  Matrix Pf;
  Vector pf;

  struct Solution {
    std::vector<Vector> controls;
    std::vector<Vector> states;
  };

  Solution solve(const Vector& x0) const {
    const int T = static_cast<int>(Qt.size());
    std::vector<Matrix> K(T);
    std::vector<Vector> k(T);
    Matrix P = Pf;
    Vector p = pf;
    for (int t = T - 1; t >= 0; --t) {
      const Matrix H = Rt[t] + B.transpose() * P * B;
      const auto Hinv = H.ldlt();
      K[t] = Hinv.solve(B.transpose() * P * A);
      k[t] = Hinv.solve(0.5 * (rt[t] + B.transpose() * p));
      const Matrix Acl = A - B * K[t];
      const Matrix Pn = Qt[t] + K[t].transpose() * Rt[t] * K[t] + Acl.transpose() * P * Acl;
      const Vector pn = qt[t] + 2.0 * K[t].transpose() * Rt[t] * k[t] -
                        K[t].transpose() * rt[t] -
                        2.0 * Acl.transpose() * P * B * k[t] + Acl.transpose() * p;
      P = 0.5 * (Pn + Pn.transpose());
      p = pn;
    }
    Solution sol;
    sol.states.push_back(x0);
    for (int t = 0; t < T; ++t) {
      sol.controls.push_back(-K[t] * sol.states.back() - k[t]);
      sol.states.push_back(A * sol.states.back() + B * sol.controls.back());
    }
    return sol;
  }
};

// Golden-section search for the minimum of a 1-d function on [lo, hi].
inline double golden_min(const std::function<double(double)>& f, double lo, double hi,
                         double tol = 1e-12) {
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - gr * (b - a);
  double d = a + gr * (b - a);
  while (b - a > tol) {
    if (f(c) < f(d)) {
      b = d;
    } else {
      a = c;
    }
    c = b - gr * (b - a);
    d = a + gr * (b - a);
  }
  return 0.5 * (a + b);
}

// Planar chain forward kinematics, coded independently of the envs module:
// joint angles relative, zero configuration along +x.
inline Eigen::Vector2d chain_end_effector(const std::vector<double>& lengths,
                                          const Vector& q) {
  double angle = 0.0;
  Eigen::Vector2d p(0.0, 0.0);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    angle += q[i];
    p.x() += lengths[i] * std::cos(angle);
    p.y() += lengths[i] * std::sin(angle);
  }
  return p;
}

// Potential energy of the uniform-rod chain, for gravity-vector checks by
// finite differences.
inline double chain_potential(const std::vector<double>& masses,
                              const std::vector<double>& lengths, double gravity,
                              const Vector& q) {
  double angle = 0.0;
  double y_joint = 0.0;
  double v = 0.0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    angle += q[i];
    const double y_com = y_joint + 0.5 * lengths[i] * std::sin(angle);
    v += masses[i] * gravity * y_com;
    y_joint += lengths[i] * std::sin(angle);
  }
  return v;
}

}  // namespace oracles
