#include "arpl/costs.hpp"

#include "arpl/errors.hpp"

namespace arpl::costs {
namespace {

void check_psd(const Matrix& m, const char* name) {
  if (m.rows() != m.cols()) {
    throw ConfigError(std::string("cost weights: ") + name + " must be square");
  }
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw ConfigError(std::string("cost weights: ") + name + " must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale) {
    throw ConfigError(std::string("cost weights: ") + name + " must be positive semidefinite");
  }
}

void check_shapes(const State& x, const Control& u, const QuadraticCostParams& cp,
                  const AdmmResidualTerms& ar) {
  if (x.size() != cp.state_dim() || u.size() != cp.control_dim()) {
    throw ConfigError("running_cost: state/control dimension mismatch with weights");
  }
  if (ar.rho_x != 0.0 || ar.rho_u != 0.0) {
    if (ar.x_pl.size() != x.size() || ar.lambda_x.size() != x.size() ||
        ar.u_pl.size() != u.size() || ar.lambda_u.size() != u.size()) {
      throw ConfigError("running_cost: residual term dimension mismatch");
    }
  }
}

}  // namespace

QuadraticCostParams::QuadraticCostParams(Matrix Q, Matrix R, State x_goal, Matrix Qf)
    : Q_(std::move(Q)), R_(std::move(R)), Qf_(std::move(Qf)), x_goal_(std::move(x_goal)) {
  check_psd(Q_, "Q");
  check_psd(R_, "R");
  check_psd(Qf_, "Qf");
  if (Qf_.rows() != Q_.rows() || x_goal_.size() != Q_.rows()) {
    throw ConfigError("cost weights: Q, Qf and x_goal dimensions must agree");
  }
}

AdmmResidualTerms AdmmResidualTerms::zeroed(int state_dim, int control_dim) {
  AdmmResidualTerms ar;
  ar.x_pl = State::Zero(state_dim);
  ar.u_pl = Control::Zero(control_dim);
  ar.lambda_x = State::Zero(state_dim);
  ar.lambda_u = Control::Zero(control_dim);
  return ar;
}

RunningCostResult running_cost(const State& x, const Control& u,
                               const QuadraticCostParams& cp, const AdmmResidualTerms& ar) {
  check_shapes(x, u, cp, ar);
  const int dx = cp.state_dim();
  const int du = cp.control_dim();

  RunningCostResult out;
  const Vector xhat = x - cp.x_goal();
  out.value = xhat.dot(cp.Q() * xhat) + u.dot(cp.R() * u);
  out.grad_x = 2.0 * cp.Q() * xhat;
  out.grad_u = 2.0 * cp.R() * u;
  out.hess_xx = 2.0 * cp.Q();
  out.hess_uu = 2.0 * cp.R();
  out.hess_ux = Matrix::Zero(du, dx);

  if (ar.rho_x != 0.0) {
    const Vector rx = x - ar.x_pl + ar.lambda_x;
    out.value += 0.5 * ar.rho_x * rx.squaredNorm();
    out.grad_x += ar.rho_x * rx;
    out.hess_xx += ar.rho_x * Matrix::Identity(dx, dx);
  }
  if (ar.rho_u != 0.0) {
    const Vector ru = u - ar.u_pl + ar.lambda_u;
    out.value += 0.5 * ar.rho_u * ru.squaredNorm();
    out.grad_u += ar.rho_u * ru;
    out.hess_uu += ar.rho_u * Matrix::Identity(du, du);
  }
  return out;
}

TerminalCostResult terminal_cost(const State& x, const QuadraticCostParams& cp) {
  if (x.size() != cp.state_dim()) {
    throw ConfigError("terminal_cost: state dimension mismatch with weights");
  }
  TerminalCostResult out;
  const Vector xhat = x - cp.x_goal();
  out.value = xhat.dot(cp.Qf() * xhat);
  out.grad_x = 2.0 * cp.Qf() * xhat;
  out.hess_xx = 2.0 * cp.Qf();
  return out;
}

TerminalCostResult state_residual(const State& x, const AdmmResidualTerms& ar) {
  TerminalCostResult out;
  out.grad_x = Vector::Zero(x.size());
  out.hess_xx = Matrix::Zero(x.size(), x.size());
  if (ar.rho_x != 0.0) {
    const Vector rx = x - ar.x_pl + ar.lambda_x;
    out.value = 0.5 * ar.rho_x * rx.squaredNorm();
    out.grad_x = ar.rho_x * rx;
    out.hess_xx = ar.rho_x * Matrix::Identity(x.size(), x.size());
  }
  return out;
}

}  // namespace arpl::costs
