#pragma once

#include "arpl/common.hpp"

namespace arpl::costs {

// Quadratic tracking weights. Q, R, Qf are validated as symmetric PSD at
// construction time.
class QuadraticCostParams {
 public:
  QuadraticCostParams(Matrix Q, Matrix R, State x_goal, Matrix Qf);

  const Matrix& Q() const { return Q_; }
  const Matrix& R() const { return R_; }
  const Matrix& Qf() const { return Qf_; }
  const State& x_goal() const { return x_goal_; }

  int state_dim() const { return static_cast<int>(Q_.rows()); }
  int control_dim() const { return static_cast<int>(R_.rows()); }

 private:
  Matrix Q_, R_, Qf_;
  State x_goal_;
};

// Consensus residual terms for one trajectory point. With rho = 0 the cost
// reduces exactly to the plain tracking cost; zeroed(...) builds that case,
// which is also how the first ADMM iteration is realized.
struct AdmmResidualTerms {
  double rho_x = 0.0;
  double rho_u = 0.0;
  State x_pl;
  Control u_pl;
  State lambda_x;
  Control lambda_u;

  static AdmmResidualTerms zeroed(int state_dim, int control_dim);
};

struct RunningCostResult {
  double value = 0.0;
  Vector grad_x, grad_u;
  Matrix hess_xx, hess_uu, hess_ux;
};

struct TerminalCostResult {
  double value = 0.0;
  Vector grad_x;
  Matrix hess_xx;
};

// l(x,u) = (x-xg)'Q(x-xg) + u'Ru + rho_x/2 |x - x_pl + lambda_x|^2
//                                + rho_u/2 |u - u_pl + lambda_u|^2
// with exact analytic derivatives.
RunningCostResult running_cost(const State& x, const Control& u,
                               const QuadraticCostParams& cp, const AdmmResidualTerms& ar);

// lf(x) = (x-xg)'Qf(x-xg).
TerminalCostResult terminal_cost(const State& x, const QuadraticCostParams& cp);

// rho/2 |x - x_pl + lambda|^2 on a state alone; used to extend the terminal
// step with its consensus residual.
TerminalCostResult state_residual(const State& x, const AdmmResidualTerms& ar);

}  // namespace arpl::costs
