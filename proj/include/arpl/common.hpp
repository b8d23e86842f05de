#pragma once

#include <Eigen/Dense>

namespace arpl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Domain aliases. State holds joint positions and velocities, Control holds
// forces/torques, PolicyInput is state plus appended goal parameters.
using State = Vector;
using Control = Vector;
using PolicyInput = Vector;

inline bool all_finite(const Vector& v) { return v.allFinite(); }
inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace arpl
