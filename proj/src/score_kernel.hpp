#pragma once

// Shared per-cluster algebra for the weighted estimating functions.
//
// Every estimating function here has the per-cluster form
//   u_i = X_i' S A S^{-1} r_i,   S = diag(sqrt(mu)),  r = delta - F * mu,
// with A = Q^{-1}/phi for GEE and A = M_s for a QIF basis block. With
// Ã = S A S^{-1} (so Ã_mn = A_mn sqrt(mu_m / mu_n)) the Jacobian is
//   du/dbeta = 1/2 X' diag(Ã r) X - 1/2 X' Ã diag(r) X - X' Ã diag(F mu) X.

#include <Eigen/Core>

namespace ptcure::detail {

struct ClusterBlock {
  Eigen::Ref<const Eigen::MatrixXd> x;
  Eigen::Ref<const Eigen::VectorXd> mu;
  Eigen::Ref<const Eigen::VectorXd> f;
  Eigen::Ref<const Eigen::VectorXd> delta;
};

inline Eigen::VectorXd residual(const ClusterBlock& c) {
  return (c.delta.array() - c.f.array() * c.mu.array()).matrix();
}

inline Eigen::MatrixXd scaled_weight(const ClusterBlock& c, const Eigen::MatrixXd& a) {
  const Eigen::ArrayXd s = c.mu.array().sqrt();
  return (s.matrix().asDiagonal() * a * s.inverse().matrix().asDiagonal());
}

inline Eigen::VectorXd weighted_score(const ClusterBlock& c, const Eigen::MatrixXd& a) {
  return c.x.transpose() * (scaled_weight(c, a) * residual(c));
}

inline Eigen::MatrixXd weighted_jacobian(const ClusterBlock& c, const Eigen::MatrixXd& a) {
  const Eigen::MatrixXd at = scaled_weight(c, a);
  const Eigen::VectorXd r = residual(c);
  const Eigen::VectorXd atr = at * r;
  const Eigen::VectorXd fmu = (c.f.array() * c.mu.array()).matrix();
  Eigen::MatrixXd jac = 0.5 * c.x.transpose() * atr.asDiagonal() * c.x;
  jac.noalias() -= c.x.transpose() * at * (0.5 * r + fmu).asDiagonal() * c.x;
  return jac;
}

}  // namespace ptcure::detail
