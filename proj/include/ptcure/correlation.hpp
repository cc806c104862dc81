#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <string_view>

namespace ptcure {

enum class CorrelationFamily { Independence, Exchangeable, Ar1 };

std::string to_string(CorrelationFamily family);
CorrelationFamily parse_family(std::string_view name);

/// Working correlation Q(rho) up to a dispersion phi.
///
/// Independence carries no rho and phi = 1. For Exchangeable the matrix is
/// positive definite when -1/(n-1) < rho < 1; for AR(1) when |rho| < 1.
class WorkingCorrelation {
 public:
  static WorkingCorrelation independence();
  static WorkingCorrelation exchangeable(double rho, double phi = 1.0);
  static WorkingCorrelation ar1(double rho, double phi = 1.0);
  static WorkingCorrelation make(CorrelationFamily family, double rho, double phi);

  CorrelationFamily family() const noexcept { return family_; }
  std::optional<double> rho() const noexcept { return rho_; }
  double phi() const noexcept { return phi_; }

  /// Q(rho) for a cluster of size n.
  Eigen::MatrixXd matrix(Eigen::Index n) const;
  /// Q(rho)^{-1} in closed form (exchangeable: rank-one update, AR(1): tridiagonal).
  Eigen::MatrixXd inverse(Eigen::Index n) const;
  bool positive_definite_for(Eigen::Index n) const;

 private:
  WorkingCorrelation(CorrelationFamily family, std::optional<double> rho, double phi);

  CorrelationFamily family_ = CorrelationFamily::Independence;
  std::optional<double> rho_;
  double phi_ = 1.0;
};

}  // namespace ptcure
