#include "ptcure/correlation.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <stdexcept>

namespace ptcure {

std::string to_string(CorrelationFamily family) {
  switch (family) {
    case CorrelationFamily::Independence: return "independence";
    case CorrelationFamily::Exchangeable: return "exchangeable";
    case CorrelationFamily::Ar1: return "ar1";
  }
  return "unknown";
}

CorrelationFamily parse_family(std::string_view name) {
  if (name == "independence" || name == "independent" || name == "ind") return CorrelationFamily::Independence;
  if (name == "exchangeable" || name == "exch") return CorrelationFamily::Exchangeable;
  if (name == "ar1" || name == "AR1" || name == "ar(1)") return CorrelationFamily::Ar1;
  throw std::invalid_argument("unknown correlation family '" + std::string(name) + "'");
}

WorkingCorrelation::WorkingCorrelation(CorrelationFamily family, std::optional<double> rho, double phi)
    : family_(family), rho_(rho), phi_(phi) {
  if (!(phi > 0.0) || !std::isfinite(phi)) throw std::invalid_argument("dispersion phi must be positive");
  if (rho && !(*rho > -1.0 && *rho < 1.0)) throw std::invalid_argument("rho must lie in (-1, 1)");
}

WorkingCorrelation WorkingCorrelation::independence() {
  return WorkingCorrelation(CorrelationFamily::Independence, std::nullopt, 1.0);
}

WorkingCorrelation WorkingCorrelation::exchangeable(double rho, double phi) {
  return WorkingCorrelation(CorrelationFamily::Exchangeable, rho, phi);
}

WorkingCorrelation WorkingCorrelation::ar1(double rho, double phi) {
  return WorkingCorrelation(CorrelationFamily::Ar1, rho, phi);
}

WorkingCorrelation WorkingCorrelation::make(CorrelationFamily family, double rho, double phi) {
  switch (family) {
    case CorrelationFamily::Independence: return independence();
    case CorrelationFamily::Exchangeable: return exchangeable(rho, phi);
    case CorrelationFamily::Ar1: return ar1(rho, phi);
  }
  throw std::invalid_argument("unknown correlation family");
}

Eigen::MatrixXd WorkingCorrelation::matrix(Eigen::Index n) const {
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(n, n);
  if (family_ == CorrelationFamily::Independence) return q;
  const double r = *rho_;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = 0; k < n; ++k) {
      if (j == k) continue;
      q(j, k) = family_ == CorrelationFamily::Exchangeable
                    ? r
                    : std::pow(r, static_cast<double>(std::abs(j - k)));
    }
  }
  return q;
}

bool WorkingCorrelation::positive_definite_for(Eigen::Index n) const {
  if (family_ == CorrelationFamily::Independence || n <= 1) return true;
  const double r = *rho_;
  if (family_ == CorrelationFamily::Exchangeable) {
    return r < 1.0 && r > -1.0 / static_cast<double>(n - 1);
  }
  return std::abs(r) < 1.0;
}

Eigen::MatrixXd WorkingCorrelation::inverse(Eigen::Index n) const {
  if (family_ == CorrelationFamily::Independence || n == 1) return Eigen::MatrixXd::Identity(n, n);
  if (!positive_definite_for(n)) {
    throw std::domain_error("working correlation is not positive definite for cluster size " + std::to_string(n));
  }
  const double r = *rho_;
  if (family_ == CorrelationFamily::Exchangeable) {
    // ((1-r) I + r J)^{-1} = (I - r / (1 + (n-1) r) J) / (1 - r)
    const double denom = 1.0 + static_cast<double>(n - 1) * r;
    if (std::abs(denom) > 1e-12 && std::abs(1.0 - r) > 1e-12) {
      Eigen::MatrixXd inv = Eigen::MatrixXd::Constant(n, n, -r / denom);
      inv.diagonal().array() += 1.0;
      return inv / (1.0 - r);
    }
  } else {
    const double s = 1.0 - r * r;
    if (s > 1e-12) {
      Eigen::MatrixXd inv = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index j = 0; j < n; ++j) {
        inv(j, j) = (j == 0 || j == n - 1) ? 1.0 : 1.0 + r * r;
        if (j + 1 < n) inv(j, j + 1) = inv(j + 1, j) = -r;
      }
      return inv / s;
    }
  }
  // Near the boundary of the admissible range fall back to a dense factorization.
  const Eigen::MatrixXd q = matrix(n);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(q);
  if (ldlt.info() != Eigen::Success) throw std::domain_error("working correlation factorization failed");
  return ldlt.solve(Eigen::MatrixXd::Identity(n, n));
}

}  // namespace ptcure
