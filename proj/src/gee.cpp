#include "ptcure/gee.hpp"

#include "ptcure/error.hpp"
#include "score_kernel.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ptcure {

namespace {

detail::ClusterBlock block(const ClusteredDataset& ds, const Eigen::VectorXd& mu, const Eigen::VectorXd& f,
                           std::size_t i) {
  const auto b = ds.cluster_begin(i);
  const auto n = ds.cluster_size(i);
  return {ds.design().middleRows(b, n), mu.segment(b, n), f.segment(b, n), ds.events().segment(b, n)};
}

// Q^{-1}/phi for one cluster size, memoized across clusters of equal size.
class WeightCache {
 public:
  explicit WeightCache(const WorkingCorrelation& corr) : corr_(corr) {}

  const Eigen::MatrixXd& get(Eigen::Index n) {
    if (static_cast<std::size_t>(n) >= cache_.size()) cache_.resize(static_cast<std::size_t>(n) + 1);
    auto& slot = cache_[static_cast<std::size_t>(n)];
    if (slot.size() == 0) {
      try {
        slot = corr_.inverse(n) / corr_.phi();
      } catch (const std::domain_error& e) {
        throw SingularMatrixError(e.what());
      }
    }
    return slot;
  }

 private:
  const WorkingCorrelation& corr_;
  std::vector<Eigen::MatrixXd> cache_;
};

}  // namespace

ClusterWork cluster_work(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                         std::size_t cluster) {
  dataset.require_valid();
  const auto b = dataset.cluster_begin(cluster);
  const auto n = dataset.cluster_size(cluster);
  ClusterWork w;
  w.mu_vec = mu_vector(beta, dataset).segment(b, n);
  w.b_diag = w.mu_vec;
  w.w_diag.resize(n);
  w.kappa.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    w.w_diag(j) = baseline(dataset.times()(b + j));
    const double d = dataset.events()(b + j);
    w.kappa(j) = d == 0.0 ? 0.0 : d / w.w_diag(j);
  }
  w.residual = (dataset.events().segment(b, n).array() - w.w_diag.array() * w.mu_vec.array()).matrix();
  return w;
}

Eigen::VectorXd score_independent(const Coefficients& beta, const ClusteredDataset& dataset,
                                  const StepCdf& baseline) {
  dataset.require_valid();
  const Eigen::VectorXd m = mu_vector(beta, dataset);
  const Eigen::VectorXd f = baseline.at_observed_times(dataset);
  const Eigen::VectorXd r = (dataset.events().array() - f.array() * m.array()).matrix();
  // Accumulate per cluster so the summation order matches the weighted scores.
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dataset.num_params()));
  for (std::size_t i = 0; i < dataset.num_clusters(); ++i) {
    const auto b = dataset.cluster_begin(i);
    const auto n = dataset.cluster_size(i);
    u += dataset.design().middleRows(b, n).transpose() * r.segment(b, n);
  }
  return u;
}

Eigen::VectorXd pearson_residuals(const Coefficients& beta, const ClusteredDataset& dataset,
                                  const StepCdf& baseline) {
  dataset.require_valid();
  const Eigen::VectorXd m = mu_vector(beta, dataset);
  const auto& d = dataset.events();
  Eigen::VectorXd e(m.size());
  for (Eigen::Index r = 0; r < m.size(); ++r) {
    double kappa = 0.0;
    if (d(r) == 1.0) {
      const double f = baseline(dataset.times()(r));
      if (!(f > 0.0)) throw NumericalError("baseline is zero at an uncensored time");
      kappa = 1.0 / f;
    }
    e(r) = (kappa - m(r)) / std::sqrt(m(r));
  }
  return e;
}

double estimate_phi(const Eigen::VectorXd& residuals, std::size_t num_obs, std::size_t p_x) {
  if (num_obs <= p_x + 1) throw std::invalid_argument("dispersion needs N > p_x + 1");
  return residuals.squaredNorm() / static_cast<double>(num_obs - p_x - 1);
}

std::vector<Eigen::VectorXd> split_by_cluster(const Eigen::VectorXd& values, const ClusteredDataset& dataset) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(dataset.num_clusters());
  for (std::size_t i = 0; i < dataset.num_clusters(); ++i) {
    out.emplace_back(values.segment(dataset.cluster_begin(i), dataset.cluster_size(i)));
  }
  return out;
}

RhoEstimate estimate_rho(const std::vector<Eigen::VectorXd>& residuals_by_cluster, CorrelationFamily family,
                         double phi, std::size_t num_obs, std::size_t p_x) {
  (void)num_obs;
  if (family == CorrelationFamily::Independence) {
    throw std::invalid_argument("independence working correlation has no rho");
  }
  double numer = 0.0;
  double pairs = 0.0;
  std::size_t n_max = 0;
  for (const auto& e : residuals_by_cluster) {
    const auto n = e.size();
    n_max = std::max(n_max, static_cast<std::size_t>(n));
    if (family == CorrelationFamily::Exchangeable) {
      // sum over ordered pairs j != k = (sum e)^2 - sum e^2
      const double s = e.sum();
      numer += s * s - e.squaredNorm();
      pairs += static_cast<double>(n * (n - 1));
    } else {
      for (Eigen::Index j = 0; j + 1 < n; ++j) numer += e(j) * e(j + 1);
      pairs += static_cast<double>(std::max<Eigen::Index>(n - 1, 0));
    }
  }
  if (pairs == 0.0) throw std::invalid_argument("no within-cluster pairs: every cluster is a singleton");
  const double denom = pairs - static_cast<double>(p_x) - 1.0;
  if (!(denom > 0.0)) throw std::invalid_argument("correlation estimator denominator is not positive");

  RhoEstimate out;
  out.raw = numer / (std::max(phi, kPhiFloor) * denom);
  double lo = -1.0 + 1e-6;
  const double hi = 1.0 - 1e-6;
  if (family == CorrelationFamily::Exchangeable && n_max > 1) {
    lo = -1.0 / static_cast<double>(n_max - 1) + 1e-6;
  }
  out.rho = std::clamp(out.raw, lo, hi);
  out.clipped = out.rho != out.raw;
  return out;
}

Eigen::MatrixXd cluster_scores_gee(const Coefficients& beta, const ClusteredDataset& dataset,
                                   const StepCdf& baseline, const WorkingCorrelation& corr) {
  dataset.require_valid();
  const Eigen::VectorXd m = mu_vector(beta, dataset);
  const Eigen::VectorXd f = baseline.at_observed_times(dataset);
  WeightCache weights(corr);
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(dataset.num_params()),
                         static_cast<Eigen::Index>(dataset.num_clusters()));
  for (std::size_t i = 0; i < dataset.num_clusters(); ++i) {
    const auto c = block(dataset, m, f, i);
    scores.col(static_cast<Eigen::Index>(i)) = detail::weighted_score(c, weights.get(c.x.rows()));
  }
  return scores;
}

Eigen::VectorXd score_gee(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                          const WorkingCorrelation& corr) {
  const Eigen::MatrixXd s = cluster_scores_gee(beta, dataset, baseline, corr);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(s.rows());
  for (Eigen::Index i = 0; i < s.cols(); ++i) u += s.col(i);
  return u;
}

Eigen::MatrixXd jacobian_gee(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                             const WorkingCorrelation& corr) {
  dataset.require_valid();
  const Eigen::VectorXd m = mu_vector(beta, dataset);
  const Eigen::VectorXd f = baseline.at_observed_times(dataset);
  WeightCache weights(corr);
  const auto p = static_cast<Eigen::Index>(dataset.num_params());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < dataset.num_clusters(); ++i) {
    const auto c = block(dataset, m, f, i);
    jac += detail::weighted_jacobian(c, weights.get(c.x.rows()));
  }
  return jac;
}

Eigen::VectorXd SandwichCovariance::standard_errors() const {
  return covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
}

Eigen::MatrixXd sandwich(const Eigen::MatrixXd& bread, const Eigen::MatrixXd& meat) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(bread);
  if (!lu.isInvertible()) throw SingularMatrixError("sandwich bread matrix is singular");
  const Eigen::MatrixXd inv = lu.inverse();
  Eigen::MatrixXd cov = inv * meat * inv.transpose();
  return 0.5 * (cov + cov.transpose());
}

SandwichCovariance sandwich_covariance(const Coefficients& beta_hat, const ClusteredDataset& dataset,
                                       const StepCdf& baseline, const WorkingCorrelation& corr) {
  SandwichCovariance out;
  out.bread = -jacobian_gee(beta_hat, dataset, baseline, corr);
  const Eigen::MatrixXd s = cluster_scores_gee(beta_hat, dataset, baseline, corr);
  out.meat = Eigen::MatrixXd::Zero(s.rows(), s.rows());
  for (Eigen::Index i = 0; i < s.cols(); ++i) out.meat.noalias() += s.col(i) * s.col(i).transpose();
  out.covariance = sandwich(out.bread, out.meat);
  return out;
}

}  // namespace ptcure
