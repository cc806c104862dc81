#pragma once

#include "ptcure/baseline.hpp"
#include "ptcure/correlation.hpp"
#include "ptcure/data.hpp"

#include <Eigen/Core>

#include <vector>

namespace ptcure {

/// Per-cluster quantities of the weighted estimating function.
struct ClusterWork {
  Eigen::VectorXd mu_vec;    // exp(beta' X_ij)
  Eigen::VectorXd b_diag;    // diagonal of B_i (= mu_vec)
  Eigen::VectorXd w_diag;    // F(t_ij)
  Eigen::VectorXd kappa;     // delta / F, defined as 0 when delta = 0
  Eigen::VectorXd residual;  // delta - F * mu
};

ClusterWork cluster_work(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                         std::size_t cluster);

/// Independence score sum_ij X_ij (delta_ij - F(t_ij) mu_ij).
Eigen::VectorXd score_independent(const Coefficients& beta, const ClusteredDataset& dataset,
                                  const StepCdf& baseline);

/// Standardized Pearson residuals (kappa - mu)/sqrt(mu), dataset row order.
Eigen::VectorXd pearson_residuals(const Coefficients& beta, const ClusteredDataset& dataset,
                                  const StepCdf& baseline);

/// sum e^2 / (N - p_x - 1). May return 0; callers floor it with kPhiFloor.
double estimate_phi(const Eigen::VectorXd& residuals, std::size_t num_obs, std::size_t p_x);

inline constexpr double kPhiFloor = 1e-8;

struct RhoEstimate {
  double rho = 0.0;
  double raw = 0.0;  // moment estimate before clipping
  bool clipped = false;
};

/// Moment estimator of the working correlation parameter, clipped into the
/// positive-definite range of the family. `residuals_by_cluster` holds each
/// cluster's Pearson residuals in observation order.
RhoEstimate estimate_rho(const std::vector<Eigen::VectorXd>& residuals_by_cluster, CorrelationFamily family,
                         double phi, std::size_t num_obs, std::size_t p_x);

/// Splits a dataset-ordered vector into per-cluster segments.
std::vector<Eigen::VectorXd> split_by_cluster(const Eigen::VectorXd& values, const ClusteredDataset& dataset);

/// U^G = sum_i (dmu/dbeta)' {B^{1/2} Q B^{1/2} phi}^{-1} W (kappa - mu).
Eigen::VectorXd score_gee(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                          const WorkingCorrelation& corr);

/// Per-cluster U^G_i as columns of a (p_x+1) x K matrix.
Eigen::MatrixXd cluster_scores_gee(const Coefficients& beta, const ClusteredDataset& dataset,
                                   const StepCdf& baseline, const WorkingCorrelation& corr);

/// dU^G/dbeta with rho, phi and the baseline held fixed.
Eigen::MatrixXd jacobian_gee(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                             const WorkingCorrelation& corr);

struct SandwichCovariance {
  Eigen::MatrixXd bread;       // -dU/dbeta
  Eigen::MatrixXd meat;        // sum_i U_i U_i'
  Eigen::MatrixXd covariance;  // bread^{-1} meat bread^{-T}

  Eigen::VectorXd standard_errors() const;
};

SandwichCovariance sandwich_covariance(const Coefficients& beta_hat, const ClusteredDataset& dataset,
                                       const StepCdf& baseline, const WorkingCorrelation& corr);

/// bread^{-1} meat bread^{-T}, symmetrized. Throws SingularMatrixError on a singular bread.
Eigen::MatrixXd sandwich(const Eigen::MatrixXd& bread, const Eigen::MatrixXd& meat);

}  // namespace ptcure
