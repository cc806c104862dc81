#pragma once

#include "ptcure/baseline.hpp"
#include "ptcure/correlation.hpp"
#include "ptcure/data.hpp"

#include <Eigen/Core>

#include <vector>

namespace ptcure {

/// Number of basis matrices used for a family: independence 1, exchangeable 2, AR(1) 3.
int basis_count(CorrelationFamily family);

/// 0/1 basis matrices spanning the inverse working correlation of size n.
///
/// M1 is always the identity. Exchangeable adds J - I; AR(1) adds the first
/// off-diagonals and the (1,1)/(n,n) corners. A singleton cluster yields only [I1];
/// the missing blocks contribute zero rows to the extended score.
std::vector<Eigen::MatrixXd> basis_matrices(CorrelationFamily family, Eigen::Index n);

/// Stacked extended score: block s occupies rows s*(p_x+1) ... (s+1)*(p_x+1)-1.
struct ExtendedScore {
  Eigen::MatrixXd g_per_cluster;  // m(p_x+1) x K, column i is g_i
  Eigen::VectorXd mean;           // G_K = (1/K) sum g_i
  Eigen::MatrixXd weight;         // C_K = (1/K) sum g_i g_i'
  Eigen::MatrixXd jacobian;       // dG_K/dbeta, m(p_x+1) x (p_x+1)
};

ExtendedScore extended_score(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                             CorrelationFamily family);

/// Analytic Jacobian of K * G_K = sum_i g_i.
Eigen::MatrixXd extended_score_jacobian(const Coefficients& beta, const ClusteredDataset& dataset,
                                        const StepCdf& baseline, CorrelationFamily family);

/// C_K^{-1} with ridge repair when the smallest eigenvalue falls below 1e-10 * trace.
struct WeightInverse {
  Eigen::MatrixXd inverse;
  bool ridged = false;
  bool zero = false;  // C_K == 0 (every g_i vanishes)
};
WeightInverse invert_weight(const Eigen::MatrixXd& weight);

/// Q(beta) = G_K' C_K^{-1} G_K.
double qif_objective(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                     CorrelationFamily family);
double qif_objective(const ExtendedScore& score);

/// U^Q = Gdot_K' C_K^{-1} G_K.
Eigen::VectorXd score_qif(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                          CorrelationFamily family);
Eigen::VectorXd score_qif(const ExtendedScore& score, const WeightInverse& inv);

struct QifCovariance {
  Eigen::MatrixXd covariance;  // H^{-1} Omega H^{-T}, H = K Gdot' C^{-1} Gdot
  Eigen::MatrixXd simplified;  // (1/K) [Gdot' C^{-1} Gdot]^{-1}
  double max_relative_gap = 0.0;
  bool ridged = false;

  Eigen::VectorXd standard_errors() const;
};

/// Finite-sample covariance of the QIF estimator.
QifCovariance qif_covariance(const Coefficients& beta_hat, const ClusteredDataset& dataset,
                             const StepCdf& baseline, CorrelationFamily family);

}  // namespace ptcure
