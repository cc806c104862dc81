#pragma once

#include "ptcure/correlation.hpp"
#include "ptcure/data.hpp"
#include "ptcure/random.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

namespace ptcure {

/// Data-generating setup. `structure` shapes both latent layers: tau_corr is the
/// failure-time copula correlation and eta_corr the target cure-status correlation
/// (exchangeable: constant; AR(1): raised to the lag).
struct SimConfig {
  std::size_t clusters = 100;
  std::size_t cluster_size = 5;
  Coefficients beta_true = (Coefficients(3) << -0.5, 1.0, 1.0).finished();
  CorrelationFamily structure = CorrelationFamily::Exchangeable;
  double tau_corr = 0.0;
  double eta_corr = 0.0;
  double nu = 0.0;
  double censor_max = 3.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on out-of-range settings.
  void validate() const;
};

/// True baseline CDF (1 - e^{-2t}) / (1 - e^{-3}) on [0, 1.5]; 1 beyond.
double true_baseline_cdf(double t);
/// Inverse of true_baseline_cdf on [0, 1].
double true_baseline_quantile(double p);
inline constexpr double kBaselineSupportEnd = 1.5;

/// Survival of the uncured: (exp(-mu F(t)) - exp(-mu)) / (1 - exp(-mu)), mu = exp(beta' X).
/// `covariates` excludes the intercept.
double latency_survival(double t, const Coefficients& beta, const std::vector<double>& covariates);

/// Solves 1 - latency_survival(t) = u for t in [0, 1.5].
double invert_latency(double u, const Coefficients& beta, const std::vector<double>& covariates);

/// Standard bivariate normal CDF with correlation rho in [-1, 1].
double bivariate_normal_cdf(double h, double k, double rho);

/// Latent correlation zeta whose dichotomized normals with success
/// probabilities pi_j, pi_k have binary correlation eta. Throws RootBracketError
/// if eta lies outside the attainable range.
double solve_emrich(double pi_j, double pi_k, double eta);

struct BinaryCorrelationRange {
  double lower;
  double upper;
};
/// Binary correlations reachable by thresholding a bivariate normal.
BinaryCorrelationRange attainable_binary_correlation(double pi_j, double pi_k);

/// Latent draws behind one cluster.
struct LatentDraw {
  Eigen::VectorXd z_star;  // failure-time copula latents
  Eigen::VectorXd v;       // cure-status latents
  std::vector<int> y;      // 1 = susceptible (v > 0)
};

struct ClusterDraw {
  std::vector<Observation> observations;
  LatentDraw latent;
  std::vector<std::optional<double>> failure_time;  // empty for cured members
  int eta_clamped = 0;          // pairs whose target correlation was unattainable
  bool sigma_repaired = false;  // latent correlation needed eigenvalue clipping
};

struct SimDiagnostics {
  std::size_t eta_clamped = 0;
  std::size_t sigma_repaired = 0;
};

class Simulator {
 public:
  explicit Simulator(SimConfig config);

  const SimConfig& config() const noexcept { return config_; }

  /// Draws (X1 ~ Bernoulli(0.5), X2 ~ U(nu, nu + 1)) for each member.
  std::vector<std::vector<double>> draw_covariates(Philox4x64& rng) const;

  ClusterDraw generate_cluster(const std::vector<std::vector<double>>& covariates, Philox4x64& rng) const;

  /// Cluster i uses the substream (seed, i), so output does not depend on threading.
  ClusteredDataset simulate(SimDiagnostics* diagnostics = nullptr, unsigned threads = 1) const;

 private:
  double pair_target(Eigen::Index j, Eigen::Index k) const;

  SimConfig config_;
  Eigen::MatrixXd copula_factor_;  // Cholesky factor of the failure-time latent correlation
};

ClusteredDataset simulate(const SimConfig& config, SimDiagnostics* diagnostics = nullptr);

/// Average cure probability E exp(-exp(beta' X)) under the covariate design at nu,
/// from `draws` common random numbers.
double mean_cure_fraction(const Coefficients& beta, double nu, std::size_t draws, std::uint64_t seed);

/// Expected censoring fraction under the covariate design at nu, by quadrature
/// over X2 and the latency distribution (exact in X1). Independent of the
/// correlation settings, which leave every marginal untouched.
double expected_censoring_rate(const Coefficients& beta, double nu, double censor_max);

/// nu whose expected censoring fraction equals `target_censoring`; bisection over [-10, 10].
double calibrate_nu_for_censoring(const SimConfig& config, double target_censoring);

/// nu matching `target_cure_rate` by bisection over [-10, 10]. Throws
/// RootBracketError if the target lies outside the bracket.
double calibrate_nu(const SimConfig& config, double target_cure_rate, std::size_t draws = 1000000);

}  // namespace ptcure
