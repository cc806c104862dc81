#pragma once

#include "ptcure/baseline.hpp"
#include "ptcure/correlation.hpp"
#include "ptcure/data.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ptcure {

enum class Method { Npm, Gee, Qif };

std::string to_string(Method method);
Method parse_method(std::string_view name);

struct FitConfig {
  Method method = Method::Npm;
  CorrelationFamily family = CorrelationFamily::Independence;
  std::optional<CureThreshold> tau;
  std::optional<Coefficients> beta_init;
  double outer_tol = 1e-6;
  int outer_max_iter = 100;
  double newton_tol = 1e-8;
  int newton_max_iter = 50;
  std::optional<std::uint64_t> seed;

  /// Throws std::invalid_argument on nonpositive tolerances or caps.
  void validate() const;
};

struct FitResult {
  Method method = Method::Npm;
  CorrelationFamily family = CorrelationFamily::Independence;
  Coefficients beta_hat;
  Eigen::VectorXd se;
  Eigen::MatrixXd covariance;
  StepCdf baseline;  // the baseline held fixed in the final Newton solve
  CureThreshold tau;
  std::optional<double> phi_hat;
  std::optional<double> rho_hat;
  std::optional<double> qif_value;
  int iterations = 0;
  bool converged = false;
  double score_norm = 0.0;             // max |U| at beta_hat
  std::vector<double> newton_norms;    // ||U||_2 after each accepted step of the final solve
  std::vector<std::string> diagnostics;
};

/// Alternates baseline, nuisance and Newton updates until beta settles.
/// Never throws on non-convergence: the best iterate comes back with converged = false.
FitResult fit(const ClusteredDataset& dataset, const FitConfig& config);

/// Estimating function of the configured method at beta with the baseline and
/// nuisance parameters held fixed (phi, rho only matter for GEE).
Eigen::VectorXd estimating_function(const Coefficients& beta, const ClusteredDataset& dataset,
                                    const StepCdf& baseline, Method method, const WorkingCorrelation& corr);

std::string to_json(const FitResult& result, int indent = 2);
/// `term,estimate,se` rows for the coefficients, plus `rho` and `phi` for GEE.
void write_table_csv(const FitResult& result, std::ostream& out);

struct BootstrapConfig {
  int replicates = 200;
  std::uint64_t seed = 0;
  std::vector<double> query_times;  // empty: the median uncensored time
  unsigned threads = 0;             // 0: all hardware threads
  bool reuse_stream = false;        // every replicate draws the same resample
};

struct BootstrapResult {
  int replicates = 0;
  int failures = 0;
  std::vector<double> query_times;
  Eigen::MatrixXd beta;       // successful replicates x (p_x + 1)
  Eigen::MatrixXd baseline;   // successful replicates x query times
  std::vector<double> phi;
  std::vector<double> rho;
  Eigen::VectorXd beta_variance;
  Eigen::VectorXd baseline_variance;
  std::optional<double> phi_variance;
  std::optional<double> rho_variance;
};

/// Cluster bootstrap of the nuisance estimates. Throws NumericalError if the
/// original fit fails or more than 20% of the replicates do not converge.
BootstrapResult bootstrap(const ClusteredDataset& dataset, const FitConfig& config, const BootstrapConfig& boot);

/// K clusters drawn uniformly with replacement; duplicates get distinct ids.
ClusteredDataset resample_clusters(const ClusteredDataset& dataset, std::uint64_t seed, std::uint64_t stream);

/// Unbiased sample variance (n - 1 denominator); 0 for fewer than two values.
double sample_variance(const std::vector<double>& values);

std::string to_json(const BootstrapResult& result, int indent = 2);

}  // namespace ptcure
