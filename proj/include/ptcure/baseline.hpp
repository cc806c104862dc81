#pragma once

#include "ptcure/data.hpp"

#include <iosfwd>
#include <vector>

namespace ptcure {

/// Finite right-continuous step CDF with jumps at the distinct uncensored times.
class StepCdf {
 public:
  StepCdf() = default;
  /// Jump times must be strictly increasing and masses positive.
  StepCdf(std::vector<double> jump_times, std::vector<double> jump_masses);

  const std::vector<double>& jump_times() const noexcept { return times_; }
  const std::vector<double>& jump_masses() const noexcept { return masses_; }
  /// cumulative()[k] = F at jump_times()[k].
  const std::vector<double>& cumulative() const noexcept { return cumulative_; }
  std::size_t size() const noexcept { return times_.size(); }
  bool empty() const noexcept { return times_.empty(); }

  /// F(t) = sum of masses with jump time <= t.
  double operator()(double t) const;
  /// Evaluates F at every observed time of the dataset, in dataset row order.
  Eigen::VectorXd at_observed_times(const ClusteredDataset& dataset) const;
  double total_mass() const noexcept { return cumulative_.empty() ? 0.0 : cumulative_.back(); }

  /// CSV with header `time,mass,cdf`.
  void write_csv(std::ostream& out) const;

 private:
  std::vector<double> times_;
  std::vector<double> masses_;
  std::vector<double> cumulative_;
};

/// Time beyond which survivors are treated as cured in the risk weight.
struct CureThreshold {
  double tau = 0.0;
};

/// Smallest admissible threshold: the largest uncensored time.
CureThreshold default_threshold(const ClusteredDataset& dataset);
/// Throws std::invalid_argument unless tau >= every uncensored time and tau > 0.
void check_threshold(const ClusteredDataset& dataset, CureThreshold tau);

/// R(u) = (1/N) sum_l sum_s exp(beta' X_ls) (I(u <= T_ls <= tau) + I(T_ls > tau)).
double risk_weight(const Coefficients& beta, const ClusteredDataset& dataset, double u, CureThreshold tau);

/// R evaluated at each uncensored observation, in dataset row order.
struct EventRiskWeights {
  std::vector<double> times;
  std::vector<double> weights;
};
EventRiskWeights event_risk_weights(const Coefficients& beta, const ClusteredDataset& dataset, CureThreshold tau);

/// Lagrange multiplier making the baseline masses sum to one:
/// (1/N) sum delta / (R(T) - lambda) = 1 with lambda < min R over uncensored T.
double solve_lambda(const Coefficients& beta, const ClusteredDataset& dataset, CureThreshold tau);
double solve_lambda(const std::vector<double>& event_weights, std::size_t num_obs);

/// Nonparametric maximum likelihood baseline CDF at fixed beta. Tied uncensored
/// times are merged by summing their per-observation masses.
StepCdf estimate_baseline(const Coefficients& beta, const ClusteredDataset& dataset, CureThreshold tau);

}  // namespace ptcure
