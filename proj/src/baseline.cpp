#include "ptcure/baseline.hpp"

#include "ptcure/error.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace ptcure {

namespace {

constexpr double kLambdaTolerance = 1e-12;

}  // namespace

StepCdf::StepCdf(std::vector<double> jump_times, std::vector<double> jump_masses)
    : times_(std::move(jump_times)), masses_(std::move(jump_masses)) {
  if (times_.size() != masses_.size()) throw std::invalid_argument("jump times and masses differ in length");
  cumulative_.reserve(masses_.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < times_.size(); ++k) {
    if (k > 0 && !(times_[k] > times_[k - 1])) throw std::invalid_argument("jump times must be strictly increasing");
    if (!(masses_[k] > 0.0) || !std::isfinite(masses_[k])) throw NumericalError("nonpositive baseline jump mass");
    acc += masses_[k];
    cumulative_.push_back(acc);
  }
}

double StepCdf::operator()(double t) const {
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  if (it == times_.begin()) return 0.0;
  return cumulative_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

Eigen::VectorXd StepCdf::at_observed_times(const ClusteredDataset& dataset) const {
  const auto& t = dataset.times();
  Eigen::VectorXd f(t.size());
  for (Eigen::Index r = 0; r < t.size(); ++r) f(r) = (*this)(t(r));
  return f;
}

void StepCdf::write_csv(std::ostream& out) const {
  out << "time,mass,cdf\n" << std::setprecision(17);
  for (std::size_t k = 0; k < times_.size(); ++k) {
    out << times_[k] << ',' << masses_[k] << ',' << cumulative_[k] << '\n';
  }
}

CureThreshold default_threshold(const ClusteredDataset& dataset) { return {dataset.max_event_time()}; }

void check_threshold(const ClusteredDataset& dataset, CureThreshold tau) {
  if (!(tau.tau > 0.0) || !std::isfinite(tau.tau)) throw std::invalid_argument("cure threshold must be positive");
  if (tau.tau < dataset.max_event_time()) {
    throw std::invalid_argument("cure threshold " + std::to_string(tau.tau) +
                                " is below the largest uncensored time " +
                                std::to_string(dataset.max_event_time()));
  }
}

double risk_weight(const Coefficients& beta, const ClusteredDataset& dataset, double u, CureThreshold tau) {
  dataset.require_valid();
  const Eigen::VectorXd m = mu_vector(beta, dataset);
  const auto& t = dataset.times();
  double sum = 0.0;
  for (Eigen::Index r = 0; r < t.size(); ++r) {
    const bool at_risk = (u <= t(r) && t(r) <= tau.tau) || t(r) > tau.tau;
    if (at_risk) sum += m(r);
  }
  return sum / static_cast<double>(dataset.num_obs());
}

EventRiskWeights event_risk_weights(const Coefficients& beta, const ClusteredDataset& dataset, CureThreshold tau) {
  dataset.require_valid();
  check_threshold(dataset, tau);
  const Eigen::VectorXd m = mu_vector(beta, dataset);
  const auto& t = dataset.times();
  const auto& d = dataset.events();
  const auto n = static_cast<std::size_t>(t.size());

  // Uncensored times never exceed tau, so at u = T_event the risk set is {T >= u}.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return t(static_cast<Eigen::Index>(a)) < t(static_cast<Eigen::Index>(b)); });
  std::vector<double> sorted_times(n);
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) sorted_times[k] = t(static_cast<Eigen::Index>(order[k]));
  for (std::size_t k = n; k-- > 0;) suffix[k] = suffix[k + 1] + m(static_cast<Eigen::Index>(order[k]));

  EventRiskWeights out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (d(static_cast<Eigen::Index>(r)) != 1.0) continue;
    const double u = t(static_cast<Eigen::Index>(r));
    const auto first = static_cast<std::size_t>(std::lower_bound(sorted_times.begin(), sorted_times.end(), u) -
                                                sorted_times.begin());
    out.times.push_back(u);
    out.weights.push_back(suffix[first] * inv_n);
  }
  return out;
}

namespace {

// Solves for the gap g = min R - lambda > 0. Working with the gap keeps the
// dominant term 1/(R_min - lambda) accurate when the root sits next to the pole.
double solve_gap(const std::vector<double>& event_weights, std::size_t num_obs) {
  if (event_weights.empty()) throw RootBracketError("no uncensored observation: Lagrange multiplier undefined");
  const double inv_n = 1.0 / static_cast<double>(num_obs);
  const double m = *std::min_element(event_weights.begin(), event_weights.end());
  if (!(m > 0.0)) throw RootBracketError("risk weight vanishes at an uncensored time");
  std::vector<double> offset(event_weights.size());
  for (std::size_t k = 0; k < offset.size(); ++k) offset[k] = event_weights[k] - m;

  // h(g) = (1/N) sum 1/(R - m + g) - 1 is strictly decreasing on (0, inf).
  auto h = [&](double g) {
    double s = 0.0;
    for (double d : offset) s += 1.0 / (d + g);
    return s * inv_n - 1.0;
  };

  double hi = std::max(1.0, m);
  while (h(hi) > 0.0) {
    hi *= 2.0;
    if (hi > 1e300) throw RootBracketError("Lagrange equation not bracketed from below");
  }
  double lo = hi;
  while (h(lo) <= 0.0) {
    lo *= 0.5;
    if (lo < 1e-300) throw RootBracketError("Lagrange equation not bracketed below min risk weight");
  }

  // Geometric bisection: relative precision in g regardless of its magnitude.
  double mid = std::sqrt(lo * hi);
  for (int iter = 0; iter < 5000; ++iter) {
    mid = std::sqrt(lo * hi);
    if (!(mid > lo && mid < hi)) mid = 0.5 * (lo + hi);
    const double v = h(mid);
    if (std::abs(v) <= kLambdaTolerance) return mid;
    if (v > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (!(mid > lo || mid < hi) || hi - lo <= 2.0 * std::numeric_limits<double>::epsilon() * hi) break;
  }
  if (std::abs(h(mid)) > 1e-9) throw RootBracketError("Lagrange multiplier bisection did not converge");
  return mid;
}

}  // namespace

double solve_lambda(const std::vector<double>& event_weights, std::size_t num_obs) {
  const double gap = solve_gap(event_weights, num_obs);
  return *std::min_element(event_weights.begin(), event_weights.end()) - gap;
}

double solve_lambda(const Coefficients& beta, const ClusteredDataset& dataset, CureThreshold tau) {
  const auto w = event_risk_weights(beta, dataset, tau);
  return solve_lambda(w.weights, dataset.num_obs());
}

StepCdf estimate_baseline(const Coefficients& beta, const ClusteredDataset& dataset, CureThreshold tau) {
  const auto w = event_risk_weights(beta, dataset, tau);
  const double gap = solve_gap(w.weights, dataset.num_obs());
  const double m = *std::min_element(w.weights.begin(), w.weights.end());
  const double inv_n = 1.0 / static_cast<double>(dataset.num_obs());

  std::vector<std::size_t> order(w.times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w.times[a] < w.times[b]; });

  std::vector<double> times;
  std::vector<double> masses;
  for (std::size_t k : order) {
    const double denom = (w.weights[k] - m) + gap;
    if (!(denom > 0.0)) throw NumericalError("nonpositive baseline mass: Lagrange multiplier inadmissible");
    const double mass = inv_n / denom;
    if (!times.empty() && times.back() == w.times[k]) {
      masses.back() += mass;
    } else {
      times.push_back(w.times[k]);
      masses.push_back(mass);
    }
  }
  return StepCdf(std::move(times), std::move(masses));
}

}  // namespace ptcure
