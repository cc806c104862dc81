#include "ptcure/simulate.hpp"

#include "ptcure/error.hpp"
#include "ptcure/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/constants/constants.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ptcure {

namespace {

constexpr double kPi = boost::math::constants::pi<double>();
constexpr double kProbabilityGuard = 1e-12;
constexpr double kEigenFloor = 1e-10;

// Stream label for covariate draws used by the cure-fraction calibration.
constexpr std::uint64_t kCalibrationStream = 0xca1bULL;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) { return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * p); }

double bivariate_density(double h, double k, double rho) {
  const double s = 1.0 - rho * rho;
  return std::exp(-(h * h - 2.0 * rho * h * k + k * k) / (2.0 * s)) / (2.0 * kPi * std::sqrt(s));
}

double linear_predictor_of(const Coefficients& beta, const std::vector<double>& x) {
  if (static_cast<std::size_t>(beta.size()) != x.size() + 1) {
    throw std::invalid_argument("coefficient length does not match covariates + intercept");
  }
  double eta = beta(0);
  for (std::size_t k = 0; k < x.size(); ++k) eta += beta(static_cast<Eigen::Index>(k) + 1) * x[k];
  return eta;
}

// Binary correlation induced by latent correlation zeta.
struct EmrichProblem {
  double pi_j, pi_k, h, k, scale;

  EmrichProblem(double pj, double pk)
      : pi_j(pj), pi_k(pk), h(normal_quantile(pj)), k(normal_quantile(pk)),
        scale(std::sqrt(pj * pk * (1.0 - pj) * (1.0 - pk))) {}

  double eta(double zeta) const { return (bivariate_normal_cdf(h, k, zeta) - pi_j * pi_k) / scale; }
  double slope(double zeta) const { return bivariate_density(h, k, zeta) / scale; }
};

void check_probability(double p, const char* name) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument(std::string(name) + " must lie in (0, 1)");
}

// Square-root factor of a latent correlation matrix, repairing it when not PD.
Eigen::MatrixXd correlation_factor(const Eigen::MatrixXd& sigma, bool& repaired) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  repaired = false;
  if (llt.info() == Eigen::Success) {
    const Eigen::MatrixXd l = llt.matrixL();
    if (l.allFinite()) return l;
  }
  repaired = true;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
  const Eigen::VectorXd values = eig.eigenvalues().cwiseMax(kEigenFloor);
  Eigen::MatrixXd fixed = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
  // Rescale to a unit diagonal so the marginal success probabilities stay exact.
  const Eigen::VectorXd d = fixed.diagonal().cwiseSqrt().cwiseInverse();
  fixed = d.asDiagonal() * fixed * d.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig2(fixed);
  return eig2.eigenvectors() * eig2.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

struct CovariateDraws {
  std::vector<double> x1;
  std::vector<double> u;
};

CovariateDraws calibration_draws(std::size_t draws, std::uint64_t seed) {
  Philox4x64 rng(seed, kCalibrationStream);
  boost::random::uniform_01<double> unif;
  CovariateDraws d;
  d.x1.resize(draws);
  d.u.resize(draws);
  for (std::size_t i = 0; i < draws; ++i) {
    d.x1[i] = unif(rng) < 0.5 ? 1.0 : 0.0;
    d.u[i] = unif(rng);
  }
  return d;
}

double cure_fraction(const Coefficients& beta, double nu, const CovariateDraws& d) {
  double sum = 0.0;
  for (std::size_t i = 0; i < d.x1.size(); ++i) {
    sum += std::exp(-std::exp(beta(0) + beta(1) * d.x1[i] + beta(2) * (nu + d.u[i])));
  }
  return sum / static_cast<double>(d.x1.size());
}

}  // namespace

void SimConfig::validate() const {
  if (clusters < 1) throw std::invalid_argument("clusters must be >= 1");
  if (cluster_size < 1) throw std::invalid_argument("cluster_size must be >= 1");
  if (beta_true.size() != 3) throw std::invalid_argument("beta_true must have 3 entries (intercept, x1, x2)");
  if (!beta_true.allFinite()) throw std::invalid_argument("beta_true must be finite");
  if (!(tau_corr >= 0.0 && tau_corr < 1.0)) throw std::invalid_argument("tau_corr must lie in [0, 1)");
  if (!(eta_corr >= 0.0 && eta_corr < 1.0)) throw std::invalid_argument("eta_corr must lie in [0, 1)");
  if (!std::isfinite(nu)) throw std::invalid_argument("nu must be finite");
  if (!(censor_max > 0.0) || !std::isfinite(censor_max)) throw std::invalid_argument("censor_max must be positive");
}

double true_baseline_cdf(double t) {
  if (!(t > 0.0)) return 0.0;
  if (t >= kBaselineSupportEnd) return 1.0;
  return std::expm1(-2.0 * t) / std::expm1(-3.0);
}

double true_baseline_quantile(double p) {
  if (!(p > 0.0)) return 0.0;
  if (p >= 1.0) return kBaselineSupportEnd;
  return std::min(kBaselineSupportEnd, -0.5 * std::log1p(p * std::expm1(-3.0)));
}

double latency_survival(double t, const Coefficients& beta, const std::vector<double>& covariates) {
  if (t < 0.0) throw std::invalid_argument("time must be nonnegative");
  const double mu = checked_exp(linear_predictor_of(beta, covariates));
  const double f = true_baseline_cdf(t);
  // (exp(-mu F) - exp(-mu)) / (1 - exp(-mu)) written with expm1 for small mu.
  const double s = (std::expm1(-mu * f) - std::expm1(-mu)) / -std::expm1(-mu);
  return std::clamp(s, 0.0, 1.0);
}

double invert_latency(double u, const Coefficients& beta, const std::vector<double>& covariates) {
  if (!(u > 0.0 && u <= 1.0)) throw std::invalid_argument("u must lie in (0, 1]");
  const double mu = checked_exp(linear_predictor_of(beta, covariates));
  // 1 - S_u(t) = u  <=>  F(t) = -log(1 + u (e^{-mu} - 1)) / mu
  const double f = std::clamp(-std::log1p(u * std::expm1(-mu)) / mu, 0.0, 1.0);
  return true_baseline_quantile(f);
}

double bivariate_normal_cdf(double h, double k, double rho) {
  if (!(rho >= -1.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in [-1, 1]");
  if (std::isinf(h) || std::isinf(k)) {
    if (h == -INFINITY || k == -INFINITY) return 0.0;
    return h == INFINITY ? normal_cdf(k) : normal_cdf(h);
  }
  if (rho == 1.0) return normal_cdf(std::min(h, k));
  if (rho == -1.0) return std::max(0.0, normal_cdf(h) + normal_cdf(k) - 1.0);
  const double base = normal_cdf(h) * normal_cdf(k);
  if (rho == 0.0) return base;
  // Phi2 = Phi(h)Phi(k) + (1/2pi) int_0^{asin rho} exp(-(h^2 + k^2 - 2hk sin t) / (2 cos^2 t)) dt
  auto integrand = [h, k](double theta) {
    const double s = std::sin(theta);
    const double c2 = 1.0 - s * s;
    if (c2 <= 0.0) return 0.0;
    return std::exp(-(h * h + k * k - 2.0 * h * k * s) / (2.0 * c2));
  };
  double error = 0.0;
  const double integral = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      integrand, 0.0, std::asin(rho), 20, 1e-13, &error);
  return std::clamp(base + integral / (2.0 * kPi), 0.0, 1.0);
}

BinaryCorrelationRange attainable_binary_correlation(double pi_j, double pi_k) {
  check_probability(pi_j, "pi_j");
  check_probability(pi_k, "pi_k");
  const EmrichProblem p(pi_j, pi_k);
  return {p.eta(-1.0), p.eta(1.0)};
}

double solve_emrich(double pi_j, double pi_k, double eta) {
  check_probability(pi_j, "pi_j");
  check_probability(pi_k, "pi_k");
  if (eta == 0.0) return 0.0;
  const EmrichProblem p(pi_j, pi_k);
  const double lo_eta = p.eta(-1.0);
  const double hi_eta = p.eta(1.0);
  if (eta < lo_eta - 1e-12 || eta > hi_eta + 1e-12) {
    throw RootBracketError("binary correlation " + std::to_string(eta) + " outside attainable range [" +
                           std::to_string(lo_eta) + ", " + std::to_string(hi_eta) + "]");
  }
  if (eta >= hi_eta) return 1.0;
  if (eta <= lo_eta) return -1.0;

  // Safeguarded Newton: eta(zeta) is increasing, so the bracket shrinks every step.
  double lo = -1.0;
  double hi = 1.0;
  double z = std::clamp(std::sin(kPi * eta / 2.0), -1.0 + 1e-9, 1.0 - 1e-9);
  for (int it = 0; it < 200; ++it) {
    const double g = p.eta(z) - eta;
    if (std::abs(g) < 1e-11) return z;
    if (g < 0.0) {
      lo = z;
    } else {
      hi = z;
    }
    const double slope = p.slope(z);
    double next = slope > 0.0 ? z - g / slope : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (hi - lo < 1e-15) return next;
    z = next;
  }
  return z;
}

Simulator::Simulator(SimConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto n = static_cast<Eigen::Index>(config_.cluster_size);
  const auto corr = WorkingCorrelation::make(config_.structure, config_.tau_corr, 1.0);
  Eigen::LLT<Eigen::MatrixXd> llt(corr.matrix(n));
  if (llt.info() != Eigen::Success) throw std::invalid_argument("failure-time latent correlation is not PD");
  copula_factor_ = llt.matrixL();
}

double Simulator::pair_target(Eigen::Index j, Eigen::Index k) const {
  switch (config_.structure) {
    case CorrelationFamily::Independence: return 0.0;
    case CorrelationFamily::Exchangeable: return config_.eta_corr;
    case CorrelationFamily::Ar1: return std::pow(config_.eta_corr, static_cast<double>(std::abs(j - k)));
  }
  return 0.0;
}

std::vector<std::vector<double>> Simulator::draw_covariates(Philox4x64& rng) const {
  boost::random::uniform_01<double> unif;
  std::vector<std::vector<double>> x(config_.cluster_size);
  for (auto& row : x) {
    const double x1 = unif(rng) < 0.5 ? 1.0 : 0.0;
    const double x2 = config_.nu + unif(rng);
    row = {x1, x2};
  }
  return x;
}

ClusterDraw Simulator::generate_cluster(const std::vector<std::vector<double>>& covariates, Philox4x64& rng) const {
  const auto n = static_cast<Eigen::Index>(covariates.size());
  if (n != copula_factor_.rows()) throw std::invalid_argument("covariate rows must equal cluster_size");
  boost::random::normal_distribution<double> normal;
  boost::random::uniform_01<double> unif;
  const auto& beta = config_.beta_true;

  ClusterDraw out;
  Eigen::VectorXd e(n);
  for (Eigen::Index j = 0; j < n; ++j) e(j) = normal(rng);
  out.latent.z_star = copula_factor_ * e;

  std::vector<double> latency(static_cast<std::size_t>(n));
  Eigen::VectorXd pi(n);
  Eigen::VectorXd h(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& x = covariates[static_cast<std::size_t>(j)];
    const double u = std::max(normal_cdf(out.latent.z_star(j)), std::numeric_limits<double>::min());
    latency[static_cast<std::size_t>(j)] = invert_latency(u, beta, x);
    const double mu = checked_exp(linear_predictor_of(beta, x));
    pi(j) = std::clamp(-std::expm1(-mu), kProbabilityGuard, 1.0 - kProbabilityGuard);
    h(j) = normal_quantile(pi(j));
  }

  Eigen::MatrixXd sigma = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = j + 1; k < n; ++k) {
      double target = pair_target(j, k);
      if (target == 0.0) continue;
      const auto range = attainable_binary_correlation(pi(j), pi(k));
      if (target > range.upper || target < range.lower) {
        target = std::clamp(target, range.lower, range.upper);
        ++out.eta_clamped;
      }
      sigma(j, k) = sigma(k, j) = solve_emrich(pi(j), pi(k), target);
    }
  }
  const Eigen::MatrixXd factor = correlation_factor(sigma, out.sigma_repaired);
  for (Eigen::Index j = 0; j < n; ++j) e(j) = normal(rng);
  out.latent.v = h + factor * e;

  out.observations.resize(static_cast<std::size_t>(n));
  out.failure_time.resize(static_cast<std::size_t>(n));
  out.latent.y.resize(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto js = static_cast<std::size_t>(j);
    const int y = out.latent.v(j) > 0.0 ? 1 : 0;
    const double c = config_.censor_max * unif(rng);
    out.latent.y[js] = y;
    auto& obs = out.observations[js];
    obs.covariates = covariates[js];
    if (y == 0) {
      obs.time = c;
      obs.event = 0;
    } else {
      out.failure_time[js] = latency[js];
      obs.time = std::min(latency[js], c);
      obs.event = latency[js] <= c ? 1 : 0;
    }
  }
  return out;
}

ClusteredDataset Simulator::simulate(SimDiagnostics* diagnostics, unsigned threads) const {
  std::vector<ClusterDraw> draws(config_.clusters);
  parallel_for(config_.clusters, threads, [&](std::size_t i) {
    Philox4x64 rng(config_.seed, static_cast<std::uint64_t>(i));
    draws[i] = generate_cluster(draw_covariates(rng), rng);
  });
  std::vector<Cluster> clusters;
  clusters.reserve(draws.size());
  SimDiagnostics diag;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    diag.eta_clamped += static_cast<std::size_t>(draws[i].eta_clamped);
    diag.sigma_repaired += draws[i].sigma_repaired ? 1 : 0;
    clusters.push_back(Cluster{std::to_string(i + 1), std::move(draws[i].observations)});
  }
  if (diagnostics != nullptr) *diagnostics = diag;
  return ClusteredDataset(std::move(clusters), 2);
}

ClusteredDataset simulate(const SimConfig& config, SimDiagnostics* diagnostics) {
  return Simulator(config).simulate(diagnostics);
}

double mean_cure_fraction(const Coefficients& beta, double nu, std::size_t draws, std::uint64_t seed) {
  if (beta.size() != 3) throw std::invalid_argument("beta must have 3 entries");
  if (draws == 0) throw std::invalid_argument("draws must be positive");
  return cure_fraction(beta, nu, calibration_draws(draws, seed));
}

double expected_censoring_rate(const Coefficients& beta, double nu, double censor_max) {
  if (beta.size() != 3) throw std::invalid_argument("beta must have 3 entries");
  if (!(censor_max > 0.0)) throw std::invalid_argument("censor_max must be positive");
  using Rule = boost::math::quadrature::gauss<double, 40>;
  const double horizon = std::min(kBaselineSupportEnd, censor_max);
  double total = 0.0;
  for (double x1 : {0.0, 1.0}) {
    const double over_x2 = Rule::integrate(
        [&](double x2) {
          const std::vector<double> x{x1, x2};
          const double mu = checked_exp(linear_predictor_of(beta, x));
          // Susceptible members are censored when C < T, which has probability E min(T, c) / c.
          const double mean_min = Rule::integrate([&](double t) { return latency_survival(t, beta, x); }, 0.0, horizon);
          return std::exp(-mu) + -std::expm1(-mu) * mean_min / censor_max;
        },
        nu, nu + 1.0);
    total += 0.5 * over_x2;
  }
  return total;
}

double calibrate_nu_for_censoring(const SimConfig& config, double target_censoring) {
  if (!(target_censoring > 0.0 && target_censoring < 1.0)) {
    throw RootBracketError("target censoring rate must lie in (0, 1)");
  }
  auto gap = [&](double nu) {
    return expected_censoring_rate(config.beta_true, nu, config.censor_max) - target_censoring;
  };
  double lo = -10.0;
  double hi = 10.0;
  double g_lo = gap(lo);
  if (g_lo * gap(hi) > 0.0) {
    throw RootBracketError("target censoring rate " + std::to_string(target_censoring) +
                           " is not reachable for nu in [-10, 10]");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double g = gap(mid);
    if ((g < 0.0) == (g_lo < 0.0)) {
      lo = mid;
      g_lo = g;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double calibrate_nu(const SimConfig& config, double target_cure_rate, std::size_t draws) {
  if (!(target_cure_rate > 0.0 && target_cure_rate < 1.0)) {
    throw RootBracketError("target cure rate must lie in (0, 1)");
  }
  if (config.beta_true.size() != 3) throw std::invalid_argument("beta_true must have 3 entries");
  const auto d = calibration_draws(draws, config.seed);
  auto gap = [&](double nu) { return cure_fraction(config.beta_true, nu, d) - target_cure_rate; };
  double lo = -10.0;
  double hi = 10.0;
  double g_lo = gap(lo);
  const double g_hi = gap(hi);
  if (g_lo * g_hi > 0.0) {
    throw RootBracketError("target cure rate " + std::to_string(target_cure_rate) +
                           " is not reachable for nu in [-10, 10]");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double g = gap(mid);
    if (g == 0.0) return mid;
    if ((g < 0.0) == (g_lo < 0.0)) {
      lo = mid;
      g_lo = g;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace ptcure
