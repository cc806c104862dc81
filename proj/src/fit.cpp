#include "ptcure/fit.hpp"

#include "ptcure/error.hpp"
#include "ptcure/gee.hpp"
#include "ptcure/parallel.hpp"
#include "ptcure/qif.hpp"
#include "ptcure/random.hpp"

#include <Eigen/LU>
#include <boost/random/uniform_int_distribution.hpp>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace ptcure {

namespace {

constexpr int kMaxHalvings = 30;
constexpr double kFailureShare = 0.2;

using ScoreFn = std::function<Eigen::VectorXd(const Coefficients&)>;
using JacobianFn = std::function<Eigen::MatrixXd(const Coefficients&)>;

struct NewtonOutcome {
  Coefficients beta;
  Eigen::VectorXd score;
  bool converged = false;
  int halvings = 0;
  std::vector<double> norms;
  std::string failure;
};

std::optional<Eigen::VectorXd> try_score(const ScoreFn& score, const Coefficients& beta) {
  try {
    Eigen::VectorXd u = score(beta);
    if (!u.allFinite()) return std::nullopt;
    return u;
  } catch (const NumericalError&) {
    return std::nullopt;
  }
}

// Damped Newton: a step is accepted only if it lowers ||U||_2, halving up to 30 times.
// When the primary direction cannot lower ||U|| the optional fallback matrix gets one try.
NewtonOutcome newton_solve(const ScoreFn& score, const JacobianFn& jacobian, Coefficients beta, double tol,
                           int max_iter, const JacobianFn& fallback = {}) {
  NewtonOutcome out;
  auto u0 = try_score(score, beta);
  if (!u0) throw NumericalError("estimating function is not finite at the starting value");
  Eigen::VectorXd u = *u0;
  double norm = u.norm();
  out.norms.push_back(u.norm());
  for (int it = 0; it < max_iter && u.lpNorm<Eigen::Infinity>() >= tol; ++it) {
    bool accepted = false;
    bool singular = true;
    for (const JacobianFn* jac : {&jacobian, &fallback}) {
      if (!*jac) continue;
      Eigen::FullPivLU<Eigen::MatrixXd> lu((*jac)(beta));
      if (!lu.isInvertible()) continue;
      singular = false;
      const Eigen::VectorXd step = lu.solve(-u);
      double t = 1.0;
      for (int h = 0; h <= kMaxHalvings; ++h, t *= 0.5) {
        const Coefficients trial = beta + t * step;
        const auto ut = try_score(score, trial);
        if (ut && ut->norm() < norm) {
          beta = trial;
          u = *ut;
          norm = u.norm();
          out.halvings += h;
          accepted = true;
          break;
        }
      }
      if (accepted) break;
    }
    if (singular) {
      out.failure = "singular Jacobian";
      break;
    }
    if (!accepted) {
      out.failure = "step halving exhausted";
      break;
    }
    out.norms.push_back(u.norm());
  }
  out.beta = beta;
  out.score = u;
  out.converged = u.lpNorm<Eigen::Infinity>() < tol;
  return out;
}

Eigen::MatrixXd central_difference(const ScoreFn& score, const Coefficients& beta) {
  const auto p = beta.size();
  Eigen::MatrixXd jac(p, p);
  for (Eigen::Index k = 0; k < p; ++k) {
    const double h = 1e-6 * std::max(1.0, std::abs(beta(k)));
    Coefficients up = beta;
    Coefficients down = beta;
    up(k) += h;
    down(k) -= h;
    jac.col(k) = (score(up) - score(down)) / (2.0 * h);
  }
  return jac;
}

struct Nuisance {
  WorkingCorrelation corr = WorkingCorrelation::independence();
  std::optional<double> phi;
  std::optional<double> rho;
};

Nuisance update_nuisance(const Coefficients& beta, const ClusteredDataset& ds, const StepCdf& baseline,
                         const FitConfig& cfg, std::vector<std::string>& diagnostics) {
  Nuisance n;
  // QIF carries its basis family through the correlation object; rho is never used.
  if (cfg.method == Method::Qif) n.corr = WorkingCorrelation::make(cfg.family, 0.0, 1.0);
  if (cfg.method != Method::Gee) return n;
  const Eigen::VectorXd e = pearson_residuals(beta, ds, baseline);
  const double phi = estimate_phi(e, ds.num_obs(), ds.p_x());
  n.phi = phi;
  // The independence root does not depend on phi, so it is pinned at 1.
  if (cfg.family == CorrelationFamily::Independence) return n;
  const double phi_used = std::max(phi, kPhiFloor);
  if (phi < kPhiFloor) diagnostics.push_back("phi floored at 1e-8");
  double rho = 0.0;
  try {
    const auto est = estimate_rho(split_by_cluster(e, ds), cfg.family, phi, ds.num_obs(), ds.p_x());
    rho = est.rho;
    if (est.clipped) diagnostics.push_back("rho clipped from " + std::to_string(est.raw));
  } catch (const std::invalid_argument& ex) {
    diagnostics.push_back(std::string("rho set to 0: ") + ex.what());
  }
  n.rho = rho;
  n.corr = WorkingCorrelation::make(cfg.family, rho, phi_used);
  return n;
}

void fill_covariance(FitResult& r, const ClusteredDataset& ds, const WorkingCorrelation& corr) {
  const auto p = static_cast<Eigen::Index>(ds.num_params());
  try {
    if (r.method == Method::Qif) {
      const auto cov = qif_covariance(r.beta_hat, ds, r.baseline, r.family);
      r.covariance = cov.covariance;
      std::ostringstream os;
      os << "qif covariance gap " << cov.max_relative_gap;
      r.diagnostics.push_back(os.str());
      if (cov.ridged) r.diagnostics.push_back("C_K ridge applied");
    } else {
      r.covariance = sandwich_covariance(r.beta_hat, ds, r.baseline, corr).covariance;
    }
    r.se = r.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  } catch (const NumericalError& ex) {
    r.covariance = Eigen::MatrixXd::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
    r.se = Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
    r.diagnostics.push_back(std::string("covariance unavailable: ") + ex.what());
  }
}

}  // namespace

std::string to_string(Method method) {
  switch (method) {
    case Method::Npm: return "npm";
    case Method::Gee: return "gee";
    case Method::Qif: return "qif";
  }
  return "npm";
}

Method parse_method(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "npm") return Method::Npm;
  if (s == "gee") return Method::Gee;
  if (s == "qif") return Method::Qif;
  throw std::invalid_argument("unknown method '" + std::string(name) + "' (expected npm, gee or qif)");
}

void FitConfig::validate() const {
  if (!(outer_tol > 0.0) || !(newton_tol > 0.0)) throw std::invalid_argument("tolerances must be positive");
  if (outer_max_iter < 1 || newton_max_iter < 1) throw std::invalid_argument("iteration caps must be >= 1");
}

Eigen::VectorXd estimating_function(const Coefficients& beta, const ClusteredDataset& dataset,
                                    const StepCdf& baseline, Method method, const WorkingCorrelation& corr) {
  switch (method) {
    case Method::Npm: return score_independent(beta, dataset, baseline);
    case Method::Gee: return score_gee(beta, dataset, baseline, corr);
    case Method::Qif: return score_qif(beta, dataset, baseline, corr.family());
  }
  return {};
}

FitResult fit(const ClusteredDataset& dataset, const FitConfig& config) {
  config.validate();
  dataset.require_valid();
  const auto p = static_cast<Eigen::Index>(dataset.num_params());

  FitResult r;
  r.method = config.method;
  r.family = config.method == Method::Npm ? CorrelationFamily::Independence : config.family;
  r.tau = config.tau ? *config.tau : default_threshold(dataset);
  check_threshold(dataset, r.tau);

  Coefficients beta = config.beta_init ? *config.beta_init : Coefficients::Zero(p);
  if (beta.size() != p) throw std::invalid_argument("beta_init length does not match p_x + 1");
  if (config.method == Method::Qif && basis_count(config.family) > 1 && !config.beta_init) {
    // At beta = 0 every mu is 1 and the intercept rows of the basis blocks are
    // collinear, so C_K is singular there. Start from the independence fit instead.
    FitConfig start = config;
    start.method = Method::Npm;
    const FitResult npm = fit(dataset, start);
    beta = npm.beta_hat;
    r.diagnostics.push_back("started from the independence estimate");
  }

  struct Best {
    double norm = std::numeric_limits<double>::infinity();
    Coefficients beta;
    StepCdf baseline;
    Nuisance nuisance;
    std::vector<double> norms;
  } best;

  bool converged = false;
  int iter = 0;
  StepCdf baseline;
  Nuisance nuisance;
  std::vector<double> last_norms;
  for (iter = 1; iter <= config.outer_max_iter; ++iter) {
    baseline = estimate_baseline(beta, dataset, r.tau);
    nuisance = update_nuisance(beta, dataset, baseline, config, r.diagnostics);

    ScoreFn score;
    JacobianFn jacobian;
    JacobianFn fallback;
    const auto& corr = nuisance.corr;
    switch (config.method) {
      case Method::Npm:
        score = [&](const Coefficients& b) { return score_independent(b, dataset, baseline); };
        jacobian = [&](const Coefficients& b) { return jacobian_gee(b, dataset, baseline, corr); };
        break;
      case Method::Gee:
        score = [&](const Coefficients& b) { return score_gee(b, dataset, baseline, corr); };
        jacobian = [&](const Coefficients& b) { return jacobian_gee(b, dataset, baseline, corr); };
        break;
      case Method::Qif:
        if (basis_count(r.family) == 1) {
          // One basis matrix: G has p rows, so Gdot and C are square and U^Q = 0
          // exactly when U^I = 0. Solve the latter; the weight matrix drops out.
          score = [&](const Coefficients& b) { return score_independent(b, dataset, baseline); };
          jacobian = [&](const Coefficients& b) {
            return jacobian_gee(b, dataset, baseline, WorkingCorrelation::independence());
          };
          break;
        }
        score = [&](const Coefficients& b) { return score_qif(b, dataset, baseline, r.family); };
        // U^Q has no cheap exact derivative (C_K moves with beta), so Newton uses
        // central differences; Gauss-Newton is the fallback direction.
        jacobian = [&](const Coefficients& b) { return central_difference(score, b); };
        fallback = [&](const Coefficients& b) {
          const auto es = extended_score(b, dataset, baseline, r.family);
          const auto inv = invert_weight(es.weight);
          return Eigen::MatrixXd(es.jacobian.transpose() * inv.inverse * es.jacobian);
        };
        break;
    }

    const NewtonOutcome step = newton_solve(score, jacobian, beta, config.newton_tol, config.newton_max_iter, fallback);
    if (step.halvings > 0) {
      r.diagnostics.push_back("outer " + std::to_string(iter) + ": " + std::to_string(step.halvings) +
                              " step halvings");
    }
    if (!step.failure.empty()) r.diagnostics.push_back("outer " + std::to_string(iter) + ": " + step.failure);

    const double change = (step.beta - beta).lpNorm<Eigen::Infinity>();
    beta = step.beta;
    last_norms = step.norms;
    const double norm = step.score.lpNorm<Eigen::Infinity>();
    if (norm <= best.norm) best = {norm, beta, baseline, nuisance, step.norms};
    if (step.converged && change < config.outer_tol) {
      converged = true;
      break;
    }
  }

  r.iterations = std::min(iter, config.outer_max_iter);
  r.converged = converged;
  if (converged) {
    r.beta_hat = beta;
    r.baseline = baseline;
    r.newton_norms = last_norms;
  } else {
    r.diagnostics.push_back("not converged after " + std::to_string(config.outer_max_iter) +
                            " outer iterations; returning best iterate");
    r.beta_hat = best.beta;
    r.baseline = best.baseline;
    nuisance = best.nuisance;
    r.newton_norms = best.norms;
  }
  r.phi_hat = nuisance.phi;
  r.rho_hat = nuisance.rho;
  r.score_norm =
      estimating_function(r.beta_hat, dataset, r.baseline, config.method, nuisance.corr).lpNorm<Eigen::Infinity>();
  if (config.method == Method::Qif) r.qif_value = qif_objective(r.beta_hat, dataset, r.baseline, r.family);
  fill_covariance(r, dataset, nuisance.corr);
  return r;
}

std::string to_json(const FitResult& r, int indent) {
  using nlohmann::json;
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json cov = json::array();
  for (Eigen::Index i = 0; i < r.covariance.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < r.covariance.cols(); ++j) row.push_back(r.covariance(i, j));
    cov.push_back(row);
  }
  json j = {
      {"method", to_string(r.method)},
      {"family", to_string(r.family)},
      {"beta_hat", vec(r.beta_hat)},
      {"se", vec(r.se)},
      {"covariance", cov},
      {"tau", r.tau.tau},
      {"iterations", r.iterations},
      {"converged", r.converged},
      {"score_norm", r.score_norm},
      {"diagnostics", r.diagnostics},
      {"baseline", {{"times", r.baseline.jump_times()}, {"masses", r.baseline.jump_masses()}}},
  };
  j["phi_hat"] = r.phi_hat ? json(*r.phi_hat) : json(nullptr);
  j["rho_hat"] = r.rho_hat ? json(*r.rho_hat) : json(nullptr);
  j["qif_value"] = r.qif_value ? json(*r.qif_value) : json(nullptr);
  return j.dump(indent);
}

void write_table_csv(const FitResult& r, std::ostream& out) {
  const auto old_precision = out.precision(12);
  out << "term,estimate,se\n";
  for (Eigen::Index k = 0; k < r.beta_hat.size(); ++k) {
    out << (k == 0 ? std::string("intercept") : "x" + std::to_string(k)) << ',' << r.beta_hat(k) << ','
        << r.se(k) << '\n';
  }
  if (r.method == Method::Gee) {
    if (r.rho_hat) out << "rho," << *r.rho_hat << ",\n";
    if (r.phi_hat) out << "phi," << *r.phi_hat << ",\n";
  }
  out.precision(old_precision);
}

double sample_variance(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(values.size() - 1);
}

ClusteredDataset resample_clusters(const ClusteredDataset& dataset, std::uint64_t seed, std::uint64_t stream) {
  Philox4x64 rng(seed, stream);
  const auto k = dataset.num_clusters();
  boost::random::uniform_int_distribution<std::size_t> pick(0, k - 1);
  std::vector<Cluster> clusters;
  clusters.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    Cluster c = dataset.clusters()[pick(rng)];
    c.id += "#" + std::to_string(i);
    clusters.push_back(std::move(c));
  }
  return ClusteredDataset(std::move(clusters), dataset.p_x());
}

BootstrapResult bootstrap(const ClusteredDataset& dataset, const FitConfig& config, const BootstrapConfig& boot) {
  if (boot.replicates < 2) throw std::invalid_argument("bootstrap needs at least 2 replicates");
  const FitResult original = fit(dataset, config);
  if (!original.converged) throw NumericalError("fit does not converge on the original data");

  BootstrapResult out;
  out.replicates = boot.replicates;
  out.query_times = boot.query_times;
  if (out.query_times.empty()) {
    std::vector<double> event_times;
    for (Eigen::Index r = 0; r < dataset.events().size(); ++r) {
      if (dataset.events()(r) == 1.0) event_times.push_back(dataset.times()(r));
    }
    std::sort(event_times.begin(), event_times.end());
    out.query_times.push_back(event_times[(event_times.size() - 1) / 2]);
  }

  struct Replicate {
    bool ok = false;
    Coefficients beta;
    std::vector<double> baseline;
    std::optional<double> phi;
    std::optional<double> rho;
  };
  const auto r_count = static_cast<std::size_t>(boot.replicates);
  std::vector<Replicate> reps(r_count);
  // Replicates keep the original threshold so every resample shares one cure cutoff.
  FitConfig rep_config = config;
  rep_config.tau = original.tau;
  rep_config.beta_init = original.beta_hat;
  parallel_for(r_count, boot.threads, [&](std::size_t b) {
    const auto stream = boot.reuse_stream ? 0 : static_cast<std::uint64_t>(b);
    try {
      const auto sample = resample_clusters(dataset, boot.seed, stream);
      if (!sample.is_valid()) return;
      const FitResult f = fit(sample, rep_config);
      if (!f.converged) return;
      Replicate rep{true, f.beta_hat, {}, f.phi_hat, f.rho_hat};
      for (double t : out.query_times) rep.baseline.push_back(f.baseline(t));
      reps[b] = std::move(rep);
    } catch (const std::exception&) {
      // counted as a failed replicate
    }
  });

  const auto p = static_cast<Eigen::Index>(dataset.num_params());
  const auto q = static_cast<Eigen::Index>(out.query_times.size());
  std::vector<const Replicate*> good;
  for (const auto& rep : reps) {
    if (rep.ok) good.push_back(&rep);
  }
  out.failures = boot.replicates - static_cast<int>(good.size());
  if (static_cast<double>(out.failures) > kFailureShare * boot.replicates) {
    throw NumericalError("bootstrap aborted: " + std::to_string(out.failures) + " of " +
                         std::to_string(boot.replicates) + " replicates failed");
  }
  const auto g = static_cast<Eigen::Index>(good.size());
  out.beta.resize(g, p);
  out.baseline.resize(g, q);
  for (Eigen::Index b = 0; b < g; ++b) {
    out.beta.row(b) = good[static_cast<std::size_t>(b)]->beta.transpose();
    for (Eigen::Index t = 0; t < q; ++t) out.baseline(b, t) = good[static_cast<std::size_t>(b)]->baseline[t];
    if (const auto& phi = good[static_cast<std::size_t>(b)]->phi) out.phi.push_back(*phi);
    if (const auto& rho = good[static_cast<std::size_t>(b)]->rho) out.rho.push_back(*rho);
  }
  auto column_variance = [](const Eigen::MatrixXd& m) {
    Eigen::VectorXd v(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      v(c) = sample_variance(std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows()));
    }
    return v;
  };
  out.beta_variance = column_variance(out.beta);
  out.baseline_variance = column_variance(out.baseline);
  if (!out.phi.empty()) out.phi_variance = sample_variance(out.phi);
  if (!out.rho.empty()) out.rho_variance = sample_variance(out.rho);
  return out;
}

std::string to_json(const BootstrapResult& r, int indent) {
  using nlohmann::json;
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json j = {
      {"replicates", r.replicates},
      {"failures", r.failures},
      {"query_times", r.query_times},
      {"beta_variance", vec(r.beta_variance)},
      {"baseline_variance", vec(r.baseline_variance)},
  };
  j["phi_variance"] = r.phi_variance ? json(*r.phi_variance) : json(nullptr);
  j["rho_variance"] = r.rho_variance ? json(*r.rho_variance) : json(nullptr);
  return j.dump(indent);
}

}  // namespace ptcure
