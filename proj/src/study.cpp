#include "ptcure/study.hpp"

#include "ptcure/error.hpp"
#include "ptcure/parallel.hpp"
#include "ptcure/random.hpp"

#include <boost/math/distributions/normal.hpp>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace ptcure {

namespace {

constexpr std::uint64_t kBootstrapLabel = 0xb0075ULL;

int find_method(const std::vector<MethodSpec>& methods, Method m, CorrelationFamily f) {
  for (std::size_t k = 0; k < methods.size(); ++k) {
    if (methods[k].method == m && (m == Method::Npm || methods[k].family == f)) return static_cast<int>(k);
  }
  return -1;
}

FitRecord run_one(const ClusteredDataset& ds, const StudyDesign& design, const MethodSpec& spec, bool bootstrap_rho,
                  std::uint64_t seed) {
  FitRecord rec;
  rec.spec = spec;
  FitConfig cfg = design.fit;
  cfg.method = spec.method;
  cfg.family = spec.family;
  try {
    const FitResult r = fit(ds, cfg);
    rec.converged = r.converged;
    rec.beta = r.beta_hat;
    rec.se = r.se;
    rec.covariance = r.covariance;
    rec.rho = r.rho_hat;
    rec.phi = r.phi_hat;
    rec.baseline_mass = r.baseline.total_mass();
    rec.usable = r.converged && r.se.allFinite();
    if (bootstrap_rho && rec.usable && r.rho_hat) {
      BootstrapConfig boot;
      boot.replicates = design.bootstrap_replicates;
      boot.seed = derive_seed(seed, kBootstrapLabel + static_cast<std::uint64_t>(spec.family));
      boot.threads = 1;
      cfg.beta_init = r.beta_hat;
      try {
        rec.rho_bootstrap_variance = bootstrap(ds, cfg, boot).rho_variance;
      } catch (const std::exception& ex) {
        rec.error = std::string("bootstrap: ") + ex.what();
      }
    }
  } catch (const std::exception& ex) {
    rec.error = ex.what();
  }
  return rec;
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "NA";
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

std::string setting_key(const StudySetting& s) {
  return fmt(s.censoring) + "," + to_string(s.structure) + "," + s.strength;
}

}  // namespace

std::string MethodSpec::label() const {
  if (method == Method::Npm) return "npm";
  return to_string(method) + "-" + to_string(family);
}

std::vector<MethodSpec> default_methods() {
  return {{Method::Npm, CorrelationFamily::Independence},
          {Method::Gee, CorrelationFamily::Exchangeable},
          {Method::Gee, CorrelationFamily::Ar1},
          {Method::Qif, CorrelationFamily::Exchangeable},
          {Method::Qif, CorrelationFamily::Ar1}};
}

void StudyDesign::validate() const {
  sim.validate();
  fit.validate();
  if (replications < 2) throw std::invalid_argument("replications must be >= 2");
  if (!(confidence > 0.0 && confidence < 1.0)) throw std::invalid_argument("confidence must lie in (0, 1)");
  if (methods.empty()) throw std::invalid_argument("at least one method is required");
  if (bootstrap_replicates < 0 || bootstrap_subset < 0) throw std::invalid_argument("bootstrap sizes must be >= 0");
  if (bootstrap_replicates == 1) throw std::invalid_argument("bootstrap needs at least 2 replicates");
}

StudyResult run_study(const StudyDesign& design) {
  design.validate();
  StudyResult out;
  out.design = design;
  out.records.resize(static_cast<std::size_t>(design.replications));
  parallel_for(out.records.size(), design.threads, [&](std::size_t rep) {
    ReplicationRecord& rec = out.records[rep];
    rec.index = static_cast<int>(rep);
    rec.seed = derive_seed(design.seed, rep);
    SimConfig sim = design.sim;
    sim.seed = rec.seed;
    const ClusteredDataset ds = Simulator(sim).simulate();
    rec.censoring_rate = 1.0 - ds.events().mean();
    const bool boot = design.bootstrap_replicates >= 2 && static_cast<int>(rep) < design.bootstrap_subset;
    for (const auto& spec : design.methods) {
      rec.fits.push_back(run_one(ds, design, spec, boot && spec.method == Method::Gee, rec.seed));
    }
  });
  out.summary = summarize(design, out.records);
  return out;
}

StudySummary summarize(const StudyDesign& design, const std::vector<ReplicationRecord>& records) {
  StudySummary s;
  const Coefficients& truth = design.sim.beta_true;
  const auto p = truth.size();
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + design.confidence / 2.0);

  for (const auto& r : records) s.mean_censoring_rate += r.censoring_rate;
  if (!records.empty()) s.mean_censoring_rate /= static_cast<double>(records.size());

  for (std::size_t m = 0; m < design.methods.size(); ++m) {
    MethodSummary ms;
    ms.spec = design.methods[m];
    std::vector<const FitRecord*> used;
    for (const auto& r : records) {
      if (m < r.fits.size() && r.fits[m].usable) used.push_back(&r.fits[m]);
    }
    ms.used = static_cast<int>(used.size());
    ms.excluded = static_cast<int>(records.size()) - ms.used;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (Eigen::Index k = 0; k < p; ++k) {
      CoefficientSummary c{nan, nan, nan, nan, nan};
      if (!used.empty()) {
        double mean = 0.0;
        double est_var = 0.0;
        double sq_err = 0.0;
        int hits = 0;
        for (const auto* f : used) {
          const double b = f->beta(k);
          mean += b;
          est_var += f->se(k) * f->se(k);
          sq_err += (b - truth(k)) * (b - truth(k));
          if (std::abs(b - truth(k)) <= z * f->se(k)) ++hits;
        }
        const double n = static_cast<double>(used.size());
        mean /= n;
        double var = 0.0;
        for (const auto* f : used) var += (f->beta(k) - mean) * (f->beta(k) - mean);
        c.bias = mean - truth(k);
        c.variance = used.size() > 1 ? var / (n - 1.0) : nan;
        c.mean_est_variance = est_var / n;
        c.coverage = 100.0 * hits / n;
        c.mse = sq_err / n;
      }
      ms.coefficients.push_back(c);
    }
    s.methods.push_back(std::move(ms));
  }

  const int npm = find_method(design.methods, Method::Npm, CorrelationFamily::Independence);
  for (const auto& ms : s.methods) {
    std::vector<double> ratios;
    for (Eigen::Index k = 0; k < p; ++k) {
      ratios.push_back(npm >= 0 ? ms.coefficients[static_cast<std::size_t>(k)].mse /
                                      s.methods[static_cast<std::size_t>(npm)].coefficients[static_cast<std::size_t>(k)].mse
                                : std::numeric_limits<double>::quiet_NaN());
    }
    s.efficiency.mse_ratio.push_back(std::move(ratios));
  }
  const int ge = find_method(design.methods, Method::Gee, CorrelationFamily::Exchangeable);
  const int ga = find_method(design.methods, Method::Gee, CorrelationFamily::Ar1);
  const int qe = find_method(design.methods, Method::Qif, CorrelationFamily::Exchangeable);
  const int qa = find_method(design.methods, Method::Qif, CorrelationFamily::Ar1);
  if (ge >= 0 && ga >= 0 && qe >= 0 && qa >= 0) {
    const std::pair<int, int> pairs[4] = {{ge, ga}, {qe, qa}, {qe, ga}, {qa, ge}};
    for (const auto& [num, den] : pairs) {
      std::vector<double> row;
      for (Eigen::Index k = 0; k < p; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        row.push_back(s.methods[static_cast<std::size_t>(num)].coefficients[kk].mse /
                      s.methods[static_cast<std::size_t>(den)].coefficients[kk].mse);
      }
      s.efficiency.cross.push_back(std::move(row));
    }
  }

  for (auto family : {CorrelationFamily::Exchangeable, CorrelationFamily::Ar1}) {
    const int m = find_method(design.methods, Method::Gee, family);
    if (m < 0) continue;
    std::vector<double> values;
    std::vector<double> boot;
    for (const auto& r : records) {
      const auto& f = r.fits[static_cast<std::size_t>(m)];
      if (!f.usable || !f.rho) continue;
      values.push_back(*f.rho);
      if (f.rho_bootstrap_variance) boot.push_back(*f.rho_bootstrap_variance);
    }
    RhoSummary rs;
    rs.family = family;
    rs.count = static_cast<int>(values.size());
    if (!values.empty()) {
      for (double v : values) rs.mean += v;
      rs.mean /= static_cast<double>(values.size());
      rs.variance = sample_variance(values);
      rs.mean_se = std::sqrt(rs.variance / static_cast<double>(values.size()));
    }
    if (!boot.empty()) {
      double mb = 0.0;
      for (double v : boot) mb += v;
      rs.mean_bootstrap_variance = mb / static_cast<double>(boot.size());
      rs.bootstrapped = static_cast<int>(boot.size());
    }
    s.rho.push_back(rs);
  }
  return s;
}

SurvivalCurve kaplan_meier(const ClusteredDataset& dataset) {
  // The curve needs valid times and events only: an all-censored sample is a flat 1
  // and the design matrix plays no part.
  for (const auto& v : dataset.violations()) {
    const bool irrelevant = v.message.rfind("no uncensored", 0) == 0 || v.message.find("rank") != std::string::npos;
    if (!irrelevant) throw InvalidDatasetError("invalid dataset: " + v.to_string());
  }
  std::vector<std::pair<double, int>> obs;
  for (Eigen::Index r = 0; r < dataset.times().size(); ++r) {
    obs.emplace_back(dataset.times()(r), static_cast<int>(dataset.events()(r)));
  }
  std::sort(obs.begin(), obs.end());
  SurvivalCurve curve;
  double s = 1.0;
  int at_risk = static_cast<int>(obs.size());
  std::size_t i = 0;
  while (i < obs.size()) {
    const double t = obs[i].first;
    int deaths = 0;
    int leaving = 0;
    for (; i < obs.size() && obs[i].first == t; ++i) {
      deaths += obs[i].second;
      ++leaving;
    }
    if (deaths > 0) {
      s *= 1.0 - static_cast<double>(deaths) / at_risk;
      curve.times.push_back(t);
      curve.survival.push_back(s);
      curve.at_risk.push_back(at_risk);
      curve.events.push_back(deaths);
    }
    at_risk -= leaving;
  }
  return curve;
}

void SurvivalCurve::write_csv(std::ostream& out) const {
  out << "time,survival,at_risk,events\n" << std::setprecision(15);
  for (std::size_t k = 0; k < times.size(); ++k) {
    out << times[k] << ',' << survival[k] << ',' << at_risk[k] << ',' << events[k] << '\n';
  }
}

std::pair<double, double> correlation_strength(const std::string& strength) {
  if (strength == "strong") return {0.4, 0.8};
  if (strength == "weak") return {0.2, 0.4};
  if (strength == "none") return {0.0, 0.0};
  throw std::invalid_argument("unknown correlation strength '" + strength + "' (expected strong, weak or none)");
}

std::vector<StudySetting> table_grid() {
  std::vector<StudySetting> grid;
  for (double c : {0.2, 0.5, 0.9}) {
    for (auto f : {CorrelationFamily::Exchangeable, CorrelationFamily::Ar1}) {
      for (const char* s : {"strong", "weak", "none"}) grid.push_back({c, f, s});
    }
  }
  return grid;
}

StudyDesign design_for(const StudyDesign& base, const StudySetting& setting) {
  StudyDesign d = base;
  const auto [tau, eta] = correlation_strength(setting.strength);
  d.sim.structure = setting.structure;
  d.sim.tau_corr = tau;
  d.sim.eta_corr = eta;
  d.sim.nu = calibrate_nu_for_censoring(d.sim, setting.censoring);
  return d;
}

std::vector<std::string> write_study_outputs(const std::vector<SettingResult>& results, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> written;
  auto open = [&](const std::string& name) {
    const auto path = (fs::path(dir) / name).string();
    written.push_back(path);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    return out;
  };
  auto coef_name = [](Eigen::Index k) { return "beta" + std::to_string(k); };

  const std::pair<double, const char*> levels[3] = {
      {0.2, "table1_cure10.csv"}, {0.5, "table2_cure40.csv"}, {0.9, "table3_cure85.csv"}};
  for (const auto& [level, name] : levels) {
    auto out = open(name);
    out << "censoring,structure,strength,method,coefficient,bias,var,var_star,cp,used,excluded\n";
    for (const auto& sr : results) {
      if (std::abs(sr.setting.censoring - level) > 1e-9) continue;
      for (const auto& ms : sr.result.summary.methods) {
        for (std::size_t k = 0; k < ms.coefficients.size(); ++k) {
          const auto& c = ms.coefficients[k];
          out << setting_key(sr.setting) << ',' << ms.spec.label() << ',' << coef_name(static_cast<Eigen::Index>(k))
              << ',' << fmt(c.bias) << ',' << fmt(c.variance) << ',' << fmt(c.mean_est_variance) << ','
              << fmt(c.coverage) << ',' << ms.used << ',' << ms.excluded << '\n';
        }
      }
    }
  }
  {
    auto out = open("table5_relative_efficiency.csv");
    out << "censoring,structure,strength,method,coefficient,mse_ratio\n";
    for (const auto& sr : results) {
      const auto& s = sr.result.summary;
      for (std::size_t m = 0; m < s.methods.size(); ++m) {
        if (s.methods[m].spec.method == Method::Npm) continue;
        for (std::size_t k = 0; k < s.efficiency.mse_ratio[m].size(); ++k) {
          out << setting_key(sr.setting) << ',' << s.methods[m].spec.label() << ','
              << coef_name(static_cast<Eigen::Index>(k)) << ',' << fmt(s.efficiency.mse_ratio[m][k]) << '\n';
        }
      }
    }
  }
  {
    auto out = open("table6_cross_efficiency.csv");
    out << "censoring,structure,strength,coefficient,re1,re2,re3,re4\n";
    for (const auto& sr : results) {
      const auto& cross = sr.result.summary.efficiency.cross;
      if (cross.size() != 4) continue;
      for (std::size_t k = 0; k < cross[0].size(); ++k) {
        out << setting_key(sr.setting) << ',' << coef_name(static_cast<Eigen::Index>(k));
        for (const auto& row : cross) out << ',' << fmt(row[k]);
        out << '\n';
      }
    }
  }
  {
    auto out = open("table7_rho.csv");
    out << "censoring,structure,strength,working,count,mean,var,var_star\n";
    for (const auto& sr : results) {
      for (const auto& r : sr.result.summary.rho) {
        out << setting_key(sr.setting) << ',' << to_string(r.family) << ',' << r.count << ',' << fmt(r.mean) << ','
            << fmt(r.variance) << ','
            << (r.mean_bootstrap_variance ? fmt(*r.mean_bootstrap_variance) : std::string("NA")) << '\n';
      }
    }
  }
  {
    auto out = open("convergence.csv");
    out << "censoring,structure,strength,method,used,excluded,mean_censoring\n";
    for (const auto& sr : results) {
      for (const auto& ms : sr.result.summary.methods) {
        out << setting_key(sr.setting) << ',' << ms.spec.label() << ',' << ms.used << ',' << ms.excluded << ','
            << fmt(sr.result.summary.mean_censoring_rate) << '\n';
      }
    }
  }
  {
    auto out = open("study_records.json");
    out << records_json(results, 0) << '\n';
  }
  return written;
}

std::string records_json(const std::vector<SettingResult>& results, int indent) {
  using nlohmann::json;
  auto vec = [](const Eigen::VectorXd& v) {
    std::vector<double> out(v.data(), v.data() + v.size());
    return out;
  };
  json all = json::array();
  for (const auto& sr : results) {
    json reps = json::array();
    for (const auto& r : sr.result.records) {
      json fits = json::array();
      for (const auto& f : r.fits) {
        json jf = {{"method", f.spec.label()}, {"converged", f.converged}, {"usable", f.usable},
                   {"beta", vec(f.beta)},      {"se", vec(f.se)}};
        if (f.rho) jf["rho"] = *f.rho;
        if (f.phi) jf["phi"] = *f.phi;
        if (f.rho_bootstrap_variance) jf["rho_bootstrap_variance"] = *f.rho_bootstrap_variance;
        if (!f.error.empty()) jf["error"] = f.error;
        fits.push_back(jf);
      }
      reps.push_back({{"index", r.index}, {"seed", r.seed}, {"censoring_rate", r.censoring_rate}, {"fits", fits}});
    }
    const auto& sim = sr.result.design.sim;
    all.push_back({{"censoring", sr.setting.censoring},
                   {"structure", to_string(sr.setting.structure)},
                   {"strength", sr.setting.strength},
                   {"nu", sim.nu},
                   {"clusters", sim.clusters},
                   {"cluster_size", sim.cluster_size},
                   {"replications", reps}});
  }
  return all.dump(indent);
}

}  // namespace ptcure
