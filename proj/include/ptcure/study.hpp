#pragma once

#include "ptcure/data.hpp"
#include "ptcure/fit.hpp"
#include "ptcure/simulate.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ptcure {

struct MethodSpec {
  Method method = Method::Npm;
  CorrelationFamily family = CorrelationFamily::Independence;

  std::string label() const;  // e.g. "gee-exchangeable"
  bool operator==(const MethodSpec& other) const = default;
};

/// NPM, GEE and QIF under exchangeable and AR(1) working structures.
std::vector<MethodSpec> default_methods();

struct StudyDesign {
  SimConfig sim;
  std::vector<MethodSpec> methods = default_methods();
  int replications = 200;
  double confidence = 0.95;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  FitConfig fit;  // method and family are overridden per MethodSpec
  // Cluster bootstrap of rho for GEE fits on the first `bootstrap_subset`
  // replications, `bootstrap_replicates` resamples each (0 disables).
  int bootstrap_replicates = 0;
  int bootstrap_subset = 0;

  void validate() const;
};

struct FitRecord {
  MethodSpec spec;
  bool converged = false;
  bool usable = false;  // converged with finite standard errors
  Coefficients beta;
  Eigen::VectorXd se;
  Eigen::MatrixXd covariance;
  std::optional<double> rho;
  std::optional<double> phi;
  std::optional<double> rho_bootstrap_variance;
  double baseline_mass = 0.0;  // total mass of the fitted baseline CDF
  std::string error;
};

struct ReplicationRecord {
  int index = 0;
  std::uint64_t seed = 0;
  double censoring_rate = 0.0;
  std::vector<FitRecord> fits;  // ordered as StudyDesign::methods
};

struct CoefficientSummary {
  double bias = 0.0;
  double variance = 0.0;       // empirical Var over usable replications
  double mean_est_variance = 0.0;  // Var*: mean of squared standard errors
  double coverage = 0.0;       // percent of Wald intervals covering the truth
  double mse = 0.0;
};

struct MethodSummary {
  MethodSpec spec;
  int used = 0;
  int excluded = 0;
  std::vector<CoefficientSummary> coefficients;
};

struct EfficiencySummary {
  // MSE(method) / MSE(NPM) per coefficient, aligned with StudySummary::methods.
  std::vector<std::vector<double>> mse_ratio;
  // RE1 = GEE-exch/GEE-ar1, RE2 = QIF-exch/QIF-ar1, RE3 = QIF-exch/GEE-ar1,
  // RE4 = QIF-ar1/GEE-exch; empty when a required method is absent.
  std::vector<std::vector<double>> cross;  // 4 x coefficients
};

struct RhoSummary {
  CorrelationFamily family = CorrelationFamily::Exchangeable;
  int count = 0;
  double mean = 0.0;
  double variance = 0.0;
  double mean_se = 0.0;  // Monte Carlo standard error of the mean
  std::optional<double> mean_bootstrap_variance;
  int bootstrapped = 0;
};

struct StudySummary {
  std::vector<MethodSummary> methods;
  EfficiencySummary efficiency;
  std::vector<RhoSummary> rho;
  double mean_censoring_rate = 0.0;
};

struct StudyResult {
  StudyDesign design;
  std::vector<ReplicationRecord> records;
  StudySummary summary;
};

StudyResult run_study(const StudyDesign& design);

/// Aggregates non-excluded replications. Exposed for recomputation from records.
StudySummary summarize(const StudyDesign& design, const std::vector<ReplicationRecord>& records);

/// Product-limit survival curve ignoring clustering.
struct SurvivalCurve {
  std::vector<double> times;     // distinct event times
  std::vector<double> survival;  // S just after each time
  std::vector<int> at_risk;
  std::vector<int> events;

  void write_csv(std::ostream& out) const;
};
SurvivalCurve kaplan_meier(const ClusteredDataset& dataset);

/// Named simulation settings of the tables: censoring level x structure x strength.
struct StudySetting {
  double censoring = 0.2;  // target censoring fraction
  CorrelationFamily structure = CorrelationFamily::Exchangeable;
  std::string strength = "strong";  // strong, weak or none
};

/// (tau_corr, eta_corr) for a strength label.
std::pair<double, double> correlation_strength(const std::string& strength);

/// Full table grid: 20/50/90% censoring x {exchangeable, AR(1)} x {strong, weak, none}.
std::vector<StudySetting> table_grid();

/// Applies a setting to a base design (calibrating nu for the censoring level).
StudyDesign design_for(const StudyDesign& base, const StudySetting& setting);

struct SettingResult {
  StudySetting setting;
  StudyResult result;
};

/// Writes the seven table CSVs plus a JSON bundle of per-replication records into `dir`.
std::vector<std::string> write_study_outputs(const std::vector<SettingResult>& results, const std::string& dir);

std::string records_json(const std::vector<SettingResult>& results, int indent = 0);

}  // namespace ptcure
