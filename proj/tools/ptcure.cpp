// Command-line front end: fit, simulate, study, bootstrap, km.
#include "ptcure/config.hpp"
#include "ptcure/error.hpp"
#include "ptcure/fit.hpp"
#include "ptcure/simulate.hpp"
#include "ptcure/study.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace ptcure;

namespace {

enum Exit { kOk = 0, kInput = 1, kNotConverged = 2, kNumerical = 3 };

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  return out;
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory '" + dir + "': " + ec.message());
  return fs::path(dir);
}

ConfigMap load_or_empty(const std::string& path) { return path.empty() ? ConfigMap{} : ConfigMap::load(path); }

// "20:exchangeable:strong" -> censoring 0.2, exchangeable truth, strong correlation.
StudySetting parse_setting(const std::string& text) {
  const auto a = text.find(':');
  const auto b = a == std::string::npos ? a : text.find(':', a + 1);
  if (b == std::string::npos) throw InputError("setting '" + text + "' must look like 20:exchangeable:strong");
  StudySetting s;
  try {
    s.censoring = std::stod(text.substr(0, a)) / 100.0;
    s.structure = parse_family(text.substr(a + 1, b - a - 1));
    s.strength = text.substr(b + 1);
    correlation_strength(s.strength);
  } catch (const std::invalid_argument& ex) {
    throw InputError("setting '" + text + "': " + ex.what());
  }
  return s;
}

struct FitArgs {
  std::string data;
  std::string config;
  std::string out = ".";
  std::string method;
  std::string family;
  std::optional<double> tau;
};

FitConfig fit_config_from(const std::string& config_path, const std::string& method, const std::string& family,
                          std::optional<double> tau) {
  ConfigMap map = load_or_empty(config_path);
  if (!method.empty()) map.set("method", method);
  if (!family.empty()) map.set("family", family);
  if (tau) map.set("tau", std::to_string(*tau));
  FitConfig cfg;
  apply_fit_config(map, cfg);
  map.require_consumed();
  return cfg;
}

int cmd_fit(const FitArgs& a) {
  const auto ds = read_clustered_csv_file(a.data);
  const auto cfg = fit_config_from(a.config, a.method, a.family, a.tau);
  const auto r = fit(ds, cfg);
  const auto dir = prepare_dir(a.out);
  open_out(dir / "fit.json") << to_json(r, 2) << '\n';
  auto table = open_out(dir / "table.csv");
  write_table_csv(r, table);
  if (!r.converged) {
    std::cerr << "warning: fit did not converge; outputs hold the best iterate\n";
    return kNotConverged;
  }
  return kOk;
}

struct SimArgs {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<double> censoring;
  unsigned threads = 0;
};

int cmd_simulate(const SimArgs& a) {
  if (!a.seed) throw InputError("simulate requires --seed");
  ConfigMap map = load_or_empty(a.config);
  map.set("seed", std::to_string(*a.seed));
  if (a.censoring) map.set("censoring", std::to_string(*a.censoring));
  SimConfig cfg;
  apply_sim_config(map, cfg);
  map.require_consumed();
  SimDiagnostics diag;
  const auto ds = Simulator(cfg).simulate(&diag, a.threads);
  const auto dir = prepare_dir(a.out);
  auto data = open_out(dir / "data.csv");
  write_clustered_csv(ds, data);
  open_out(dir / "sim_config.txt") << to_key_values(cfg);
  std::cerr << "clusters " << ds.num_clusters() << ", observations " << ds.num_obs() << ", clamped pairs "
            << diag.eta_clamped << ", repaired matrices " << diag.sigma_repaired << '\n';
  return kOk;
}

struct StudyArgs {
  std::string config;
  std::string out = ".";
  std::string preset = "scaled";
  std::optional<std::uint64_t> seed;
  std::optional<int> reps;
  std::vector<std::string> settings;
  std::string methods;
  std::optional<unsigned> threads;
  std::optional<int> bootstrap;
  std::optional<int> bootstrap_subset;
};

int cmd_study(const StudyArgs& a) {
  if (!a.seed) throw InputError("study requires --seed");
  StudyDesign base;
  if (a.preset == "full") {
    base.sim.clusters = 284;
    base.sim.cluster_size = 9;
    base.replications = 1000;
  } else if (a.preset != "scaled") {
    throw InputError("unknown preset '" + a.preset + "' (expected scaled or full)");
  }
  ConfigMap map = load_or_empty(a.config);
  map.set("seed", std::to_string(*a.seed));
  if (a.reps) map.set("replications", std::to_string(*a.reps));
  if (!a.methods.empty()) map.set("methods", a.methods);
  if (a.threads) map.set("threads", std::to_string(*a.threads));
  if (a.bootstrap) map.set("bootstrap_replicates", std::to_string(*a.bootstrap));
  if (a.bootstrap_subset) map.set("bootstrap_subset", std::to_string(*a.bootstrap_subset));
  apply_study_config(map, base);
  map.require_consumed();

  std::vector<StudySetting> grid;
  for (const auto& s : a.settings) grid.push_back(parse_setting(s));
  if (grid.empty()) grid = table_grid();

  std::vector<SettingResult> results;
  for (const auto& setting : grid) {
    const auto design = design_for(base, setting);
    std::cerr << "setting " << setting.censoring * 100 << "% " << to_string(setting.structure) << ' '
              << setting.strength << " (nu " << design.sim.nu << ", " << design.replications << " reps)\n";
    results.push_back({setting, run_study(design)});
  }
  const auto dir = prepare_dir(a.out);
  for (const auto& f : write_study_outputs(results, dir.string())) std::cerr << "wrote " << f << '\n';
  return kOk;
}

struct BootArgs {
  std::string data;
  std::string config;
  std::string out = ".";
  std::string method;
  std::string family;
  std::optional<std::uint64_t> seed;
  int replicates = 200;
  std::vector<double> query_times;
  unsigned threads = 0;
};

int cmd_bootstrap(const BootArgs& a) {
  if (!a.seed) throw InputError("bootstrap requires --seed");
  const auto ds = read_clustered_csv_file(a.data);
  const auto cfg = fit_config_from(a.config, a.method, a.family, std::nullopt);
  BootstrapConfig boot;
  boot.replicates = a.replicates;
  boot.seed = *a.seed;
  boot.query_times = a.query_times;
  boot.threads = a.threads;
  const auto r = bootstrap(ds, cfg, boot);
  const auto dir = prepare_dir(a.out);
  open_out(dir / "bootstrap.json") << to_json(r, 2) << '\n';
  return kOk;
}

int cmd_km(const std::string& data, const std::string& out) {
  const auto ds = read_clustered_csv_file(data);
  const auto dir = prepare_dir(out);
  auto csv = open_out(dir / "km.csv");
  kaplan_meier(ds).write_csv(csv);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Marginal promotion time cure models for clustered survival data"};
  app.set_version_flag("--version", std::string("ptcure ") + PTCURE_VERSION + " (" + __DATE__ + ", C++" +
                                        std::to_string(__cplusplus / 100 % 100) + ")");
  app.require_subcommand(1, 1);

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "Fit NPM, GEE or QIF to a clustered CSV");
  fit_cmd->add_option("--data", fa.data, "Input CSV (cluster,time,event,x1,...)")->required();
  fit_cmd->add_option("--config", fa.config, "key=value or JSON fit settings");
  fit_cmd->add_option("--method", fa.method, "npm, gee or qif");
  fit_cmd->add_option("--family", fa.family, "independence, exchangeable or ar1");
  fit_cmd->add_option("--tau", fa.tau, "Cure threshold (default: largest uncensored time)");
  fit_cmd->add_option("--out", fa.out, "Output directory");

  SimArgs sa;
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate one clustered dataset");
  sim_cmd->add_option("--config", sa.config, "key=value or JSON simulation settings");
  sim_cmd->add_option("--seed", sa.seed, "Random seed (required)");
  sim_cmd->add_option("--censoring", sa.censoring, "Target censoring fraction; calibrates nu");
  sim_cmd->add_option("--threads", sa.threads, "Worker threads (0: all cores)");
  sim_cmd->add_option("--out", sa.out, "Output directory");

  StudyArgs st;
  auto* study_cmd = app.add_subcommand("study", "Monte Carlo study over table settings");
  study_cmd->add_option("--config", st.config, "key=value or JSON study settings");
  study_cmd->add_option("--preset", st.preset, "scaled (K=100, n=5, 200 reps) or full (K=284, n=9, 1000 reps)");
  study_cmd->add_option("--seed", st.seed, "Random seed (required)");
  study_cmd->add_option("--reps", st.reps, "Override the number of replications");
  study_cmd->add_option("--setting", st.settings, "censoring%:family:strength, repeatable (default: full grid)");
  study_cmd->add_option("--methods", st.methods, "e.g. npm,gee-exchangeable,qif-ar1");
  study_cmd->add_option("--threads", st.threads, "Worker threads (0: all cores)");
  study_cmd->add_option("--bootstrap", st.bootstrap, "Bootstrap resamples for rho per replication");
  study_cmd->add_option("--bootstrap-subset", st.bootstrap_subset, "Replications that get the rho bootstrap");
  study_cmd->add_option("--out", st.out, "Output directory");

  BootArgs ba;
  auto* boot_cmd = app.add_subcommand("bootstrap", "Cluster bootstrap of nuisance estimates");
  boot_cmd->add_option("--data", ba.data, "Input CSV")->required();
  boot_cmd->add_option("--config", ba.config, "key=value or JSON fit settings");
  boot_cmd->add_option("--method", ba.method, "npm, gee or qif");
  boot_cmd->add_option("--family", ba.family, "independence, exchangeable or ar1");
  boot_cmd->add_option("--seed", ba.seed, "Random seed (required)");
  boot_cmd->add_option("--replicates", ba.replicates, "Bootstrap resamples")->check(CLI::PositiveNumber);
  boot_cmd->add_option("--at", ba.query_times, "Times at which to report the baseline CDF");
  boot_cmd->add_option("--threads", ba.threads, "Worker threads (0: all cores)");
  boot_cmd->add_option("--out", ba.out, "Output directory");

  std::string km_data;
  std::string km_out = ".";
  auto* km_cmd = app.add_subcommand("km", "Kaplan-Meier curve ignoring clustering");
  km_cmd->add_option("--data", km_data, "Input CSV")->required();
  km_cmd->add_option("--out", km_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }

  try {
    if (*fit_cmd) return cmd_fit(fa);
    if (*sim_cmd) return cmd_simulate(sa);
    if (*study_cmd) return cmd_study(st);
    if (*boot_cmd) return cmd_bootstrap(ba);
    if (*km_cmd) return cmd_km(km_data, km_out);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const InvalidDatasetError& e) {
    std::cerr << "invalid dataset: " << e.what() << '\n';
    return kInput;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kNumerical;
  }
  return kOk;
}
