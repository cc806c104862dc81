#include "ptcure/baseline.hpp"
#include "ptcure/config.hpp"
#include "ptcure/error.hpp"
#include "ptcure/fit.hpp"
#include "ptcure/simulate.hpp"
#include "ptcure/study.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>
#include <unordered_map>

namespace py = pybind11;
using namespace ptcure;

namespace {

ClusteredDataset dataset_from_arrays(const std::vector<std::string>& ids, const Eigen::VectorXd& time,
                                     const Eigen::VectorXi& event, const Eigen::MatrixXd& covariates) {
  const auto n = static_cast<Eigen::Index>(ids.size());
  if (time.size() != n || event.size() != n || covariates.rows() != n) {
    throw std::invalid_argument("cluster, time, event and covariates must have the same number of rows");
  }
  std::vector<Cluster> clusters;
  std::unordered_map<std::string, std::size_t> index;
  for (Eigen::Index r = 0; r < n; ++r) {
    auto [it, fresh] = index.try_emplace(ids[r], clusters.size());
    if (fresh) clusters.push_back(Cluster{ids[r], {}});
    Observation obs{time(r), event(r), std::vector<double>(covariates.cols())};
    for (Eigen::Index c = 0; c < covariates.cols(); ++c) obs.covariates[c] = covariates(r, c);
    clusters[it->second].observations.push_back(std::move(obs));
  }
  return ClusteredDataset(std::move(clusters), static_cast<std::size_t>(covariates.cols()));
}

FitConfig make_fit_config(const std::string& method, const std::string& family, std::optional<double> tau,
                          std::optional<Coefficients> beta_init, double outer_tol, int outer_max_iter,
                          double newton_tol, int newton_max_iter) {
  FitConfig c;
  c.method = parse_method(method);
  c.family = parse_family(family);
  if (tau) c.tau = CureThreshold{*tau};
  c.beta_init = std::move(beta_init);
  c.outer_tol = outer_tol;
  c.outer_max_iter = outer_max_iter;
  c.newton_tol = newton_tol;
  c.newton_max_iter = newton_max_iter;
  return c;
}

py::dict fit_to_dict(const FitResult& r) {
  py::dict d;
  d["method"] = to_string(r.method);
  d["family"] = to_string(r.family);
  d["beta_hat"] = Eigen::VectorXd(r.beta_hat);
  d["se"] = r.se;
  d["covariance"] = r.covariance;
  d["tau"] = r.tau.tau;
  d["phi_hat"] = r.phi_hat;
  d["rho_hat"] = r.rho_hat;
  d["qif_value"] = r.qif_value;
  d["iterations"] = r.iterations;
  d["converged"] = r.converged;
  d["score_norm"] = r.score_norm;
  d["newton_norms"] = r.newton_norms;
  d["baseline_times"] = r.baseline.jump_times();
  d["baseline_masses"] = r.baseline.jump_masses();
  d["diagnostics"] = r.diagnostics;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Marginal promotion time cure models for clustered survival data";
  m.attr("__version__") = PTCURE_VERSION;

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<ClusteredDataset>(m, "Dataset")
      .def(py::init(&dataset_from_arrays), py::arg("cluster"), py::arg("time"), py::arg("event"),
           py::arg("covariates"), "Rows are grouped by cluster id in order of first appearance.")
      .def_static("read_csv", &read_clustered_csv_file, py::arg("path"))
      .def_static(
          "from_csv_text",
          [](const std::string& text) {
            std::istringstream in(text);
            return read_clustered_csv(in);
          },
          py::arg("text"))
      .def("to_csv_text",
           [](const ClusteredDataset& ds) {
             std::ostringstream out;
             write_clustered_csv(ds, out);
             return out.str();
           })
      .def_property_readonly("num_clusters", &ClusteredDataset::num_clusters)
      .def_property_readonly("num_obs", &ClusteredDataset::num_obs)
      .def_property_readonly("num_events", &ClusteredDataset::num_events)
      .def_property_readonly("p_x", &ClusteredDataset::p_x)
      .def_property_readonly("design", &ClusteredDataset::design)
      .def_property_readonly("times", &ClusteredDataset::times)
      .def_property_readonly("events", &ClusteredDataset::events)
      .def_property_readonly("cluster_ids",
                             [](const ClusteredDataset& ds) {
                               std::vector<std::string> ids;
                               for (const auto& c : ds.clusters()) ids.push_back(c.id);
                               return ids;
                             })
      .def_property_readonly("is_valid", &ClusteredDataset::is_valid)
      .def_property_readonly("violations", [](const ClusteredDataset& ds) {
        std::vector<std::string> out;
        for (const auto& v : ds.violations()) out.push_back(v.to_string());
        return out;
      });

  m.def(
      "fit",
      [](const ClusteredDataset& ds, const std::string& method, const std::string& family, std::optional<double> tau,
         std::optional<Coefficients> beta_init, double outer_tol, int outer_max_iter, double newton_tol,
         int newton_max_iter) {
        const auto cfg = make_fit_config(method, family, tau, std::move(beta_init), outer_tol, outer_max_iter,
                                         newton_tol, newton_max_iter);
        FitResult r;
        {
          py::gil_scoped_release release;
          r = fit(ds, cfg);
        }
        return fit_to_dict(r);
      },
      py::arg("dataset"), py::arg("method") = "npm", py::arg("family") = "independence", py::arg("tau") = py::none(),
      py::arg("beta_init") = py::none(), py::arg("outer_tol") = 1e-6, py::arg("outer_max_iter") = 100,
      py::arg("newton_tol") = 1e-8, py::arg("newton_max_iter") = 50,
      "Alternating baseline / regression fit. Returns a dict of estimates and diagnostics.");

  m.def(
      "bootstrap",
      [](const ClusteredDataset& ds, std::uint64_t seed, int replicates, const std::string& method,
         const std::string& family, std::vector<double> query_times, unsigned threads) {
        const auto cfg = make_fit_config(method, family, std::nullopt, std::nullopt, 1e-6, 100, 1e-8, 50);
        BootstrapConfig boot;
        boot.replicates = replicates;
        boot.seed = seed;
        boot.query_times = std::move(query_times);
        boot.threads = threads;
        BootstrapResult r;
        {
          py::gil_scoped_release release;
          r = bootstrap(ds, cfg, boot);
        }
        py::dict d;
        d["replicates"] = r.replicates;
        d["failures"] = r.failures;
        d["query_times"] = r.query_times;
        d["beta"] = r.beta;
        d["baseline"] = r.baseline;
        d["phi"] = r.phi;
        d["rho"] = r.rho;
        d["beta_variance"] = r.beta_variance;
        d["baseline_variance"] = r.baseline_variance;
        d["phi_variance"] = r.phi_variance;
        d["rho_variance"] = r.rho_variance;
        return d;
      },
      py::arg("dataset"), py::arg("seed"), py::arg("replicates") = 200, py::arg("method") = "gee",
      py::arg("family") = "exchangeable", py::arg("query_times") = std::vector<double>{}, py::arg("threads") = 0);

  m.def(
      "estimate_baseline",
      [](const ClusteredDataset& ds, const Coefficients& beta, std::optional<double> tau) {
        const auto t = tau ? CureThreshold{*tau} : default_threshold(ds);
        const auto f = estimate_baseline(beta, ds, t);
        return py::make_tuple(f.jump_times(), f.jump_masses());
      },
      py::arg("dataset"), py::arg("beta"), py::arg("tau") = py::none(),
      "Jump times and masses of the baseline CDF estimate at fixed coefficients.");

  m.def("solve_lambda", py::overload_cast<const std::vector<double>&, std::size_t>(&solve_lambda),
        py::arg("event_weights"), py::arg("num_obs"));

  m.def(
      "simulate",
      [](std::uint64_t seed, std::size_t clusters, std::size_t cluster_size, const Coefficients& beta_true,
         const std::string& structure, double tau_corr, double eta_corr, std::optional<double> nu,
         std::optional<double> censoring, double censor_max, unsigned threads) {
        SimConfig c;
        c.seed = seed;
        c.clusters = clusters;
        c.cluster_size = cluster_size;
        c.beta_true = beta_true;
        c.structure = parse_family(structure);
        c.tau_corr = tau_corr;
        c.eta_corr = eta_corr;
        c.censor_max = censor_max;
        if (nu && censoring) throw InputError("give nu or censoring, not both");
        if (nu) c.nu = *nu;
        c.validate();
        if (censoring) c.nu = calibrate_nu_for_censoring(c, *censoring);
        py::gil_scoped_release release;
        return Simulator(c).simulate(nullptr, threads);
      },
      py::arg("seed"), py::arg("clusters") = 100, py::arg("cluster_size") = 5,
      py::arg("beta_true") = Coefficients((Coefficients(3) << -0.5, 1.0, 1.0).finished()),
      py::arg("structure") = "exchangeable", py::arg("tau_corr") = 0.0, py::arg("eta_corr") = 0.0,
      py::arg("nu") = py::none(), py::arg("censoring") = py::none(), py::arg("censor_max") = 3.0,
      py::arg("threads") = 1);

  m.def("expected_censoring_rate", &expected_censoring_rate, py::arg("beta"), py::arg("nu"),
        py::arg("censor_max") = 3.0);
  m.def("bivariate_normal_cdf", &bivariate_normal_cdf, py::arg("h"), py::arg("k"), py::arg("rho"));
  m.def("solve_emrich", &solve_emrich, py::arg("pi_j"), py::arg("pi_k"), py::arg("eta"));
  m.def("true_baseline_cdf", &true_baseline_cdf, py::arg("t"));

  m.def(
      "kaplan_meier",
      [](const ClusteredDataset& ds) {
        const auto c = kaplan_meier(ds);
        py::dict d;
        d["times"] = c.times;
        d["survival"] = c.survival;
        d["at_risk"] = c.at_risk;
        d["events"] = c.events;
        return d;
      },
      py::arg("dataset"));

  m.def(
      "run_study",
      [](std::uint64_t seed, int replications, double censoring, const std::string& structure,
         const std::string& strength, const std::string& methods, std::size_t clusters, std::size_t cluster_size,
         unsigned threads) {
        StudyDesign base;
        base.seed = seed;
        base.replications = replications;
        base.methods = parse_method_list(methods);
        base.sim.clusters = clusters;
        base.sim.cluster_size = cluster_size;
        base.threads = threads;
        const auto design = design_for(base, StudySetting{censoring, parse_family(structure), strength});
        StudyResult r;
        {
          py::gil_scoped_release release;
          r = run_study(design);
        }
        py::list rows;
        for (std::size_t m = 0; m < r.summary.methods.size(); ++m) {
          const auto& ms = r.summary.methods[m];
          py::dict row;
          row["method"] = ms.spec.label();
          row["used"] = ms.used;
          row["excluded"] = ms.excluded;
          std::vector<double> bias, var, est_var, cp, mse;
          for (const auto& c : ms.coefficients) {
            bias.push_back(c.bias);
            var.push_back(c.variance);
            est_var.push_back(c.mean_est_variance);
            cp.push_back(c.coverage);
            mse.push_back(c.mse);
          }
          row["bias"] = bias;
          row["variance"] = var;
          row["mean_est_variance"] = est_var;
          row["coverage"] = cp;
          row["mse"] = mse;
          row["mse_ratio"] = r.summary.efficiency.mse_ratio[m];
          rows.append(row);
        }
        py::dict d;
        d["nu"] = design.sim.nu;
        d["mean_censoring_rate"] = r.summary.mean_censoring_rate;
        d["methods"] = rows;
        return d;
      },
      py::arg("seed"), py::arg("replications") = 200, py::arg("censoring") = 0.2,
      py::arg("structure") = "exchangeable", py::arg("strength") = "strong",
      py::arg("methods") = "npm,gee-exchangeable,gee-ar1,qif-exchangeable,qif-ar1", py::arg("clusters") = 100,
      py::arg("cluster_size") = 5, py::arg("threads") = 0);
}
