#include "doctest.h"

#include "ptcure/config.hpp"
#include "ptcure/error.hpp"

#include <sstream>

using namespace ptcure;

namespace {

ConfigMap parse(const std::string& text) {
  std::istringstream in(text);
  return ConfigMap::parse(in);
}

std::size_t error_line(const std::function<void()>& f) {
  try {
    f();
  } catch (const InputError& e) {
    return e.line();
  }
  return 9999;
}

}  // namespace

TEST_CASE("key=value parsing with comments") {
  auto m = parse("# header\nclusters = 40\n\ncluster_size=4   # trailing\nbeta_true = -0.5, 1, 1\n");
  SimConfig c;
  apply_sim_config(m, c);
  m.require_consumed();
  CHECK(c.clusters == 40);
  CHECK(c.cluster_size == 4);
  CHECK(c.beta_true(0) == -0.5);
  CHECK(m.empty());
}

TEST_CASE("JSON parsing") {
  auto m = parse(R"({"clusters": 12, "beta_true": [0.1, 0.2, 0.3], "structure": "ar1", "nu": -0.25})");
  SimConfig c;
  apply_sim_config(m, c);
  m.require_consumed();
  CHECK(c.clusters == 12);
  CHECK(c.beta_true(2) == 0.3);
  CHECK(c.structure == CorrelationFamily::Ar1);
  CHECK(c.nu == -0.25);
}

TEST_CASE("malformed lines and unknown keys carry line numbers") {
  CHECK(error_line([] { parse("clusters = 3\nno equals sign\n"); }) == 2);
  CHECK(error_line([] { parse("a = 1\n\na = 2\n"); }) == 3);
  CHECK(error_line([] {
          auto m = parse("clusters = 3\n# note\nclustr = 4\nnu = 0\n");
          SimConfig c;
          apply_sim_config(m, c);
          m.require_consumed();
        }) == 3);
  CHECK(error_line([] {
          auto m = parse("clusters = 3\ntau_corr = lots\n");
          SimConfig c;
          apply_sim_config(m, c);
        }) == 2);
  CHECK_THROWS_AS(
      [] {
        auto m = parse("tau_corr = 1.5\n");
        SimConfig c;
        apply_sim_config(m, c);
      }(),
      InputError);
}

TEST_CASE("SimConfig round-trips through key=value and JSON") {
  SimConfig c;
  c.clusters = 284;
  c.cluster_size = 9;
  c.beta_true = Coefficients{{-0.5, 1.0 / 3.0, 0.1}};
  c.structure = CorrelationFamily::Ar1;
  c.tau_corr = 0.4;
  c.eta_corr = 0.8;
  c.nu = -0.7204123456789;
  c.censor_max = 2.5;
  c.seed = 18446744073709551615ULL;
  for (const auto& text : {to_key_values(c), to_json(c)}) {
    auto m = parse(text);
    SimConfig back;
    apply_sim_config(m, back);
    m.require_consumed();
    CHECK(back.clusters == c.clusters);
    CHECK(back.cluster_size == c.cluster_size);
    CHECK(back.beta_true == c.beta_true);
    CHECK(back.structure == c.structure);
    CHECK(back.tau_corr == c.tau_corr);
    CHECK(back.eta_corr == c.eta_corr);
    CHECK(back.nu == c.nu);
    CHECK(back.censor_max == c.censor_max);
    CHECK(back.seed == c.seed);
  }
}

TEST_CASE("censoring key calibrates nu") {
  auto m = parse("censoring = 0.5\n");
  SimConfig c;
  apply_sim_config(m, c);
  CHECK(c.nu == doctest::Approx(-0.7204).epsilon(1e-3));
}

TEST_CASE("fit and study keys") {
  auto m = parse("method = qif\nfamily = exch\ntau = 1.4\nnewton_tol = 1e-9\n");
  FitConfig f;
  apply_fit_config(m, f);
  CHECK(f.method == Method::Qif);
  CHECK(f.family == CorrelationFamily::Exchangeable);
  CHECK(f.tau->tau == 1.4);
  CHECK(f.newton_tol == 1e-9);

  auto s = parse("replications = 7\nmethods = npm,gee-ar1\nfit.outer_max_iter = 20\nclusters = 50\nseed = 3\n");
  StudyDesign d;
  apply_study_config(s, d);
  s.require_consumed();
  CHECK(d.replications == 7);
  CHECK(d.methods.size() == 2);
  CHECK(d.fit.outer_max_iter == 20);
  CHECK(d.sim.clusters == 50);
  CHECK(d.seed == 3);

  auto bad = parse("fit.bogus = 1\n");
  StudyDesign e;
  CHECK_THROWS_AS(apply_study_config(bad, e), InputError);
}

TEST_CASE("method lists") {
  const auto all = parse_method_list("npm,gee-exchangeable,gee-ar1,qif-exchangeable,qif-ar1");
  CHECK(all == default_methods());
  CHECK(all[3].label() == "qif-exchangeable");
  CHECK_THROWS(parse_method_list("gee"));
  CHECK_THROWS(parse_method_list("npm,lasso-ar1"));
}
