#include "doctest.h"
#include "support.hpp"

#include "ptcure/data.hpp"
#include "ptcure/error.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <random>
#include <sstream>

using namespace ptcure;
using testing::dataset;
using testing::obs;

TEST_CASE("minimal dataset with one event is valid") {
  const auto ds = dataset({{obs(1.0, 1)}}, 0);
  CHECK(validate(ds).empty());
  CHECK(ds.is_valid());
  CHECK(ds.num_obs() == 1);
  CHECK(ds.num_params() == 1);
}

TEST_CASE("non-binary event is reported with coordinates") {
  const auto ds = dataset({{obs(1.0, 1), obs(2.0, 2)}}, 0);
  const auto report = validate(ds);
  REQUIRE(report.size() == 1);
  CHECK(report[0].message == "event not binary");
  CHECK(report[0].cluster == 0u);
  CHECK(report[0].observation == 1u);
  CHECK_THROWS_AS(ds.require_valid(), InvalidDatasetError);
}

TEST_CASE("other invariant violations") {
  CHECK_FALSE(dataset({{obs(-1.0, 1)}}, 0).is_valid());
  CHECK_FALSE(dataset({{obs(1.0, 0), obs(2.0, 0)}}, 0).is_valid());  // no events
  CHECK_FALSE(dataset({{obs(1.0, 1, {1.0, 2.0})}}, 1).is_valid());   // covariate count
  CHECK_FALSE(dataset({{}}, 0).is_valid());                          // empty cluster
  CHECK_FALSE(dataset({{obs(1.0, 1, {std::nan("")})}, {obs(2.0, 1, {1.0})}}, 1).is_valid());
}

TEST_CASE("covariate identical to the intercept is a rank violation") {
  const auto ds = dataset({{obs(1.0, 1, {1.0}), obs(2.0, 0, {1.0})}, {obs(3.0, 1, {1.0})}}, 1);
  const auto report = validate(ds);
  REQUIRE(report.size() == 1);
  CHECK(report[0].message.find("rank") != std::string::npos);
  const auto ok = dataset({{obs(1.0, 1, {0.0}), obs(2.0, 0, {1.0})}, {obs(3.0, 1, {0.5})}}, 1);
  CHECK(validate(ok).empty());
}

TEST_CASE("numerical_rank agrees with an SVD rank oracle") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 50; ++trial) {
    const int rows = 3 + trial % 5;
    const int cols = 1 + trial % 4;
    const int true_rank = std::min(rows, 1 + trial % cols);
    Eigen::MatrixXd a(rows, true_rank), b(true_rank, cols);
    for (int i = 0; i < a.size(); ++i) a.data()[i] = z(rng);
    for (int i = 0; i < b.size(); ++i) b.data()[i] = z(rng);
    const Eigen::MatrixXd m = a * b;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    svd.setThreshold(1e-10);
    CHECK(numerical_rank(m) == svd.rank());
  }
}

TEST_CASE("design_row prepends the intercept") {
  CHECK(design_row(obs(1, 1, {})).size() == 1);
  const auto r = design_row(obs(1, 1, {2.0, -1.0}));
  REQUIRE(r.size() == 3);
  CHECK(r(0) == 1.0);
  CHECK(r(1) == 2.0);
  CHECK(r(2) == -1.0);
  const auto s = design_row(obs(1, 1, {0.3}));
  CHECK(s(1) == 0.3);
}

TEST_CASE("mu and cure probability") {
  CHECK(mu(Coefficients::Zero(3), obs(1, 1, {0.4, 2.0})) == 1.0);
  CHECK(mu(Coefficients{{-0.5, 1.0, 1.0}}, obs(1, 1, {0.0, 0.0})) == doctest::Approx(0.60653).epsilon(1e-5));
  CHECK(mu(Coefficients{{1.0}}, obs(1, 1)) == doctest::Approx(std::exp(1.0)));
  CHECK(cure_probability(Coefficients{{0.0}}, obs(1, 1)) == doctest::Approx(0.367879).epsilon(1e-6));
  CHECK(cure_probability(Coefficients{{-2.336}}, obs(1, 1)) == doctest::Approx(0.9078).epsilon(1e-4));
  CHECK_THROWS_AS(mu(Coefficients{{701.0}}, obs(1, 1)), OverflowError);
  CHECK_THROWS_AS(mu_vector(Coefficients{{0.0, 800.0}}, dataset({{obs(1, 1, {1.0})}}, 1)), OverflowError);
}

TEST_CASE("cure probability is strictly decreasing in the linear predictor") {
  double prev = 2.0;
  for (int k = 0; k < 100; ++k) {
    const double eta = -5.0 + 0.08 * k;
    const double p = cure_probability(Coefficients{{eta}}, obs(1, 1));
    CHECK(p < prev);
    CHECK(p > 0.0);
    prev = p;
  }
}

TEST_CASE("survival at F = 1 equals the cure probability") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z;
  for (int k = 0; k < 20; ++k) {
    const Coefficients beta{{z(rng), z(rng)}};
    const auto o = obs(1, 1, {z(rng)});
    CHECK(std::exp(-mu(beta, o) * 1.0) == doctest::Approx(cure_probability(beta, o)).epsilon(1e-12));
  }
}

TEST_CASE("CSV ingestion keeps cluster and row order") {
  std::istringstream in("cluster,time,event,x1\nb,1.5,1,0.2\na,2.0,0,1\nb,0.5,0,-1\n");
  const auto ds = read_clustered_csv(in);
  REQUIRE(ds.num_clusters() == 2);
  CHECK(ds.clusters()[0].id == "b");
  CHECK(ds.clusters()[0].observations[1].time == 0.5);
  CHECK(ds.times()(1) == 0.5);
  CHECK(ds.times()(2) == 2.0);
  CHECK(ds.design()(0, 1) == 0.2);

  std::ostringstream out;
  write_clustered_csv(ds, out);
  std::istringstream back(out.str());
  const auto again = read_clustered_csv(back);
  CHECK(again.times() == ds.times());
  CHECK(again.design() == ds.design());
}

TEST_CASE("CSV errors carry line numbers") {
  auto line_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      read_clustered_csv(in);
    } catch (const InputError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  CHECK(line_of("cluster,time,event\n1,1.0,1\n1,abc,0\n") == 3);
  CHECK(line_of("cluster,time,event,x1\n1,1.0,1\n") == 2);
  CHECK(line_of("cluster,time,event\n\n1,1.0,3\n") == 3);
  CHECK(line_of("id,time,event\n") == 1);
  CHECK(line_of("cluster,time,event\n1,-2,1\n") == 2);
}
