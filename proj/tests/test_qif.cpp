#include "doctest.h"
#include "support.hpp"

#include "ptcure/gee.hpp"
#include "ptcure/qif.hpp"
#include "ptcure/random.hpp"
#include "ptcure/simulate.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <random>
#include <set>

using namespace ptcure;
using testing::dataset;
using testing::obs;

namespace {

StepCdf flat_baseline(const ClusteredDataset& ds) {
  std::set<double> times;
  for (Eigen::Index r = 0; r < ds.times().size(); ++r) {
    if (ds.events()(r) == 1.0) times.insert(ds.times()(r));
  }
  std::vector<double> t(times.begin(), times.end());
  return StepCdf(t, std::vector<double>(t.size(), 1.0 / static_cast<double>(t.size())));
}

StepCdf true_baseline_at_times(const ClusteredDataset& ds) {
  std::set<double> times(ds.times().data(), ds.times().data() + ds.times().size());
  std::vector<double> t, m;
  double prev = 0.0;
  for (double x : times) {
    const double f = true_baseline_cdf(x);
    if (f > prev) {
      t.push_back(x);
      m.push_back(f - prev);
      prev = f;
    }
  }
  return StepCdf(t, m);
}

// Dense oracle for g_i: block s = X' diag(mu) B^{-1/2} M_s B^{-1/2} (delta - F mu).
Eigen::MatrixXd dense_g(const Coefficients& beta, const ClusteredDataset& ds, const StepCdf& f,
                        CorrelationFamily family) {
  const int m = basis_count(family);
  const auto p = beta.size();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m * p, static_cast<Eigen::Index>(ds.num_clusters()));
  for (std::size_t i = 0; i < ds.num_clusters(); ++i) {
    const auto& ob = ds.clusters()[i].observations;
    const auto n = static_cast<Eigen::Index>(ob.size());
    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd mu(n), r(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      x.row(j) = design_row(ob[j]).transpose();
      mu(j) = std::exp(x.row(j).dot(beta));
      r(j) = ob[j].event - f(ob[j].time) * mu(j);
    }
    // Basis patterns written out explicitly.
    std::vector<Eigen::MatrixXd> basis{Eigen::MatrixXd::Identity(n, n)};
    if (family == CorrelationFamily::Exchangeable && n > 1) {
      basis.push_back(Eigen::MatrixXd::Ones(n, n) - Eigen::MatrixXd::Identity(n, n));
    }
    if (family == CorrelationFamily::Ar1 && n > 1) {
      Eigen::MatrixXd band = Eigen::MatrixXd::Zero(n, n), corner = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index j = 0; j + 1 < n; ++j) band(j, j + 1) = band(j + 1, j) = 1.0;
      corner(0, 0) = corner(n - 1, n - 1) = 1.0;
      basis.push_back(band);
      basis.push_back(corner);
    }
    const Eigen::MatrixXd b_inv_half = mu.cwiseSqrt().cwiseInverse().asDiagonal();
    for (std::size_t s = 0; s < basis.size(); ++s) {
      g.block(static_cast<Eigen::Index>(s) * p, static_cast<Eigen::Index>(i), p, 1) =
          x.transpose() * mu.asDiagonal() * b_inv_half * basis[s] * b_inv_half * r;
    }
  }
  return g;
}

Coefficients newton(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& u, Coefficients b) {
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd step = testing::central_difference(u, b).lu().solve(-u(b));
    b += step;
    if (step.cwiseAbs().maxCoeff() < 1e-13) break;
  }
  return b;
}

}  // namespace

TEST_CASE("basis matrices") {
  const auto ex = basis_matrices(CorrelationFamily::Exchangeable, 3);
  REQUIRE(ex.size() == 2);
  CHECK(ex[0] == Eigen::MatrixXd::Identity(3, 3));
  CHECK(ex[1] == Eigen::MatrixXd::Ones(3, 3) - Eigen::MatrixXd::Identity(3, 3));
  const auto ar = basis_matrices(CorrelationFamily::Ar1, 3);
  REQUIRE(ar.size() == 3);
  Eigen::MatrixXd band(3, 3), corner(3, 3);
  band << 0, 1, 0, 1, 0, 1, 0, 1, 0;
  corner << 1, 0, 0, 0, 0, 0, 0, 0, 1;
  CHECK(ar[1] == band);
  CHECK(ar[2] == corner);
  for (auto fam : {CorrelationFamily::Independence, CorrelationFamily::Exchangeable, CorrelationFamily::Ar1}) {
    const auto one = basis_matrices(fam, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0](0, 0) == 1.0);
  }
  CHECK(basis_count(CorrelationFamily::Independence) == 1);
  CHECK(basis_count(CorrelationFamily::Exchangeable) == 2);
  CHECK(basis_count(CorrelationFamily::Ar1) == 3);
}

TEST_CASE("extended score matches the dense construction") {
  for (unsigned seed = 0; seed < 8; ++seed) {
    const auto ds = testing::random_dataset(300 + seed, 6, 4, 2);
    const auto f = flat_baseline(ds);
    const Coefficients beta{{0.2, -0.3, 0.1 * seed}};
    const auto ui = score_independent(beta, ds, f);
    for (auto fam : {CorrelationFamily::Independence, CorrelationFamily::Exchangeable, CorrelationFamily::Ar1}) {
      const auto es = extended_score(beta, ds, f, fam);
      const auto g = dense_g(beta, ds, f, fam);
      const double k = static_cast<double>(ds.num_clusters());
      CHECK(testing::relative_error(es.g_per_cluster, g) < 1e-12);
      CHECK(testing::relative_error(es.mean, g.rowwise().sum() / k) < 1e-12);
      CHECK(testing::relative_error(es.weight, g * g.transpose() / k) < 1e-12);
      CHECK(testing::relative_error(es.mean.head(3) * k, ui) < 1e-12);
      CHECK(testing::min_eigenvalue(es.weight) >= -1e-12 * es.weight.trace());
    }
  }
}

TEST_CASE("zero residuals give a zero extended score") {
  const auto ds = dataset({{obs(1, 1, {0.0}), obs(0.5, 0, {1.0})}}, 1);
  const StepCdf f({1.0}, {1.0});
  const Coefficients beta{{0.0, 0.7}};
  const auto es = extended_score(beta, ds, f, CorrelationFamily::Exchangeable);
  CHECK(es.mean.cwiseAbs().maxCoeff() == 0.0);
  CHECK(es.weight.cwiseAbs().maxCoeff() == 0.0);
  CHECK(invert_weight(es.weight).zero);
  CHECK(qif_objective(es) == 0.0);
  CHECK(score_qif(beta, ds, f, CorrelationFamily::Exchangeable).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("extended score Jacobian matches finite differences") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    const auto ds = testing::random_dataset(400 + seed, 5, 4, 2);
    const auto f = flat_baseline(ds);
    const Coefficients beta{{-0.1, 0.4, 0.2}};
    for (auto fam : {CorrelationFamily::Independence, CorrelationFamily::Exchangeable, CorrelationFamily::Ar1}) {
      const auto fd = testing::central_difference(
          [&](const Eigen::VectorXd& b) {
            return Eigen::VectorXd(extended_score(b, ds, f, fam).mean * static_cast<double>(ds.num_clusters()));
          },
          beta);
      CHECK(testing::relative_error(extended_score_jacobian(beta, ds, f, fam), fd) < 1e-5);
      const auto es = extended_score(beta, ds, f, fam);
      CHECK(testing::relative_error(es.jacobian * static_cast<double>(ds.num_clusters()), fd) < 1e-5);
    }
  }
  const auto ds = dataset({{obs(1, 1), obs(2, 0)}, {obs(3, 1)}}, 0);
  const StepCdf f({1.0, 3.0}, {0.4, 0.6});
  CHECK(extended_score_jacobian(Coefficients{{0.3}}, ds, f, CorrelationFamily::Independence)(0, 0) ==
        doctest::Approx(-1.8 * std::exp(0.3)).epsilon(1e-12));
}

TEST_CASE("objective and score against dense algebra") {
  const auto ds = testing::random_dataset(11, 40, 4, 2);
  const auto f = flat_baseline(ds);
  const Coefficients beta{{0.1, 0.2, -0.2}};
  for (auto fam : {CorrelationFamily::Exchangeable, CorrelationFamily::Ar1}) {
    const auto g = dense_g(beta, ds, f, fam);
    const double k = static_cast<double>(ds.num_clusters());
    const Eigen::VectorXd gk = g.rowwise().sum() / k;
    const Eigen::MatrixXd ck = g * g.transpose() / k;
    const Eigen::MatrixXd cinv = ck.inverse();
    CHECK(qif_objective(beta, ds, f, fam) == doctest::Approx(gk.dot(cinv * gk)).epsilon(1e-10));
    const Eigen::MatrixXd gdot = extended_score_jacobian(beta, ds, f, fam) / k;
    CHECK(testing::relative_error(score_qif(beta, ds, f, fam), gdot.transpose() * cinv * gk) < 1e-9);
    CHECK(qif_objective(beta, ds, f, fam) >= 0.0);
  }
}

TEST_CASE("single cluster: ridge path against the pseudo-inverse") {
  const auto ds = dataset({{obs(0.4, 1, {0.2}), obs(1.1, 1, {-0.5}), obs(0.7, 0, {1.3})}}, 1);
  const auto f = flat_baseline(ds);
  const Coefficients beta{{0.1, 0.3}};
  const auto es = extended_score(beta, ds, f, CorrelationFamily::Exchangeable);
  const auto inv = invert_weight(es.weight);
  CHECK(inv.ridged);
  // C = g g' so the pseudo-inverse objective is exactly 1; the ridge shifts it by
  // ridge / (|g|^2 + ridge).
  const Eigen::VectorXd g = es.g_per_cluster.col(0);
  const Eigen::MatrixXd pinv = es.weight.completeOrthogonalDecomposition().pseudoInverse();
  CHECK(g.dot(pinv * g) == doctest::Approx(1.0).epsilon(1e-8));
  const double ridge = 1e-8 * es.weight.trace() / static_cast<double>(g.size());
  CHECK(qif_objective(es) == doctest::Approx(g.squaredNorm() / (g.squaredNorm() + ridge)).epsilon(1e-6));
  CHECK(qif_objective(es) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("half gradient of Q approaches U^Q as K grows") {
  auto gap = [](std::size_t k) {
    double total = 0;
    for (std::uint64_t rep = 0; rep < 6; ++rep) {
      SimConfig sim;
      sim.clusters = k;
      sim.cluster_size = 3;
      sim.tau_corr = 0.3;
      sim.eta_corr = 0.3;
      sim.nu = 0.3525;
      sim.seed = derive_seed(55, rep);
      const auto ds = simulate(sim);
      const auto f = true_baseline_at_times(ds);
      const auto fam = CorrelationFamily::Exchangeable;
      const auto grad = testing::central_difference(
          [&](const Eigen::VectorXd& b) { return Eigen::VectorXd::Constant(1, qif_objective(b, ds, f, fam)); },
          sim.beta_true, 1e-5);
      total += (grad.transpose() / 2 - score_qif(sim.beta_true, ds, f, fam)).norm();
    }
    return total;
  };
  CHECK(gap(100) < gap(10));
}

TEST_CASE("independence QIF root equals the independence score root") {
  const auto ds = testing::random_dataset(12, 30, 3, 1);
  const auto f = flat_baseline(ds);
  const auto bi = newton([&](const Eigen::VectorXd& b) { return score_independent(b, ds, f); }, Coefficients::Zero(2));
  const auto bq = newton([&](const Eigen::VectorXd& b) { return score_qif(b, ds, f, CorrelationFamily::Independence); },
                         bi + Eigen::Vector2d(0.05, -0.05));
  CHECK((bi - bq).cwiseAbs().maxCoeff() < 1e-8);

  // The covariance then agrees with the independence sandwich.
  const auto q = qif_covariance(bi, ds, f, CorrelationFamily::Independence);
  const auto s = sandwich_covariance(bi, ds, f, WorkingCorrelation::independence());
  CHECK(testing::relative_error(q.covariance, s.covariance) < 1e-6);
}

TEST_CASE("QIF covariance is symmetric PSD with a small form gap") {
  const auto ds = testing::random_dataset(13, 60, 4, 2);
  const auto f = flat_baseline(ds);
  const Coefficients beta{{0.0, 0.1, 0.1}};
  for (auto fam : {CorrelationFamily::Exchangeable, CorrelationFamily::Ar1}) {
    const auto q = qif_covariance(beta, ds, f, fam);
    CHECK((q.covariance - q.covariance.transpose()).cwiseAbs().maxCoeff() < 1e-10 * q.covariance.norm());
    CHECK(testing::min_eigenvalue(q.covariance) >= -1e-8 * q.covariance.trace());
    CHECK(q.max_relative_gap < 1e-8);
    CHECK(q.standard_errors().size() == 3);
  }
}

TEST_CASE("property: GMM weighting by the inverse covariance is optimal") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> z;
  auto random_pd = [&](int d) {
    Eigen::MatrixXd a(d, d);
    for (int i = 0; i < a.size(); ++i) a.data()[i] = z(rng);
    return Eigen::MatrixXd(a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d));
  };
  for (int draw = 0; draw < 100; ++draw) {
    const int p = 1 + draw % 3;
    const int d = p + 1 + draw % 4;
    Eigen::MatrixXd gdot(d, p);
    for (int i = 0; i < gdot.size(); ++i) gdot.data()[i] = z(rng);
    const Eigen::MatrixXd c = random_pd(d);
    const Eigen::MatrixXd w = random_pd(d);
    const Eigen::MatrixXd a = (gdot.transpose() * w * gdot).inverse();
    const Eigen::MatrixXd general = a * gdot.transpose() * w * c * w * gdot * a.transpose();
    const Eigen::MatrixXd optimal = (gdot.transpose() * c.inverse() * gdot).inverse();
    const Eigen::MatrixXd diff = general - optimal;
    CHECK(testing::min_eigenvalue(diff) >= -1e-8 * general.trace());
  }
}
