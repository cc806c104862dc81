#include "ptcure/qif.hpp"

#include "ptcure/error.hpp"
#include "ptcure/gee.hpp"
#include "score_kernel.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ptcure {

namespace {

constexpr double kRidgeTrigger = 1e-10;
constexpr double kRidgeScale = 1e-8;

class BasisCache {
 public:
  explicit BasisCache(CorrelationFamily family) : family_(family) {}

  const std::vector<Eigen::MatrixXd>& get(Eigen::Index n) {
    if (static_cast<std::size_t>(n) >= cache_.size()) cache_.resize(static_cast<std::size_t>(n) + 1);
    auto& slot = cache_[static_cast<std::size_t>(n)];
    if (slot.empty()) slot = basis_matrices(family_, n);
    return slot;
  }

 private:
  CorrelationFamily family_;
  std::vector<std::vector<Eigen::MatrixXd>> cache_;
};

template <typename Fn>
void for_each_block(const Coefficients& beta, const ClusteredDataset& ds, const StepCdf& baseline,
                    CorrelationFamily family, Fn&& fn) {
  ds.require_valid();
  const Eigen::VectorXd m = mu_vector(beta, ds);
  const Eigen::VectorXd f = baseline.at_observed_times(ds);
  BasisCache bases(family);
  for (std::size_t i = 0; i < ds.num_clusters(); ++i) {
    const auto b = ds.cluster_begin(i);
    const auto n = ds.cluster_size(i);
    const detail::ClusterBlock c{ds.design().middleRows(b, n), m.segment(b, n), f.segment(b, n),
                                 ds.events().segment(b, n)};
    const auto& mats = bases.get(n);
    for (std::size_t s = 0; s < mats.size(); ++s) fn(i, static_cast<Eigen::Index>(s), c, mats[s]);
  }
}

}  // namespace

int basis_count(CorrelationFamily family) {
  switch (family) {
    case CorrelationFamily::Independence: return 1;
    case CorrelationFamily::Exchangeable: return 2;
    case CorrelationFamily::Ar1: return 3;
  }
  return 1;
}

std::vector<Eigen::MatrixXd> basis_matrices(CorrelationFamily family, Eigen::Index n) {
  if (n < 1) throw std::invalid_argument("cluster size must be positive");
  std::vector<Eigen::MatrixXd> out;
  out.push_back(Eigen::MatrixXd::Identity(n, n));
  if (n == 1) return out;
  if (family == CorrelationFamily::Exchangeable) {
    out.push_back(Eigen::MatrixXd::Ones(n, n) - Eigen::MatrixXd::Identity(n, n));
  } else if (family == CorrelationFamily::Ar1) {
    Eigen::MatrixXd band = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index j = 0; j + 1 < n; ++j) band(j, j + 1) = band(j + 1, j) = 1.0;
    Eigen::MatrixXd corners = Eigen::MatrixXd::Zero(n, n);
    corners(0, 0) = 1.0;
    corners(n - 1, n - 1) = 1.0;
    out.push_back(std::move(band));
    out.push_back(std::move(corners));
  }
  return out;
}

ExtendedScore extended_score(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                             CorrelationFamily family) {
  const auto p = static_cast<Eigen::Index>(dataset.num_params());
  const auto m = basis_count(family);
  const auto k = static_cast<Eigen::Index>(dataset.num_clusters());
  ExtendedScore out;
  out.g_per_cluster = Eigen::MatrixXd::Zero(m * p, k);
  out.jacobian = Eigen::MatrixXd::Zero(m * p, p);
  for_each_block(beta, dataset, baseline, family,
                 [&](std::size_t i, Eigen::Index s, const detail::ClusterBlock& c, const Eigen::MatrixXd& basis) {
                   out.g_per_cluster.col(static_cast<Eigen::Index>(i)).segment(s * p, p) =
                       detail::weighted_score(c, basis);
                   out.jacobian.middleRows(s * p, p) += detail::weighted_jacobian(c, basis);
                 });
  const double inv_k = 1.0 / static_cast<double>(k);
  out.mean = out.g_per_cluster.rowwise().sum() * inv_k;
  out.weight = out.g_per_cluster * out.g_per_cluster.transpose() * inv_k;
  out.jacobian *= inv_k;
  return out;
}

Eigen::MatrixXd extended_score_jacobian(const Coefficients& beta, const ClusteredDataset& dataset,
                                        const StepCdf& baseline, CorrelationFamily family) {
  const auto p = static_cast<Eigen::Index>(dataset.num_params());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(basis_count(family) * p, p);
  for_each_block(beta, dataset, baseline, family,
                 [&](std::size_t, Eigen::Index s, const detail::ClusterBlock& c, const Eigen::MatrixXd& basis) {
                   jac.middleRows(s * p, p) += detail::weighted_jacobian(c, basis);
                 });
  return jac;
}

WeightInverse invert_weight(const Eigen::MatrixXd& weight) {
  WeightInverse out;
  const Eigen::MatrixXd c = 0.5 * (weight + weight.transpose());
  const double trace = c.trace();
  if (!(trace > 0.0)) {
    out.zero = true;
    out.inverse = Eigen::MatrixXd::Zero(c.rows(), c.cols());
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  if (eig.info() != Eigen::Success) throw SingularMatrixError("eigen-decomposition of C_K failed");
  Eigen::VectorXd values = eig.eigenvalues();
  if (values.minCoeff() < kRidgeTrigger * trace) {
    values.array() += kRidgeScale * trace / static_cast<double>(c.rows());
    out.ridged = true;
  }
  if (!(values.minCoeff() > 0.0)) throw SingularMatrixError("C_K is singular beyond ridge repair");
  out.inverse = eig.eigenvectors() * values.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  return out;
}

double qif_objective(const ExtendedScore& score) {
  if (score.mean.isZero(0.0)) return 0.0;
  const auto inv = invert_weight(score.weight);
  return std::max(0.0, score.mean.dot(inv.inverse * score.mean));
}

double qif_objective(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                     CorrelationFamily family) {
  return qif_objective(extended_score(beta, dataset, baseline, family));
}

Eigen::VectorXd score_qif(const ExtendedScore& score, const WeightInverse& inv) {
  if (score.mean.isZero(0.0)) return Eigen::VectorXd::Zero(score.jacobian.cols());
  return score.jacobian.transpose() * (inv.inverse * score.mean);
}

Eigen::VectorXd score_qif(const Coefficients& beta, const ClusteredDataset& dataset, const StepCdf& baseline,
                          CorrelationFamily family) {
  const auto score = extended_score(beta, dataset, baseline, family);
  return score_qif(score, invert_weight(score.weight));
}

Eigen::VectorXd QifCovariance::standard_errors() const {
  return covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
}

QifCovariance qif_covariance(const Coefficients& beta_hat, const ClusteredDataset& dataset,
                             const StepCdf& baseline, CorrelationFamily family) {
  const auto score = extended_score(beta_hat, dataset, baseline, family);
  const auto inv = invert_weight(score.weight);
  if (inv.zero) throw SingularMatrixError("C_K vanishes: every extended score is zero");
  const double k = static_cast<double>(dataset.num_clusters());

  const Eigen::MatrixXd gc = score.jacobian.transpose() * inv.inverse;  // Gdot' C^{-1}
  const Eigen::MatrixXd inner = gc * score.jacobian;                  // Gdot' C^{-1} Gdot
  Eigen::FullPivLU<Eigen::MatrixXd> lu(inner);
  if (!lu.isInvertible()) throw SingularMatrixError("Gdot' C^{-1} Gdot is singular");

  QifCovariance out;
  out.ridged = inv.ridged;
  const Eigen::MatrixXd inner_inv = lu.inverse();
  out.simplified = inner_inv / k;
  out.simplified = 0.5 * (out.simplified + out.simplified.transpose());

  const Eigen::MatrixXd u = gc * score.g_per_cluster;  // columns U^Q_i
  const Eigen::MatrixXd omega = u * u.transpose();
  out.covariance = sandwich(k * inner, omega);

  double gap = 0.0;
  for (Eigen::Index r = 0; r < out.covariance.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.covariance.cols(); ++c) {
      const double a = out.covariance(r, c);
      const double b = out.simplified(r, c);
      const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
      gap = std::max(gap, std::abs(a - b) / scale);
    }
  }
  out.max_relative_gap = gap;
  return out;
}

}  // namespace ptcure
