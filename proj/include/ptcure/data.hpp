#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ptcure {

/// Regression coefficients (beta_0, beta_1, ..., beta_p); the first entry is the intercept.
using Coefficients = Eigen::VectorXd;

/// Linear predictors beyond this magnitude are rejected instead of saturating exp().
inline constexpr double kMaxLinearPredictor = 700.0;

struct Observation {
  double time = 0.0;  // min(failure, censoring)
  int event = 0;      // 1 = failure observed
  std::vector<double> covariates;
};

struct Cluster {
  std::string id;
  std::vector<Observation> observations;  // order matters for AR(1) structures
};

struct Violation {
  std::string message;
  std::optional<std::size_t> cluster;
  std::optional<std::size_t> observation;

  std::string to_string() const;
};

/// K clusters of right-censored observations sharing p_x covariates.
///
/// Immutable after construction. The constructor flattens the clusters into a
/// design matrix with a leading intercept column and runs validation once;
/// estimators call require_valid() before touching the flat arrays.
class ClusteredDataset {
 public:
  ClusteredDataset() = default;
  ClusteredDataset(std::vector<Cluster> clusters, std::size_t p_x);

  const std::vector<Cluster>& clusters() const noexcept { return clusters_; }
  std::size_t p_x() const noexcept { return p_x_; }
  std::size_t num_params() const noexcept { return p_x_ + 1; }
  std::size_t num_clusters() const noexcept { return clusters_.size(); }
  std::size_t num_obs() const noexcept { return static_cast<std::size_t>(times_.size()); }
  std::size_t num_events() const noexcept { return num_events_; }
  std::size_t max_cluster_size() const noexcept;

  /// Offset of cluster i's first row in the flat arrays.
  Eigen::Index cluster_begin(std::size_t i) const { return offsets_[i]; }
  Eigen::Index cluster_size(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

  /// N x (p_x + 1) design matrix; row r is (1, covariates...).
  const Eigen::MatrixXd& design() const noexcept { return design_; }
  const Eigen::VectorXd& times() const noexcept { return times_; }
  const Eigen::VectorXd& events() const noexcept { return events_; }

  bool is_valid() const noexcept { return violations_.empty(); }
  const std::vector<Violation>& violations() const noexcept { return violations_; }
  void require_valid() const;

  /// Largest uncensored time (0 if there are no events).
  double max_event_time() const noexcept;

 private:
  std::vector<Cluster> clusters_;
  std::size_t p_x_ = 0;
  std::vector<Eigen::Index> offsets_{0};
  Eigen::MatrixXd design_;
  Eigen::VectorXd times_;
  Eigen::VectorXd events_;
  std::size_t num_events_ = 0;
  std::vector<Violation> violations_;
};

/// Every invariant violation with cluster/observation coordinates; empty means valid.
std::vector<Violation> validate(const ClusteredDataset& dataset);

/// Column rank of a matrix by Gaussian elimination with partial pivoting.
Eigen::Index numerical_rank(const Eigen::MatrixXd& matrix, double relative_tol = 1e-10);

Eigen::VectorXd design_row(const Observation& obs);

double linear_predictor(const Coefficients& beta, const Observation& obs);
double mu(const Coefficients& beta, const Observation& obs);
double cure_probability(const Coefficients& beta, const Observation& obs);

/// exp(beta' X) for every row of the dataset; throws OverflowError past kMaxLinearPredictor.
Eigen::VectorXd mu_vector(const Coefficients& beta, const ClusteredDataset& dataset);

/// Exact exp(eta) with the overflow guard applied to a single linear predictor.
double checked_exp(double eta);

// CSV ingestion: header `cluster,time,event,x1,...,xp`. Rows are grouped by
// cluster id in order of first appearance; within-cluster order is file order.
ClusteredDataset read_clustered_csv(std::istream& in);
ClusteredDataset read_clustered_csv_file(const std::string& path);
void write_clustered_csv(const ClusteredDataset& dataset, std::ostream& out);

}  // namespace ptcure
