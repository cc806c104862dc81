#include "ptcure/data.hpp"

#include "ptcure/error.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace ptcure {

std::string Violation::to_string() const {
  std::ostringstream os;
  if (cluster) {
    os << "cluster " << *cluster;
    if (observation) os << ", observation " << *observation;
    os << ": ";
  }
  os << message;
  return os.str();
}

ClusteredDataset::ClusteredDataset(std::vector<Cluster> clusters, std::size_t p_x)
    : clusters_(std::move(clusters)), p_x_(p_x) {
  std::size_t n = 0;
  for (const auto& c : clusters_) {
    n += c.observations.size();
    offsets_.push_back(static_cast<Eigen::Index>(n));
  }
  const auto rows = static_cast<Eigen::Index>(n);
  const auto cols = static_cast<Eigen::Index>(p_x_ + 1);
  design_.setConstant(rows, cols, std::numeric_limits<double>::quiet_NaN());
  times_.resize(rows);
  events_.resize(rows);

  Eigen::Index r = 0;
  for (const auto& c : clusters_) {
    for (const auto& obs : c.observations) {
      design_(r, 0) = 1.0;
      const auto m = std::min(obs.covariates.size(), p_x_);
      for (std::size_t k = 0; k < m; ++k) design_(r, static_cast<Eigen::Index>(k + 1)) = obs.covariates[k];
      times_(r) = obs.time;
      events_(r) = static_cast<double>(obs.event);
      if (obs.event == 1) ++num_events_;
      ++r;
    }
  }
  violations_ = validate(*this);
}

std::size_t ClusteredDataset::max_cluster_size() const noexcept {
  std::size_t m = 0;
  for (const auto& c : clusters_) m = std::max(m, c.observations.size());
  return m;
}

double ClusteredDataset::max_event_time() const noexcept {
  double t = 0.0;
  for (Eigen::Index r = 0; r < times_.size(); ++r) {
    if (events_(r) == 1.0) t = std::max(t, times_(r));
  }
  return t;
}

void ClusteredDataset::require_valid() const {
  if (violations_.empty()) return;
  std::ostringstream os;
  os << "invalid dataset (" << violations_.size() << " violation"
     << (violations_.size() == 1 ? "" : "s") << "): " << violations_.front().to_string();
  throw InvalidDatasetError(os.str());
}

Eigen::Index numerical_rank(const Eigen::MatrixXd& matrix, double relative_tol) {
  Eigen::MatrixXd a = matrix;
  const Eigen::Index rows = a.rows();
  const Eigen::Index cols = a.cols();
  const double scale = a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0;
  const double tol = relative_tol * scale * static_cast<double>(std::max(rows, cols));

  Eigen::Index rank = 0;
  for (Eigen::Index col = 0; col < cols && rank < rows; ++col) {
    Eigen::Index pivot = rank;
    a.col(col).segment(rank, rows - rank).cwiseAbs().maxCoeff(&pivot);
    pivot += rank;
    if (std::abs(a(pivot, col)) <= tol) continue;
    a.row(pivot).swap(a.row(rank));
    for (Eigen::Index r = rank + 1; r < rows; ++r) {
      const double f = a(r, col) / a(rank, col);
      a.row(r) -= f * a.row(rank);
    }
    ++rank;
  }
  return rank;
}

std::vector<Violation> validate(const ClusteredDataset& dataset) {
  std::vector<Violation> out;
  const auto& clusters = dataset.clusters();
  bool shapes_ok = true;
  bool values_finite = true;

  if (clusters.empty()) out.push_back({"dataset has no clusters", std::nullopt, std::nullopt});

  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const auto& obs = clusters[i].observations;
    if (obs.empty()) out.push_back({"cluster is empty", i, std::nullopt});
    for (std::size_t j = 0; j < obs.size(); ++j) {
      const auto& o = obs[j];
      if (!std::isfinite(o.time) || o.time < 0.0) {
        out.push_back({"time must be finite and nonnegative", i, j});
      }
      if (o.event != 0 && o.event != 1) out.push_back({"event not binary", i, j});
      if (o.covariates.size() != dataset.p_x()) {
        shapes_ok = false;
        out.push_back({"covariate count " + std::to_string(o.covariates.size()) + " differs from p_x = " +
                           std::to_string(dataset.p_x()),
                       i, j});
      }
      for (double x : o.covariates) {
        if (!std::isfinite(x)) {
          values_finite = false;
          out.push_back({"covariate is not finite", i, j});
          break;
        }
      }
    }
  }

  if (!clusters.empty() && dataset.num_events() == 0) {
    out.push_back({"no uncensored observation (baseline estimator undefined)", std::nullopt, std::nullopt});
  }

  if (shapes_ok && values_finite && dataset.num_obs() > 0) {
    const auto rank = numerical_rank(dataset.design());
    const auto want = static_cast<Eigen::Index>(dataset.num_params());
    if (rank < want) {
      out.push_back({"design matrix with intercept has rank " + std::to_string(rank) + " < " +
                         std::to_string(want),
                     std::nullopt, std::nullopt});
    }
  }
  return out;
}

Eigen::VectorXd design_row(const Observation& obs) {
  Eigen::VectorXd row(static_cast<Eigen::Index>(obs.covariates.size() + 1));
  row(0) = 1.0;
  for (std::size_t k = 0; k < obs.covariates.size(); ++k) row(static_cast<Eigen::Index>(k + 1)) = obs.covariates[k];
  return row;
}

double checked_exp(double eta) {
  if (!(std::abs(eta) <= kMaxLinearPredictor)) {
    throw OverflowError("linear predictor " + std::to_string(eta) + " outside [-700, 700]");
  }
  return std::exp(eta);
}

double linear_predictor(const Coefficients& beta, const Observation& obs) {
  if (static_cast<std::size_t>(beta.size()) != obs.covariates.size() + 1) {
    throw std::invalid_argument("coefficient length does not match covariates + intercept");
  }
  return beta.dot(design_row(obs));
}

double mu(const Coefficients& beta, const Observation& obs) { return checked_exp(linear_predictor(beta, obs)); }

double cure_probability(const Coefficients& beta, const Observation& obs) {
  const double eta = linear_predictor(beta, obs);
  // exp(-exp(eta)) underflows cleanly to 0 for large eta; only guard the exp(eta) overflow.
  if (eta > kMaxLinearPredictor) return 0.0;
  return std::exp(-std::exp(eta));
}

Eigen::VectorXd mu_vector(const Coefficients& beta, const ClusteredDataset& dataset) {
  if (static_cast<std::size_t>(beta.size()) != dataset.num_params()) {
    throw std::invalid_argument("coefficient length " + std::to_string(beta.size()) + " != p_x + 1 = " +
                                std::to_string(dataset.num_params()));
  }
  Eigen::VectorXd eta = dataset.design() * beta;
  if (eta.size() > 0) {
    const double worst = eta.cwiseAbs().maxCoeff();
    if (!(worst <= kMaxLinearPredictor)) {
      throw OverflowError("linear predictor magnitude " + std::to_string(worst) + " exceeds 700");
    }
  }
  return eta.array().exp().matrix();
}

ClusteredDataset read_clustered_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (detail::trim(line).empty()) continue;
    header = detail::split_csv(line);
    break;
  }
  if (header.empty()) throw InputError("empty CSV input (expected header cluster,time,event,x1,...)", line_no);
  if (header.size() < 3 || detail::trim(header[0]) != "cluster" || detail::trim(header[1]) != "time" ||
      detail::trim(header[2]) != "event") {
    throw InputError("header must start with cluster,time,event", line_no);
  }
  const std::size_t p_x = header.size() - 3;

  std::vector<Cluster> clusters;
  std::unordered_map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv(line);
    if (fields.size() != header.size()) {
      throw InputError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    const std::string id{detail::trim(fields[0])};
    if (id.empty()) throw InputError("empty cluster id", line_no);
    Observation obs;
    obs.time = detail::parse_double(fields[1], "time", line_no);
    const double ev = detail::parse_double(fields[2], "event", line_no);
    if (ev != 0.0 && ev != 1.0) throw InputError("event must be 0 or 1", line_no);
    obs.event = static_cast<int>(ev);
    if (!std::isfinite(obs.time) || obs.time < 0.0) throw InputError("time must be finite and >= 0", line_no);
    obs.covariates.reserve(p_x);
    for (std::size_t k = 0; k < p_x; ++k) {
      obs.covariates.push_back(detail::parse_double(fields[3 + k], header[3 + k], line_no));
    }
    auto [it, inserted] = index.try_emplace(id, clusters.size());
    if (inserted) clusters.push_back(Cluster{id, {}});
    clusters[it->second].observations.push_back(std::move(obs));
  }
  return ClusteredDataset(std::move(clusters), p_x);
}

ClusteredDataset read_clustered_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open data file '" + path + "'");
  return read_clustered_csv(in);
}

void write_clustered_csv(const ClusteredDataset& dataset, std::ostream& out) {
  out << "cluster,time,event";
  for (std::size_t k = 1; k <= dataset.p_x(); ++k) out << ",x" << k;
  out << '\n';
  out << std::setprecision(17);
  for (const auto& c : dataset.clusters()) {
    for (const auto& obs : c.observations) {
      out << c.id << ',' << obs.time << ',' << obs.event;
      for (double x : obs.covariates) out << ',' << x;
      out << '\n';
    }
  }
}

}  // namespace ptcure
