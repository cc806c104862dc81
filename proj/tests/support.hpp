#pragma once

#include "ptcure/data.hpp"

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testing {

using ptcure::Cluster;
using ptcure::ClusteredDataset;
using ptcure::Observation;

inline Observation obs(double t, int d, std::vector<double> x = {}) { return Observation{t, d, std::move(x)}; }

inline ClusteredDataset dataset(std::vector<std::vector<Observation>> groups, std::size_t p_x) {
  std::vector<Cluster> clusters;
  for (std::size_t i = 0; i < groups.size(); ++i) clusters.push_back(Cluster{std::to_string(i + 1), groups[i]});
  return ClusteredDataset(std::move(clusters), p_x);
}

// K clusters of 1..max_size members, exponential times, roughly 70% events,
// normal covariates. Not tied to the simulator so oracles stay independent.
inline ClusteredDataset random_dataset(unsigned seed, int clusters, int max_size, int p_x, int min_size = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> size(min_size, max_size);
  std::exponential_distribution<double> time(1.0);
  std::bernoulli_distribution event(0.7);
  std::normal_distribution<double> cov(0.0, 0.7);
  std::vector<std::vector<Observation>> groups(clusters);
  for (auto& g : groups) {
    const int n = size(rng);
    for (int j = 0; j < n; ++j) {
      std::vector<double> x(p_x);
      for (auto& v : x) v = cov(rng);
      g.push_back(obs(time(rng), event(rng) ? 1 : 0, x));
    }
  }
  groups[0][0].event = 1;
  return dataset(groups, static_cast<std::size_t>(p_x));
}

inline Eigen::MatrixXd central_difference(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd jac(f0.size(), x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd up = x, down = x;
    up(k) += h;
    down(k) -= h;
    jac.col(k) = (f(up) - f(down)) / (2 * h);
  }
  return jac;
}

// Largest entrywise error relative to the largest entry of the reference.
inline double relative_error(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  const double scale = std::max(want.cwiseAbs().maxCoeff(), 1e-300);
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace testing
