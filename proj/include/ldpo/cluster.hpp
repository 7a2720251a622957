#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ldpo/types.hpp"

namespace ldpo {

struct KMeansModel {
  Matrix centers;   // K x D
  double cost = 0;  // within-cluster sum of squared distances
};

struct KMeansResult {
  KMeansModel model;
  ClusterAssignment assignment;
  /// Cost after every assignment step; nonincreasing.
  std::vector<double> cost_history;
  std::size_t iterations = 0;
};

/// Lloyd's algorithm from k-means++ seeding. Ties go to the lowest center
/// index; an empty cluster is reseeded at the point farthest from its own
/// center (among points whose cluster has more than one member).
KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iter = 300);

/// Runs `restarts` seeds (seed, seed+1, ...) and keeps the lowest final cost.
KMeansResult kmeans_best_of(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t restarts,
                            std::size_t max_iter = 300);

/// Sum of squared distances of each row to its assigned center.
double kmeans_cost(const Matrix& x, const Matrix& centers, const ClusterAssignment& a);

/// Unsupervised multilogit model p(c=k|f) ∝ exp(w_k·f + b_k) fitted on
/// standardized features (zero mean, each column scaled to variance 1/D).
/// The standardization is part of the model.
struct RimModel {
  Matrix weights;  // K x D
  Vector biases;   // K
  double lambda = 1.0;
  Vector feature_mean;   // D, empty when features are used as-is
  Vector feature_scale;  // D

  std::size_t num_clusters() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }
};

/// Per-item objective: the mutual-information estimate minus the L2 weight
/// penalty lambda * sum_k |w_k|^2 / N; this is N*MI - lambda*sum|w|^2
/// rescaled by 1/N. Biases are not penalized.
struct RimObjective {
  double mutual_information = 0;  // H(mean posterior) - mean(H(posterior))
  double penalty = 0;             // lambda / N * sum_k |w_k|^2
  double value() const { return mutual_information - penalty; }
};

struct RimGradient {
  Matrix weights;
  Vector biases;
};

struct RimOptions {
  double lambda = 1.0;
  std::size_t max_iter = 500;
  double tolerance = 1e-7;  // relative objective change
  double armijo = 1e-4;
  bool standardize = true;
  double variance_floor = 1e-8;
};

struct RimResult {
  RimModel model;
  ClusterAssignment assignment;
  /// Objective after every accepted ascent step, starting with the initial value.
  std::vector<double> objective_history;
  std::size_t iterations = 0;
};

/// Objective evaluated on `x` as given (no standardization applied).
RimObjective rim_objective_terms(const RimModel& model, const Matrix& x);
double rim_objective(const RimModel& model, const Matrix& x);
RimGradient rim_gradient(const RimModel& model, const Matrix& x);

/// Posterior matrix (N x K) on `x` as given.
Matrix rim_posteriors(const RimModel& model, const Matrix& x);

/// Applies the model's stored standardization.
Matrix rim_standardize(const RimModel& model, const Matrix& x);

/// Hard assignment by argmax posterior (lowest index on ties), features
/// standardized by the model first.
ClusterAssignment rim_predict(const RimModel& model, const Matrix& x);

/// One-vs-rest least squares fit of (W, b) to +/-1 targets built from `init`.
RimModel rim_initialize(const Matrix& x, const ClusterAssignment& init, double lambda);

/// Gradient ascent with Armijo backtracking from the least-squares start,
/// then drops clusters with no hard-assigned points.
RimResult rim_fit(const Matrix& x, const ClusterAssignment& init, const RimOptions& options = {});

void save_kmeans_model(const KMeansModel& m, const std::filesystem::path& prefix);
KMeansModel load_kmeans_model(const std::filesystem::path& prefix);
void save_rim_model(const RimModel& m, const std::filesystem::path& prefix);
RimModel load_rim_model(const std::filesystem::path& prefix);

}  // namespace ldpo
