#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ldpo {

/// Row-major dense matrix; one row per item.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// All library failures are reported with this exception type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hard cluster labels 0..num_clusters-1, positionally aligned with a corpus.
struct ClusterAssignment {
  std::vector<std::size_t> labels;
  std::size_t num_clusters = 0;

  std::size_t size() const { return labels.size(); }
  std::vector<std::size_t> cluster_sizes() const;

  /// Throws if a label is out of range.
  void validate() const;

  /// Builds an assignment from arbitrary labels, renumbering them densely in
  /// order of first appearance.
  static ClusterAssignment from_labels(const std::vector<std::size_t>& raw);
};

/// Drops empty clusters and renumbers labels densely, preserving the relative
/// order of surviving cluster indices.
ClusterAssignment compact(const ClusterAssignment& a);

}  // namespace ldpo
