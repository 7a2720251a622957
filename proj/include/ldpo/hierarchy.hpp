#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "ldpo/types.hpp"

namespace ldpo {

/// Symmetric K x K class affinity with entries in [0, 1].
using AffinityMatrix = Matrix;

/// A(i,j) = (P(i|j) + P(j|i)) / 2 with P(i|j) the mean score at class j of
/// the items assigned to class i. Rows of `scores` must be stochastic.
AffinityMatrix affinity_from_scores(const Matrix& scores, const ClusterAssignment& assignment);

/// Affinity between groups of base classes: P(I|J) sums the base scores of
/// every class in J over the items of every class in I, divided by the number
/// of those items.
AffinityMatrix level_affinity(const Matrix& scores, const ClusterAssignment& assignment,
                              const std::vector<std::vector<std::size_t>>& groups);

struct ApConfig {
  double damping = 0.9;
  std::size_t max_iter = 1000;
  std::size_t convergence_iter = 50;
  /// Diagonal preference; the median of the off-diagonal similarities when unset.
  std::optional<double> preference;
};

struct ApResult {
  std::vector<std::size_t> labels;     // cluster per item, 0-based
  std::vector<std::size_t> exemplars;  // item index of each cluster's exemplar
  std::size_t iterations = 0;
  bool converged = false;
};

/// Responsibility/availability message passing (Frey & Dueck). Items join
/// their most similar exemplar; exemplars label themselves. When no exemplar
/// emerges (fully symmetric input) the single best-scoring item is used.
ApResult affinity_propagation(const Matrix& similarity, const ApConfig& config = {});

/// Median of the off-diagonal entries (the diagonal itself for a 1x1 input).
double median_off_diagonal(const Matrix& s);

struct TreeNode {
  std::vector<std::size_t> members;   // base class ids, ascending
  std::vector<std::size_t> children;  // node indices in the level below
  std::optional<std::size_t> parent;  // node index in the level above
};

struct TreeLevel {
  std::vector<TreeNode> nodes;
  AffinityMatrix affinity;
};

/// Level 0 holds one singleton per base class; the last level a single root.
struct CategoryTree {
  std::vector<TreeLevel> levels;

  std::vector<std::size_t> widths() const;
  /// Nested form: node = {level, members, children:[...]}, rooted at the top.
  nlohmann::json to_json() const;
  /// Throws if the partition / parent-link / width invariants do not hold.
  void validate() const;
};

/// Repeated AP on the current level's affinity. Stops once AP returns a single
/// cluster; when AP fails to reduce the count the remaining nodes are merged
/// into one root.
CategoryTree build_tree(const Matrix& scores, const ClusterAssignment& assignment, const ApConfig& config = {});

}  // namespace ldpo
