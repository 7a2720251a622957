#pragma once

#include <cstddef>
#include <vector>

#include "ldpo/types.hpp"

namespace ldpo {

/// Counts n_ij of items labeled i by A and j by B.
class ContingencyTable {
 public:
  ContingencyTable(const ClusterAssignment& a, const ClusterAssignment& b);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t total() const { return total_; }
  std::size_t at(std::size_t i, std::size_t j) const { return counts_[i * cols_ + j]; }
  std::size_t row_sum(std::size_t i) const { return row_sums_[i]; }
  std::size_t col_sum(std::size_t j) const { return col_sums_[j]; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::size_t total_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> row_sums_;
  std::vector<std::size_t> col_sums_;
};

/// (1/N) sum over candidate clusters of the largest overlap with a reference
/// cluster. Not symmetric.
double purity(const ClusterAssignment& candidate, const ClusterAssignment& reference);

/// I(A;B) / sqrt(H(A) H(B)) with natural logs; 1 when both entropies vanish,
/// 0 when exactly one does.
double nmi(const ClusterAssignment& a, const ClusterAssignment& b);

/// Fraction of rows whose label ranks within the k highest scores (ties go
/// to the lower class index).
double topk_accuracy(const Matrix& scores, const std::vector<std::size_t>& labels, std::size_t k);

struct ConvergenceThresholds {
  double purity_min = 0.7;
  double nmi_min = 0.7;
};

/// purity(curr, prev) >= purity_min and nmi(curr, prev) >= nmi_min.
bool check_convergence(const ClusterAssignment& prev, const ClusterAssignment& curr,
                       const ConvergenceThresholds& thresholds = {});

}  // namespace ldpo
