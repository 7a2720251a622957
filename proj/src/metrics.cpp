#include "ldpo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ldpo {

ContingencyTable::ContingencyTable(const ClusterAssignment& a, const ClusterAssignment& b)
    : rows_(a.num_clusters), cols_(b.num_clusters), total_(a.size()) {
  if (a.size() != b.size()) {
    throw Error("item-set mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " items");
  }
  a.validate();
  b.validate();
  counts_.assign(rows_ * cols_, 0);
  row_sums_.assign(rows_, 0);
  col_sums_.assign(cols_, 0);
  for (std::size_t m = 0; m < a.size(); ++m) {
    ++counts_[a.labels[m] * cols_ + b.labels[m]];
    ++row_sums_[a.labels[m]];
    ++col_sums_[b.labels[m]];
  }
}

double purity(const ClusterAssignment& candidate, const ClusterAssignment& reference) {
  const ContingencyTable t(candidate, reference);
  if (t.total() == 0) throw Error("purity of an empty item set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 0; j < t.cols(); ++j) best = std::max(best, t.at(i, j));
    hits += best;
  }
  return static_cast<double>(hits) / static_cast<double>(t.total());
}

namespace {

double entropy(const std::vector<std::size_t>& counts, double n) {
  double h = 0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace

double nmi(const ClusterAssignment& a, const ClusterAssignment& b) {
  const ContingencyTable t(a, b);
  if (t.total() == 0) throw Error("nmi of an empty item set");
  const auto n = static_cast<double>(t.total());

  std::vector<std::size_t> ra(t.rows()), cb(t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i) ra[i] = t.row_sum(i);
  for (std::size_t j = 0; j < t.cols(); ++j) cb[j] = t.col_sum(j);
  const double ha = entropy(ra, n);
  const double hb = entropy(cb, n);
  if (ha == 0 && hb == 0) return 1.0;
  if (ha == 0 || hb == 0) return 0.0;

  double mi = 0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) {
      const auto nij = t.at(i, j);
      if (nij == 0) continue;
      const double p = static_cast<double>(nij) / n;
      mi += p * std::log(static_cast<double>(nij) * n / (static_cast<double>(ra[i]) * static_cast<double>(cb[j])));
    }
  }
  // Round-off can push the ratio a hair outside [0, 1].
  return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

double topk_accuracy(const Matrix& scores, const std::vector<std::size_t>& labels, std::size_t k) {
  const auto num_classes = static_cast<std::size_t>(scores.cols());
  if (k < 1 || k > num_classes) {
    throw Error("top-" + std::to_string(k) + " accuracy undefined for " + std::to_string(num_classes) + " classes");
  }
  if (labels.size() != static_cast<std::size_t>(scores.rows())) throw Error("score rows and labels differ in length");
  if (labels.empty()) throw Error("top-k accuracy of an empty set");
  if (!scores.allFinite()) throw Error("non-finite scores");

  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const auto truth = static_cast<Eigen::Index>(labels[i]);
    if (labels[i] >= num_classes) throw Error("label " + std::to_string(labels[i]) + " out of range");
    // Rank of the true class: classes strictly better, or equal with a lower index.
    std::size_t ahead = 0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      const double s = scores(row, c);
      if (s > scores(row, truth) || (s == scores(row, truth) && c < truth)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

bool check_convergence(const ClusterAssignment& prev, const ClusterAssignment& curr,
                       const ConvergenceThresholds& thresholds) {
  return purity(curr, prev) >= thresholds.purity_min && nmi(curr, prev) >= thresholds.nmi_min;
}

}  // namespace ldpo
