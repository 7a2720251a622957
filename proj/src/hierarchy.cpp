#include "ldpo/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace ldpo {

namespace {

void check_scores(const Matrix& scores, const ClusterAssignment& assignment) {
  if (static_cast<std::size_t>(scores.rows()) != assignment.size()) {
    throw Error("affinity: " + std::to_string(scores.rows()) + " score rows for " +
                std::to_string(assignment.size()) + " assigned items");
  }
  if (static_cast<std::size_t>(scores.cols()) != assignment.num_clusters) {
    throw Error("affinity: " + std::to_string(scores.cols()) + " score columns for K=" +
                std::to_string(assignment.num_clusters));
  }
  assignment.validate();
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double s = scores.row(i).sum();
    if (!std::isfinite(s) || std::abs(s - 1.0) > 1e-6 || (scores.row(i).array() < 0).any()) {
      throw Error("affinity: score row " + std::to_string(i) + " is not a probability distribution");
    }
  }
  const auto sizes = assignment.cluster_sizes();
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] == 0) throw Error("affinity: class " + std::to_string(k) + " has no items");
  }
}

AffinityMatrix symmetrize(const Matrix& cond) {
  const auto k = cond.rows();
  AffinityMatrix a(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) a(i, j) = 0.5 * (cond(i, j) + cond(j, i));
  }
  return a;
}

}  // namespace

AffinityMatrix affinity_from_scores(const Matrix& scores, const ClusterAssignment& assignment) {
  check_scores(scores, assignment);
  const auto k = scores.cols();
  Matrix sums = Matrix::Zero(k, k);
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (Eigen::Index m = 0; m < scores.rows(); ++m) {
    const auto i = static_cast<Eigen::Index>(assignment.labels[static_cast<std::size_t>(m)]);
    counts[static_cast<std::size_t>(i)] += 1.0;
    for (Eigen::Index j = 0; j < k; ++j) sums(i, j) += scores(m, j);
  }
  for (Eigen::Index i = 0; i < k; ++i) sums.row(i) /= counts[static_cast<std::size_t>(i)];
  return symmetrize(sums);
}

AffinityMatrix level_affinity(const Matrix& scores, const ClusterAssignment& assignment,
                              const std::vector<std::vector<std::size_t>>& groups) {
  check_scores(scores, assignment);
  const auto base = static_cast<std::size_t>(scores.cols());
  std::vector<std::size_t> group_of(base, groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw Error("level affinity: group " + std::to_string(g) + " is empty");
    for (auto c : groups[g]) {
      if (c >= base) throw Error("level affinity: class " + std::to_string(c) + " out of range");
      if (group_of[c] != groups.size()) throw Error("level affinity: class " + std::to_string(c) + " in two groups");
      group_of[c] = g;
    }
  }
  for (std::size_t c = 0; c < base; ++c) {
    if (group_of[c] == groups.size()) throw Error("level affinity: class " + std::to_string(c) + " in no group");
  }

  const auto g = static_cast<Eigen::Index>(groups.size());
  Matrix sums = Matrix::Zero(g, g);
  std::vector<double> counts(groups.size(), 0.0);
  for (Eigen::Index m = 0; m < scores.rows(); ++m) {
    const auto i = group_of[assignment.labels[static_cast<std::size_t>(m)]];
    counts[i] += 1.0;
    for (Eigen::Index j = 0; j < g; ++j) {
      double inner = 0;
      for (auto k : groups[static_cast<std::size_t>(j)]) inner += scores(m, static_cast<Eigen::Index>(k));
      sums(static_cast<Eigen::Index>(i), j) += inner;
    }
  }
  for (Eigen::Index i = 0; i < g; ++i) sums.row(i) /= counts[static_cast<std::size_t>(i)];
  return symmetrize(sums);
}

double median_off_diagonal(const Matrix& s) {
  const auto n = s.rows();
  if (n == 1) return s(0, 0);
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(n * (n - 1)));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) v.push_back(s(i, j));
    }
  }
  std::sort(v.begin(), v.end());
  const auto mid = v.size() / 2;
  return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

namespace {

// Assigns every item to its most similar exemplar; exemplars to themselves.
std::vector<std::size_t> nearest_exemplar(const Matrix& s, const std::vector<std::size_t>& exemplars) {
  const auto n = static_cast<std::size_t>(s.rows());
  std::vector<std::size_t> labels(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t e = 1; e < exemplars.size(); ++e) {
      if (s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(exemplars[e])) >
          s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(exemplars[best]))) {
        best = e;
      }
    }
    labels[i] = best;
  }
  for (std::size_t e = 0; e < exemplars.size(); ++e) labels[exemplars[e]] = e;
  return labels;
}

}  // namespace

ApResult affinity_propagation(const Matrix& similarity, const ApConfig& config) {
  const auto n = similarity.rows();
  if (n != similarity.cols()) throw Error("affinity propagation: similarity matrix is not square");
  if (n == 0) throw Error("affinity propagation: empty similarity matrix");
  if (!similarity.allFinite()) throw Error("affinity propagation: non-finite similarity");
  if (!(config.damping >= 0.5 && config.damping < 1.0)) throw Error("affinity propagation: damping must be in [0.5, 1)");

  ApResult result;
  if (n == 1) {
    result.labels = {0};
    result.exemplars = {0};
    result.converged = true;
    return result;
  }

  Matrix s = similarity;
  const double pref = config.preference.value_or(median_off_diagonal(similarity));
  s.diagonal().setConstant(pref);
  // Break exact ties between equally good exemplars with fixed-seed jitter.
  std::mt19937_64 jitter_rng(0);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    double& v = s.data()[i];
    v += (std::numeric_limits<double>::epsilon() * v + std::numeric_limits<double>::min() * 100) * jitter(jitter_rng);
  }

  Matrix r = Matrix::Zero(n, n);
  Matrix a = Matrix::Zero(n, n);
  Matrix r_new(n, n);
  Matrix a_new(n, n);
  const double lam = config.damping;
  std::vector<bool> exemplar(static_cast<std::size_t>(n), false);
  std::vector<bool> previous;
  std::size_t stable = 0;

  for (std::size_t it = 0; it < config.max_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double first = -std::numeric_limits<double>::infinity();
      double second = first;
      Eigen::Index arg = 0;
      for (Eigen::Index k = 0; k < n; ++k) {
        const double v = a(i, k) + s(i, k);
        if (v > first) {
          second = first;
          first = v;
          arg = k;
        } else if (v > second) {
          second = v;
        }
      }
      for (Eigen::Index k = 0; k < n; ++k) r_new(i, k) = s(i, k) - (k == arg ? second : first);
    }
    r = lam * r + (1.0 - lam) * r_new;

    for (Eigen::Index k = 0; k < n; ++k) {
      double col = 0;
      for (Eigen::Index i = 0; i < n; ++i) col += (i == k) ? r(k, k) : std::max(0.0, r(i, k));
      for (Eigen::Index i = 0; i < n; ++i) {
        if (i == k) {
          a_new(k, k) = col - r(k, k);
        } else {
          a_new(i, k) = std::min(0.0, col - std::max(0.0, r(i, k)));
        }
      }
    }
    a = lam * a + (1.0 - lam) * a_new;

    for (Eigen::Index k = 0; k < n; ++k) exemplar[static_cast<std::size_t>(k)] = a(k, k) + r(k, k) > 0;
    ++result.iterations;
    const bool any = std::find(exemplar.begin(), exemplar.end(), true) != exemplar.end();
    stable = (any && exemplar == previous) ? stable + 1 : 0;
    previous = exemplar;
    if (stable >= config.convergence_iter) {
      result.converged = true;
      break;
    }
  }

  std::vector<std::size_t> exemplars;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (exemplar[static_cast<std::size_t>(k)]) exemplars.push_back(static_cast<std::size_t>(k));
  }
  if (exemplars.empty()) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < n; ++k) {
      if (a(k, k) + r(k, k) > a(best, best) + r(best, best)) best = k;
    }
    exemplars.push_back(static_cast<std::size_t>(best));
  }

  // Refine: within each cluster, the member with the largest total similarity
  // to the other members becomes the exemplar.
  auto labels = nearest_exemplar(s, exemplars);
  for (std::size_t e = 0; e < exemplars.size(); ++e) {
    double best_total = -std::numeric_limits<double>::infinity();
    std::size_t best = exemplars[e];
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != e) continue;
      double total = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == e) total += s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
      if (total > best_total) {
        best_total = total;
        best = j;
      }
    }
    exemplars[e] = best;
  }
  std::sort(exemplars.begin(), exemplars.end());
  result.exemplars = exemplars;
  result.labels = nearest_exemplar(s, exemplars);
  return result;
}

// ---------------------------------------------------------------------------
// Category tree

std::vector<std::size_t> CategoryTree::widths() const {
  std::vector<std::size_t> w;
  for (const auto& l : levels) w.push_back(l.nodes.size());
  return w;
}

namespace {

nlohmann::json node_json(const CategoryTree& tree, std::size_t level, std::size_t index) {
  const auto& node = tree.levels[level].nodes[index];
  nlohmann::json j = {{"level", level}, {"members", node.members}, {"children", nlohmann::json::array()}};
  if (level > 0) {
    for (auto c : node.children) j["children"].push_back(node_json(tree, level - 1, c));
  }
  return j;
}

}  // namespace

nlohmann::json CategoryTree::to_json() const {
  if (levels.empty() || levels.back().nodes.size() != 1) throw Error("category tree has no single root");
  return node_json(*this, levels.size() - 1, 0);
}

void CategoryTree::validate() const {
  if (levels.empty()) throw Error("category tree is empty");
  const auto& base = levels.front().nodes;
  for (std::size_t k = 0; k < base.size(); ++k) {
    if (base[k].members != std::vector<std::size_t>{k}) throw Error("level 0 node " + std::to_string(k) + " is not {" + std::to_string(k) + "}");
  }
  for (std::size_t l = 1; l < levels.size(); ++l) {
    if (levels[l].nodes.size() >= levels[l - 1].nodes.size()) throw Error("level widths are not strictly decreasing");
    std::vector<int> claimed(levels[l - 1].nodes.size(), 0);
    for (std::size_t n = 0; n < levels[l].nodes.size(); ++n) {
      const auto& node = levels[l].nodes[n];
      std::vector<std::size_t> merged;
      for (auto c : node.children) {
        if (c >= claimed.size()) throw Error("child index out of range");
        ++claimed[c];
        if (levels[l - 1].nodes[c].parent != n) throw Error("parent link mismatch at level " + std::to_string(l - 1));
        const auto& m = levels[l - 1].nodes[c].members;
        merged.insert(merged.end(), m.begin(), m.end());
      }
      std::sort(merged.begin(), merged.end());
      if (merged != node.members) throw Error("node members differ from union of children at level " + std::to_string(l));
    }
    if (std::any_of(claimed.begin(), claimed.end(), [](int c) { return c != 1; })) {
      throw Error("level " + std::to_string(l - 1) + " nodes are not each claimed by exactly one parent");
    }
  }
  if (levels.back().nodes.size() != 1) throw Error("top level must hold exactly one node");
}

CategoryTree build_tree(const Matrix& scores, const ClusterAssignment& assignment, const ApConfig& config) {
  CategoryTree tree;
  TreeLevel base;
  for (std::size_t k = 0; k < assignment.num_clusters; ++k) base.nodes.push_back(TreeNode{{k}, {}, std::nullopt});
  base.affinity = affinity_from_scores(scores, assignment);
  tree.levels.push_back(std::move(base));

  while (tree.levels.back().nodes.size() > 1) {
    auto& current = tree.levels.back();
    const auto width = current.nodes.size();
    const auto ap = affinity_propagation(current.affinity, config);

    std::vector<std::size_t> labels = ap.labels;
    std::size_t clusters = ap.exemplars.size();
    if (clusters >= width) {
      labels.assign(width, 0);
      clusters = 1;
    }

    TreeLevel next;
    next.nodes.resize(clusters);
    for (std::size_t n = 0; n < width; ++n) {
      auto& parent = next.nodes[labels[n]];
      parent.children.push_back(n);
      const auto& m = current.nodes[n].members;
      parent.members.insert(parent.members.end(), m.begin(), m.end());
      current.nodes[n].parent = labels[n];
    }
    std::vector<std::vector<std::size_t>> groups;
    for (auto& node : next.nodes) {
      std::sort(node.members.begin(), node.members.end());
      groups.push_back(node.members);
    }
    next.affinity = level_affinity(scores, assignment, groups);
    tree.levels.push_back(std::move(next));
  }
  return tree;
}

}  // namespace ldpo
