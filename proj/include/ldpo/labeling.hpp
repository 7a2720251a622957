#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldpo/data.hpp"

namespace ldpo {

struct TermCount {
  std::string term;
  std::size_t count = 0;

  bool operator==(const TermCount&) const = default;
};

/// Ranked (term, count) lists, one per cluster.
using ClusterKeywords = std::vector<std::vector<TermCount>>;

enum class CommonTermRule {
  /// Remove terms present in every cluster's pre-removal top-n list.
  InEveryTopList,
  /// Remove terms occurring in at least `common_ratio` of the clusters.
  ClusterFrequency,
};

struct KeywordOptions {
  std::size_t top_n = 10;
  std::set<std::string> stoplist;
  CommonTermRule rule = CommonTermRule::InEveryTopList;
  double common_ratio = 1.0;
};

/// Per-cluster term frequencies ranked by count (ties lexicographic), with
/// stoplisted and common-to-all-clusters terms removed. Common-term removal
/// is skipped when there is a single cluster.
ClusterKeywords extract_keywords(const TextCorpus& corpus, const LabeledAssignment& assignment,
                                 const KeywordOptions& options = {});

std::set<std::string> load_stoplist(const std::filesystem::path& path);

/// {"<cluster>": [{"term": ..., "count": ...}, ...], ...}
nlohmann::json keywords_to_json(const ClusterKeywords& keywords);

}  // namespace ldpo
