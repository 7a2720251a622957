#include "ldpo/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

namespace ldpo {

namespace {

std::vector<TermCount> ranked(const std::map<std::string, std::size_t>& counts) {
  std::vector<TermCount> out;
  out.reserve(counts.size());
  for (const auto& [term, count] : counts) out.push_back({term, count});
  std::stable_sort(out.begin(), out.end(), [](const TermCount& a, const TermCount& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.term < b.term;
  });
  return out;
}

}  // namespace

ClusterKeywords extract_keywords(const TextCorpus& corpus, const LabeledAssignment& assignment,
                                 const KeywordOptions& options) {
  const auto& a = assignment.assignment;
  if (a.size() != assignment.ids.size()) throw Error("keywords: assignment ids and labels differ in length");
  a.validate();
  std::unordered_map<std::string, std::size_t> cluster_of;
  for (std::size_t i = 0; i < assignment.ids.size(); ++i) cluster_of.emplace(assignment.ids[i], a.labels[i]);

  const std::size_t k = a.num_clusters;
  std::vector<std::map<std::string, std::size_t>> counts(k);
  for (const auto& [id, tokens] : corpus) {
    auto it = cluster_of.find(id);
    if (it == cluster_of.end()) throw Error("keywords: document id '" + id + "' has no cluster assignment");
    auto& bucket = counts[it->second];
    for (const auto& raw : tokens) {
      for (auto& term : tokenize(raw)) {
        if (!options.stoplist.contains(term)) ++bucket[term];
      }
    }
  }

  std::vector<std::vector<TermCount>> lists;
  lists.reserve(k);
  for (const auto& c : counts) lists.push_back(ranked(c));

  std::set<std::string> common;
  if (k >= 2) {
    if (options.rule == CommonTermRule::InEveryTopList) {
      std::map<std::string, std::size_t> seen_in;
      for (const auto& list : lists) {
        for (std::size_t i = 0; i < std::min(options.top_n, list.size()); ++i) ++seen_in[list[i].term];
      }
      for (const auto& [term, n] : seen_in) {
        if (n == k) common.insert(term);
      }
    } else {
      std::map<std::string, std::size_t> clusters_with;
      for (const auto& c : counts) {
        for (const auto& entry : c) ++clusters_with[entry.first];
      }
      const double needed = options.common_ratio * static_cast<double>(k);
      for (const auto& [term, n] : clusters_with) {
        if (static_cast<double>(n) >= needed - 1e-12) common.insert(term);
      }
    }
  }

  ClusterKeywords out(k);
  for (std::size_t c = 0; c < k; ++c) {
    for (const auto& tc : lists[c]) {
      if (out[c].size() == options.top_n) break;
      if (!common.contains(tc.term)) out[c].push_back(tc);
    }
  }
  return out;
}

std::set<std::string> load_stoplist(const std::filesystem::path& path) {
  std::set<std::string> out;
  for (auto& t : tokenize(read_file(path), 1)) out.insert(std::move(t));
  return out;
}

nlohmann::json keywords_to_json(const ClusterKeywords& keywords) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t c = 0; c < keywords.size(); ++c) {
    auto arr = nlohmann::json::array();
    for (const auto& tc : keywords[c]) arr.push_back({{"term", tc.term}, {"count", tc.count}});
    j[std::to_string(c)] = std::move(arr);
  }
  return j;
}

}  // namespace ldpo
