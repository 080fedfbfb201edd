#pragma once

#include <map>
#include <string>
#include <vector>

#include "reviewlens/category.hpp"
#include "reviewlens/corpus/types.hpp"
#include "reviewlens/error.hpp"

namespace reviewlens::corpus {

inline constexpr int kDefaultQuorum = 2;

/// Agreement level of a vote tally given the assigned label.
inline Agreement agreement_level(int ones, int n, int label) {
  if (ones == 0 || ones == n) return Agreement::Full;
  const int assigned = label == 1 ? ones : n - ones;
  return 2 * assigned > n ? Agreement::Majority : Agreement::None;
}

/// Records grouped by sentence_id, in order of first appearance.
inline std::vector<std::pair<std::string, std::vector<const AnnotationRecord*>>> group_by_sentence(
    const std::vector<AnnotationRecord>& records) {
  std::vector<std::pair<std::string, std::vector<const AnnotationRecord*>>> groups;
  std::map<std::string, std::size_t> index;
  for (const auto& r : records) {
    auto [it, inserted] = index.emplace(r.sentence_id, groups.size());
    if (inserted) groups.emplace_back(r.sentence_id, std::vector<const AnnotationRecord*>{});
    groups[it->second].second.push_back(&r);
  }
  return groups;
}

/// Per category, label = 1 iff at least `quorum` annotators voted 1. Every category, Rationale
/// included, is voted on independently. Output follows first appearance of each sentence.
inline std::vector<GoldLabel> aggregate_majority(const std::vector<AnnotationRecord>& records,
                                                 int quorum = kDefaultQuorum) {
  if (quorum < 1) fail(ErrorKind::InvalidArgument, "quorum must be at least 1");
  std::vector<GoldLabel> golds;
  for (const auto& [sentence_id, group] : group_by_sentence(records)) {
    const int n = static_cast<int>(group.size());
    if (n < quorum)
      fail(ErrorKind::InsufficientAnnotators, "sentence " + sentence_id + " has " + std::to_string(n) +
                                                  " annotation(s), quorum is " + std::to_string(quorum));
    GoldLabel g;
    g.sentence_id = sentence_id;
    g.n_annotators = n;
    for (Category c : kAllCategories) {
      int ones = 0;
      for (const auto* r : group) ones += r->labels[c];
      g.labels[c] = ones >= quorum ? 1 : 0;
      g.agreement[c] = agreement_level(ones, n, g.labels[c]);
    }
    bool all_have_context = true;
    int context_ones = 0;
    for (const auto* r : group) {
      if (!r->rationale_context) {
        all_have_context = false;
        break;
      }
      context_ones += *r->rationale_context;
    }
    if (all_have_context) g.rationale_context = context_ones >= quorum ? 1 : 0;
    golds.push_back(std::move(g));
  }
  return golds;
}

/// Golds on which the annotators were unanimous for `category` (either value).
inline std::vector<GoldLabel> filter_full_agreement(const std::vector<GoldLabel>& golds, Category category) {
  std::vector<GoldLabel> out;
  for (const auto& g : golds)
    if (g.agreement[category] == Agreement::Full) out.push_back(g);
  return out;
}

/// Recomputes agreement from raw records, for golds that were loaded without it.
inline std::vector<GoldLabel> filter_full_agreement(const std::vector<AnnotationRecord>& records,
                                                    const std::vector<GoldLabel>& golds, Category category) {
  std::map<std::string, std::pair<int, int>> tallies;  // ones, n
  for (const auto& r : records) {
    auto& t = tallies[r.sentence_id];
    t.first += r.labels[category];
    t.second += 1;
  }
  std::vector<GoldLabel> out;
  for (const auto& g : golds) {
    const auto it = tallies.find(g.sentence_id);
    if (it == tallies.end()) continue;
    const auto [ones, n] = it->second;
    if (ones == 0 || ones == n) out.push_back(g);
  }
  return out;
}

}  // namespace reviewlens::corpus
