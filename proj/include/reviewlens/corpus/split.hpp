#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "reviewlens/category.hpp"
#include "reviewlens/corpus/types.hpp"
#include "reviewlens/error.hpp"
#include "reviewlens/rng.hpp"

namespace reviewlens::corpus {

/// Number of test items per stratum so that the total is round(n * fraction) and each
/// stratum gets floor(size * total / n) plus one for the largest remainders. Ties go to the
/// earlier stratum.
inline std::vector<std::size_t> apportion(std::span<const std::size_t> sizes, std::size_t total) {
  std::size_t n = 0;
  for (auto s : sizes) n += s;
  std::vector<std::size_t> quota(sizes.size(), 0);
  if (n == 0) return quota;
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder numerator, stratum)
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    quota[i] = sizes[i] * total / n;
    remainders.emplace_back(sizes[i] * total % n, i);
    assigned += quota[i];
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++quota[remainders[k].second];
  return quota;
}

inline std::size_t holdout_size(std::size_t n, double test_fraction) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
}

/// Stratified holdout over parallel (ids, binary labels). Train and test keep input order.
inline Split stratified_holdout(std::span<const std::string> ids, std::span<const int> labels, Category category,
                                double test_fraction, std::uint64_t seed = kDefaultSeed) {
  if (ids.size() != labels.size()) fail(ErrorKind::InvalidArgument, "ids and labels differ in length");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail(ErrorKind::InvalidArgument, "test_fraction must be in (0, 1)");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ids.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty())
    fail(ErrorKind::DegenerateStratum, std::string("no ") + (pos.empty() ? "positive" : "negative") + " items for " +
                                           std::string(codebook_name(category)));
  const std::array<std::size_t, 2> sizes{pos.size(), neg.size()};
  const auto quota = apportion(sizes, holdout_size(ids.size(), test_fraction));
  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<char> in_test(ids.size(), 0);
  for (std::size_t k = 0; k < quota[0]; ++k) in_test[pos[k]] = 1;
  for (std::size_t k = 0; k < quota[1]; ++k) in_test[neg[k]] = 1;
  Split split;
  split.seed = seed;
  split.strat_category = category;
  for (std::size_t i = 0; i < ids.size(); ++i) (in_test[i] ? split.test_ids : split.train_ids).push_back(ids[i]);
  return split;
}

inline Split stratified_holdout(const std::vector<GoldLabel>& golds, Category category, double test_fraction,
                                std::uint64_t seed = kDefaultSeed) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& g : golds) {
    ids.push_back(g.sentence_id);
    labels.push_back(g.labels[category]);
  }
  return stratified_holdout(ids, labels, category, test_fraction, seed);
}

/// Shuffles each class, then deals positives round-robin over the folds and continues
/// dealing negatives from where the positives stopped. Fold sizes and per-fold positive
/// counts each differ by at most one. All ids become train_ids.
inline Split stratified_kfold(std::span<const std::string> ids, std::span<const int> labels, Category category,
                              int k = 5, std::uint64_t seed = kDefaultSeed) {
  if (ids.size() != labels.size()) fail(ErrorKind::InvalidArgument, "ids and labels differ in length");
  if (k < 2) fail(ErrorKind::InvalidArgument, "k must be at least 2");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ids.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(i);
  const auto kk = static_cast<std::size_t>(k);
  if (pos.size() < kk || neg.size() < kk)
    fail(ErrorKind::DegenerateStratum, std::string(codebook_name(category)) + ": each class needs at least " +
                                           std::to_string(k) + " members (positives " + std::to_string(pos.size()) +
                                           ", negatives " + std::to_string(neg.size()) + ")");
  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<std::size_t> fold_of(ids.size());
  std::size_t deal = 0;
  for (auto i : pos) fold_of[i] = deal++ % kk;
  for (auto i : neg) fold_of[i] = deal++ % kk;
  Split split;
  split.seed = seed;
  split.strat_category = category;
  split.folds.assign(kk, {});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    split.train_ids.push_back(ids[i]);
    split.folds[fold_of[i]].push_back(ids[i]);
  }
  return split;
}

inline Split stratified_kfold(const std::vector<GoldLabel>& golds, Category category, int k = 5,
                              std::uint64_t seed = kDefaultSeed) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& g : golds) {
    ids.push_back(g.sentence_id);
    labels.push_back(g.labels[category]);
  }
  return stratified_kfold(ids, labels, category, k, seed);
}

/// Unstratified k-fold (used where one split must serve all categories at once).
inline Split kfold(std::span<const std::string> ids, int k = 5, std::uint64_t seed = kDefaultSeed) {
  if (k < 2) fail(ErrorKind::InvalidArgument, "k must be at least 2");
  if (ids.size() < static_cast<std::size_t>(k)) fail(ErrorKind::InvalidArgument, "fewer items than folds");
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::size_t> fold_of(ids.size());
  for (std::size_t d = 0; d < order.size(); ++d) fold_of[order[d]] = d % static_cast<std::size_t>(k);
  Split split;
  split.seed = seed;
  split.folds.assign(static_cast<std::size_t>(k), {});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    split.train_ids.push_back(ids[i]);
    split.folds[fold_of[i]].push_back(ids[i]);
  }
  return split;
}

enum class SampleMode { Random, StratifiedByTextBox };

struct SampleSpec {
  SampleMode mode = SampleMode::Random;
  std::size_t n_total = 0;     // Random
  std::size_t n_per_box = 0;   // StratifiedByTextBox
  std::uint64_t seed = kDefaultSeed;
};

/// Sampling without replacement. Stratified output is grouped by text box in form order.
inline std::vector<Sentence> sample_round(const std::vector<Sentence>& sentences, const SampleSpec& spec) {
  Rng rng(spec.seed);
  std::vector<Sentence> out;
  if (spec.mode == SampleMode::Random) {
    if (spec.n_total > sentences.size())
      fail(ErrorKind::InsufficientPopulation, "requested " + std::to_string(spec.n_total) + " of " +
                                                  std::to_string(sentences.size()) + " sentences");
    std::vector<std::size_t> order(sentences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t k = 0; k < spec.n_total; ++k) out.push_back(sentences[order[k]]);
    return out;
  }
  for (TextBox box : kAllTextBoxes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < sentences.size(); ++i)
      if (sentences[i].text_box == box) members.push_back(i);
    if (members.size() < spec.n_per_box)
      fail(ErrorKind::InsufficientPopulation, "text box " + std::string(to_string(box)) + " has " +
                                                  std::to_string(members.size()) + " sentences, need " +
                                                  std::to_string(spec.n_per_box));
    rng.shuffle(members);
    for (std::size_t k = 0; k < spec.n_per_box; ++k) out.push_back(sentences[members[k]]);
  }
  return out;
}

}  // namespace reviewlens::corpus
