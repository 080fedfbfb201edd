#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reviewlens/agreement.hpp"
#include "reviewlens/category.hpp"
#include "reviewlens/classify/predict.hpp"
#include "reviewlens/corpus/types.hpp"
#include "reviewlens/error.hpp"
#include "reviewlens/metrics.hpp"

namespace reviewlens::prevalence {

struct ReviewLabels {
  std::string review_id;
  std::vector<LabelVector> sentences;
};

struct ReviewPrevalence {
  std::string review_id;
  long long n_sentences = 0;
  PerCategory<std::optional<double>> prevalence;  // Rationale empty when n_posneg == 0
  long long n_posneg = 0;

  bool operator==(const ReviewPrevalence&) const = default;
};

inline bool is_posneg(const LabelVector& l) { return l[Category::Positive] == 1 || l[Category::Negative] == 1; }

/// Share of a review's sentences in each category. Rationale only counts on sentences that are
/// also Positive or Negative, over the number of such sentences.
inline ReviewPrevalence review_prevalence(const ReviewLabels& review) {
  if (review.sentences.empty()) fail(ErrorKind::InvalidArgument, "review " + review.review_id + " has no sentences");
  ReviewPrevalence out;
  out.review_id = review.review_id;
  out.n_sentences = static_cast<long long>(review.sentences.size());
  PerCategory<long long> positives;
  long long rationale = 0;
  for (const auto& l : review.sentences) {
    for (Category c : kAllCategories) positives[c] += l[c];
    if (is_posneg(l)) {
      out.n_posneg += 1;
      rationale += l[Category::Rationale];
    }
  }
  const double n = static_cast<double>(out.n_sentences);
  for (Category c : kAllCategories)
    if (c != Category::Rationale) out.prevalence[c] = static_cast<double>(positives[c]) / n;
  if (out.n_posneg > 0) out.prevalence[Category::Rationale] = static_cast<double>(rationale) / static_cast<double>(out.n_posneg);
  return out;
}

/// Groups sentences by review (first appearance order). Every sentence needs all 12 predictions.
inline std::vector<ReviewLabels> group_predictions(const std::vector<corpus::Sentence>& sentences,
                                                   const classify::PredictionSet& predictions) {
  std::map<std::string, const classify::SentencePrediction*> by_id;
  for (const auto& p : predictions) by_id[p.sentence_id] = &p;
  std::vector<ReviewLabels> reviews;
  std::map<std::string, std::size_t> index;
  for (const auto& s : sentences) {
    const auto it = by_id.find(s.sentence_id);
    if (it == by_id.end()) fail(ErrorKind::MissingCategoryPrediction, "no predictions for sentence " + s.sentence_id);
    LabelVector labels;
    for (Category c : kAllCategories) {
      const auto& p = it->second->by_category[c];
      if (!p)
        fail(ErrorKind::MissingCategoryPrediction,
             "sentence " + s.sentence_id + " lacks a prediction for " + std::string(codebook_name(c)));
      labels[c] = p->label;
    }
    auto [pos, inserted] = index.emplace(s.review_id, reviews.size());
    if (inserted) reviews.push_back({s.review_id, {}});
    reviews[pos->second].sentences.push_back(labels);
  }
  return reviews;
}

inline std::vector<ReviewPrevalence> review_prevalence(const std::vector<ReviewLabels>& reviews) {
  std::vector<ReviewPrevalence> out;
  out.reserve(reviews.size());
  for (const auto& r : reviews) out.push_back(review_prevalence(r));
  return out;
}

inline std::vector<ReviewPrevalence> review_prevalence(const std::vector<corpus::Sentence>& sentences,
                                                       const classify::PredictionSet& predictions) {
  return review_prevalence(group_predictions(sentences, predictions));
}

// ---- summary

struct SummaryOptions {
  double bin_width = 0.05;
  double low_threshold = 0.05;   // counts reviews strictly below
  double high_threshold = 0.50;  // counts reviews strictly above
};

struct CategorySummary {
  std::optional<double> mean;  // empty when no review defines the value
  long long n_defined = 0;
  std::vector<long long> bins;
  long long below_low = 0;
  long long above_high = 0;

  bool operator==(const CategorySummary&) const = default;
};

struct PrevalenceSummary {
  long long n_reviews = 0;
  SummaryOptions options;
  PerCategory<CategorySummary> categories;
};

inline std::size_t bin_count(double width) { return static_cast<std::size_t>(std::ceil(1.0 / width - 1e-9)); }

/// Bin i covers [i*w, (i+1)*w); the last bin is closed so 1.0 lands in it.
inline std::size_t bin_index(double value, double width) {
  const auto n = bin_count(width);
  // Rounding guards values like 0.15 that sit on an edge but compute to 2.9999...
  const double scaled = value / width;
  auto i = static_cast<std::size_t>(std::floor(scaled + 1e-9));
  return std::min(i, n - 1);
}

inline PrevalenceSummary prevalence_summary(const std::vector<ReviewPrevalence>& reviews, const SummaryOptions& opt = {}) {
  if (reviews.empty()) fail(ErrorKind::InvalidArgument, "no reviews to summarize");
  if (!(opt.bin_width > 0 && opt.bin_width <= 1)) fail(ErrorKind::InvalidArgument, "bin width must lie in (0, 1]");
  PrevalenceSummary s;
  s.n_reviews = static_cast<long long>(reviews.size());
  s.options = opt;
  for (Category c : kAllCategories) {
    auto& cs = s.categories[c];
    cs.bins.assign(bin_count(opt.bin_width), 0);
    double total = 0;
    for (const auto& r : reviews) {
      const auto& v = r.prevalence[c];
      if (!v) continue;
      cs.n_defined += 1;
      total += *v;
      cs.bins[bin_index(*v, opt.bin_width)] += 1;
      if (*v < opt.low_threshold) cs.below_low += 1;
      if (*v > opt.high_threshold) cs.above_high += 1;
    }
    if (cs.n_defined > 0) cs.mean = total / static_cast<double>(cs.n_defined);
  }
  return s;
}

/// Sentence-level positive share per category, Rationale included without the review rule.
inline PerCategory<double> predicted_shares(const classify::PredictionSet& predictions) {
  if (predictions.empty()) fail(ErrorKind::InvalidArgument, "no predictions");
  PerCategory<double> shares;
  for (Category c : kAllCategories) {
    long long pos = 0;
    for (const auto& p : predictions) {
      if (!p.by_category[c])
        fail(ErrorKind::MissingCategoryPrediction,
             "sentence " + p.sentence_id + " lacks a prediction for " + std::string(codebook_name(c)));
      pos += p.by_category[c]->label;
    }
    shares[c] = static_cast<double>(pos) / static_cast<double>(predictions.size());
  }
  return shares;
}

inline double compare_annotated_vs_predicted(const PerCategory<double>& gold, const PerCategory<double>& predicted) {
  return agreement::pearson_r(gold.values, predicted.values);
}

// ---- export

inline void write_prevalence_csv(std::ostream& out, const std::vector<ReviewPrevalence>& reviews) {
  out << "review_id,n_sentences";
  for (Category c : kAllCategories) out << ',' << codebook_name(c);
  out << ",n_posneg\n";
  for (const auto& r : reviews) {
    out << r.review_id << ',' << r.n_sentences;
    for (Category c : kAllCategories) out << ',' << (r.prevalence[c] ? metrics::format_number(*r.prevalence[c]) : "");
    out << ',' << r.n_posneg << '\n';
  }
}

inline nlohmann::ordered_json to_json(const PrevalenceSummary& s) {
  nlohmann::ordered_json j;
  j["n_reviews"] = s.n_reviews;
  j["bin_width"] = s.options.bin_width;
  j["low_threshold"] = s.options.low_threshold;
  j["high_threshold"] = s.options.high_threshold;
  nlohmann::ordered_json cats;
  for (Category c : kAllCategories) {
    const auto& cs = s.categories[c];
    cats[std::string(codebook_name(c))] = {
        {"mean", cs.mean ? nlohmann::ordered_json(*cs.mean) : nlohmann::ordered_json()},
        {"n_defined", cs.n_defined},
        {"bins", cs.bins},
        {"below_low", cs.below_low},
        {"above_high", cs.above_high},
    };
  }
  j["categories"] = std::move(cats);
  return j;
}

}  // namespace reviewlens::prevalence
