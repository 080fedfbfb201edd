#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reviewlens/category.hpp"
#include "reviewlens/rng.hpp"

namespace reviewlens::corpus {

/// The five comment fields of a review form.
enum class TextBox { TrackRecord, Relevance, Suitability, Feasibility, OverallComment };
enum class ResearchDomain { SSH, MINT, LS };

inline constexpr std::array<TextBox, 5> kAllTextBoxes{TextBox::TrackRecord, TextBox::Relevance, TextBox::Suitability,
                                                      TextBox::Feasibility, TextBox::OverallComment};

constexpr std::string_view to_string(TextBox b) {
  switch (b) {
    case TextBox::TrackRecord: return "TrackRecord";
    case TextBox::Relevance: return "Relevance";
    case TextBox::Suitability: return "Suitability";
    case TextBox::Feasibility: return "Feasibility";
    case TextBox::OverallComment: return "OverallComment";
  }
  return "";
}

constexpr std::string_view to_string(ResearchDomain d) {
  switch (d) {
    case ResearchDomain::SSH: return "SSH";
    case ResearchDomain::MINT: return "MINT";
    case ResearchDomain::LS: return "LS";
  }
  return "";
}

inline std::optional<TextBox> parse_text_box(std::string_view s) {
  for (TextBox b : kAllTextBoxes)
    if (to_string(b) == s) return b;
  return std::nullopt;
}

inline std::optional<ResearchDomain> parse_research_domain(std::string_view s) {
  for (ResearchDomain d : {ResearchDomain::SSH, ResearchDomain::MINT, ResearchDomain::LS})
    if (to_string(d) == s) return d;
  return std::nullopt;
}

struct Sentence {
  std::string sentence_id;
  std::string review_id;
  int position = 0;  // 0-based within the review
  std::string text;
  TextBox text_box = TextBox::OverallComment;
  ResearchDomain research_domain = ResearchDomain::MINT;
  std::string language = "en";

  bool operator==(const Sentence&) const = default;
};

/// One annotator's judgement of one sentence in one round.
struct AnnotationRecord {
  std::string sentence_id;
  std::string annotator_id;
  std::string round_id;
  LabelVector labels;
  std::optional<int> rationale_context;

  bool operator==(const AnnotationRecord&) const = default;
};

/// Rationale may only be marked on a sentence marked Positive or Negative.
inline bool satisfies_gating(const LabelVector& labels) {
  return labels[Category::Rationale] == 0 || labels[Category::Positive] == 1 || labels[Category::Negative] == 1;
}

/// Full: every annotator gave the same value. Majority: the assigned value has strictly more
/// votes than the other. None: tie, or the assigned value is not the majority side.
enum class Agreement { Full, Majority, None };

constexpr std::string_view to_string(Agreement a) {
  switch (a) {
    case Agreement::Full: return "full";
    case Agreement::Majority: return "majority";
    case Agreement::None: return "none";
  }
  return "";
}

inline std::optional<Agreement> parse_agreement(std::string_view s) {
  for (Agreement a : {Agreement::Full, Agreement::Majority, Agreement::None})
    if (to_string(a) == s) return a;
  return std::nullopt;
}

struct GoldLabel {
  std::string sentence_id;
  LabelVector labels;
  PerCategory<Agreement> agreement;
  int n_annotators = 0;
  std::optional<int> rationale_context;  // aggregated only when every annotator recorded it

  bool operator==(const GoldLabel&) const = default;
};

struct Split {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::vector<std::vector<std::string>> folds;
  std::uint64_t seed = kDefaultSeed;
  Category strat_category = Category::Proposal;

  bool operator==(const Split&) const = default;
};

}  // namespace reviewlens::corpus
