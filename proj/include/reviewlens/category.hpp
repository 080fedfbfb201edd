#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace reviewlens {

enum class Category : std::size_t {
  TrackRecord = 0,
  RelevanceOriginalityTopicality,
  Suitability,
  Feasibility,
  Applicant,
  ApplicantQuantity,
  Proposal,
  Method,
  Positive,
  Negative,
  Suggestion,
  Rationale,
};

inline constexpr std::size_t kNumCategories = 12;

enum class Dimension { EvaluationCriteria, Focus, StatementTypeReasoning };

struct CategoryInfo {
  Category id;
  std::string_view codebook_name;
  std::string_view display_name;
  Dimension dimension;
  std::string_view description;
};

// Codebook text for each category, in enum order.
inline constexpr std::array<CategoryInfo, kNumCategories> kCategoryTable{{
    {Category::TrackRecord, "criterion_track_record", "Track Record", Dimension::EvaluationCriteria,
     "Does the sentence address the scientific qualifications of the applicant(s)/team?"},
    {Category::RelevanceOriginalityTopicality, "criterion_relevance_originality_topicality",
     "Relevance, Originality, Topicality", Dimension::EvaluationCriteria,
     "Does the sentence address the scientific relevance/originality/topicality of the proposed "
     "research project?"},
    {Category::Suitability, "criterion_suitability", "Suitability", Dimension::EvaluationCriteria,
     "Does the sentence address the suitability of the methods to be used within the proposed "
     "research project?"},
    {Category::Feasibility, "criterion_feasibility", "Feasibility", Dimension::EvaluationCriteria,
     "Does the sentence address the feasibility of the proposed research project?"},
    {Category::Applicant, "candidate_other", "Applicant", Dimension::Focus,
     "Does the sentence address the applicant(s)/team or their qualifications, without mentioning "
     "quantitative indicators?"},
    {Category::ApplicantQuantity, "candidate_quantity", "Applicant: Quantity", Dimension::Focus,
     "Does the sentence use quantitative indicators to describe the applicant(s) or team?"},
    {Category::Proposal, "proposal_general", "Proposal", Dimension::Focus,
     "Does the sentence address the proposal or specific parts of it, as opposed to the "
     "applicant(s) or context beyond the proposal (such as the research field or the funding "
     "scheme's objectives etc.)?"},
    {Category::Method, "proposal_method", "Method", Dimension::Focus,
     "Does the sentence address the methods to be used in the proposed research project?"},
    {Category::Positive, "positive", "Positive", Dimension::StatementTypeReasoning,
     "Is the sentence itself a positive statement or does it contain a positive statement?"},
    {Category::Negative, "negative", "Negative", Dimension::StatementTypeReasoning,
     "Is the sentence itself a negative statement or does it contain a negative statement?"},
    {Category::Suggestion, "suggestion", "Suggestion", Dimension::StatementTypeReasoning,
     "Does the sentence suggest how to improve the proposal?"},
    {Category::Rationale, "rationale", "Rationale", Dimension::StatementTypeReasoning,
     "Does the sentence provide rational supporting the positive or negative statement?"},
}};

inline constexpr std::array<Category, kNumCategories> kAllCategories = [] {
  std::array<Category, kNumCategories> out{};
  for (std::size_t i = 0; i < kNumCategories; ++i) out[i] = static_cast<Category>(i);
  return out;
}();

constexpr std::size_t index_of(Category c) { return static_cast<std::size_t>(c); }
constexpr const CategoryInfo& info(Category c) { return kCategoryTable[index_of(c)]; }
constexpr std::string_view codebook_name(Category c) { return info(c).codebook_name; }
constexpr std::string_view display_name(Category c) { return info(c).display_name; }

constexpr std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::EvaluationCriteria: return "EvaluationCriteria";
    case Dimension::Focus: return "Focus";
    case Dimension::StatementTypeReasoning: return "StatementTypeReasoning";
  }
  return "";
}

/// Accepts the codebook name ("criterion_track_record") or the enum spelling ("TrackRecord").
inline std::optional<Category> parse_category(std::string_view name) {
  static constexpr std::array<std::string_view, kNumCategories> kEnumNames{
      "TrackRecord", "RelevanceOriginalityTopicality", "Suitability", "Feasibility",
      "Applicant",   "ApplicantQuantity",              "Proposal",    "Method",
      "Positive",    "Negative",                       "Suggestion",  "Rationale"};
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    if (kCategoryTable[i].codebook_name == name || kEnumNames[i] == name) {
      return static_cast<Category>(i);
    }
  }
  return std::nullopt;
}

/// Fixed-size per-category container indexed by Category.
template <typename T>
struct PerCategory {
  std::array<T, kNumCategories> values{};

  T& operator[](Category c) { return values[index_of(c)]; }
  const T& operator[](Category c) const { return values[index_of(c)]; }
  auto begin() { return values.begin(); }
  auto end() { return values.end(); }
  auto begin() const { return values.begin(); }
  auto end() const { return values.end(); }
  bool operator==(const PerCategory&) const = default;
};

using LabelVector = PerCategory<int>;

}  // namespace reviewlens
