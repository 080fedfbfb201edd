#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "reviewlens/fewshot.hpp"

#ifndef REVIEWLENS_TEST_DATA
#define REVIEWLENS_TEST_DATA "tests/fixtures"
#endif

namespace reviewlens::testing {

// Hand-written exemplars for the golden prompt files.
inline const std::map<Category, std::string>& golden_examples() {
  static const std::map<Category, std::string> ex{
      {Category::TrackRecord, "The applicant has led two large consortia and published widely in the field."},
      {Category::RelevanceOriginalityTopicality, "The question addressed here is new and of clear interest to the discipline."},
      {Category::Suitability, "The chosen survey design fits the research questions well."},
      {Category::Feasibility, "The timeline is realistic given the available staff and budget."},
      {Category::Applicant, "The team combines complementary expertise in chemistry and modelling."},
      {Category::ApplicantQuantity, "She has 45 peer-reviewed articles and an h-index of 21."},
      {Category::Proposal, "The proposal sets out three work packages."},
      {Category::Method, "Samples will be analysed with mass spectrometry."},
      {Category::Positive, "This is an excellent and carefully argued application."},
      {Category::Negative, "The data management plan remains vague."},
      {Category::Suggestion, "I recommend adding a pilot study before the main experiment."},
      {Category::Rationale, "The design is weak because no control group is foreseen."},
  };
  return ex;
}

constexpr const char* kNoCategoryExample = "Please find my comments below.";
constexpr const char* kGoldenTarget = "The work plan could be described in more detail.";

inline fewshot::CategoryPromptSpec golden_spec(Category c) {
  return {c, std::string(info(c).description), golden_examples().at(c), kNoCategoryExample};
}

inline std::filesystem::path golden_path(Category c) {
  return std::filesystem::path(REVIEWLENS_TEST_DATA) / "prompts" / (std::string(codebook_name(c)) + ".txt");
}

}  // namespace reviewlens::testing
