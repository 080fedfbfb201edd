#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "reviewlens/corpus/types.hpp"
#include "reviewlens/error.hpp"

namespace reviewlens::classify {

/// Target sentence `i` with up to `window` neighbours on each side, joined by `separator`.
/// Neighbours past the review boundary are omitted.
inline std::string build_context_input(std::span<const std::string> review_sentences, std::size_t i, int window = 1,
                                       std::string_view separator = " [SEP] ") {
  if (i >= review_sentences.size()) fail(ErrorKind::InvalidArgument, "sentence index out of range");
  if (window < 0) fail(ErrorKind::InvalidArgument, "window must be non-negative");
  const std::size_t w = static_cast<std::size_t>(window);
  const std::size_t from = i >= w ? i - w : 0;
  const std::size_t to = std::min(review_sentences.size(), i + w + 1);
  std::string out;
  for (std::size_t k = from; k < to; ++k) {
    if (k > from) out += separator;
    out += review_sentences[k];
  }
  return out;
}

/// Model input per sentence id: the sentence itself (window 0) or its context window within
/// the review, with neighbours ordered by position.
inline std::map<std::string, std::string> context_inputs(std::span<const corpus::Sentence> sentences, int window,
                                                         std::string_view separator = " [SEP] ") {
  std::map<std::string, std::string> out;
  if (window == 0) {
    for (const auto& s : sentences) out[s.sentence_id] = s.text;
    return out;
  }
  std::map<std::string, std::vector<const corpus::Sentence*>> reviews;
  for (const auto& s : sentences) reviews[s.review_id].push_back(&s);
  for (auto& [review, members] : reviews) {
    std::sort(members.begin(), members.end(), [](const auto* a, const auto* b) { return a->position < b->position; });
    std::vector<std::string> texts;
    for (const auto* s : members) texts.push_back(s->text);
    for (std::size_t i = 0; i < members.size(); ++i)
      out[members[i]->sentence_id] = build_context_input(texts, i, window, separator);
  }
  return out;
}

}  // namespace reviewlens::classify
