#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "reviewlens/corpus/types.hpp"

namespace reviewlens::corpus {

namespace detail {

inline bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// "<p>", "</div>", "<br/>", "<!-- x -->"; a bare '<' as in "p < 0.05" is left alone.
inline std::string strip_tags(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '<' && i + 1 < s.size()) {
      const auto next = static_cast<unsigned char>(s[i + 1]);
      if (std::isalpha(next) || next == '/' || next == '!') {
        const auto close = s.find('>', i + 1);
        if (close != std::string_view::npos) {
          out.push_back(' ');
          i = close;
          continue;
        }
      }
    }
    out.push_back(s[i]);
  }
  return out;
}

inline std::string decode_entities(std::string_view s) {
  static constexpr std::array<std::pair<std::string_view, std::string_view>, 8> kEntities{{
      {"&nbsp;", " "},
      {"&amp;", "&"},
      {"&lt;", "<"},
      {"&gt;", ">"},
      {"&quot;", "\""},
      {"&#39;", "'"},
      {"&apos;", "'"},
      {"&rsquo;", "\xE2\x80\x99"},
  }};
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '&') {
      bool matched = false;
      for (const auto& [entity, replacement] : kEntities) {
        if (s.substr(i, entity.size()) == entity) {
          out += replacement;
          i += entity.size() - 1;
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    out.push_back(s[i]);
  }
  return out;
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    const bool nbsp = c == 0xC2 && i + 1 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0xA0;
    if (is_space(c) || nbsp || (c < 0x20) || c == 0x7F) {
      if (nbsp) ++i;
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

}  // namespace detail

/// Strips HTML markup and entities, drops control characters and collapses whitespace.
/// Anonymization placeholders ("[UNK]", "REMOVE_DISCIPLINE", ...) pass through verbatim.
/// Iterates to a fixed point, so normalize_text(normalize_text(x)) == normalize_text(x).
inline std::string normalize_text(std::string_view raw) {
  std::string current(raw);
  for (;;) {
    std::string next = detail::collapse_whitespace(detail::strip_tags(detail::decode_entities(current)));
    if (next == current) return next;
    current = std::move(next);
  }
}

namespace detail {

inline const std::vector<std::string>& abbreviations() {
  // Lowercased, without the final period.
  static const std::vector<std::string> kAbbrev{
      "dr", "prof", "mr", "mrs", "ms", "e.g", "i.e", "al", "etc", "vs", "cf", "fig", "figs", "no", "nos", "approx",
      "ca", "resp", "incl", "dept", "univ", "st", "jr", "sr", "ph.d", "phd", "eq", "ref", "refs", "vol", "pp",
      "ed", "eds", "sec", "chap", "nr", "assoc", "asst", "est", "viz", "p", "ibid"};
  return kAbbrev;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Whether the period at `dot` closes an abbreviation or an initial rather than a sentence.
inline bool is_abbreviation(std::string_view text, std::size_t dot) {
  std::size_t start = dot;
  while (start > 0 && !is_space(static_cast<unsigned char>(text[start - 1])) && text[start - 1] != '(' &&
         text[start - 1] != '[' && text[start - 1] != '"') {
    --start;
  }
  const std::string_view word = text.substr(start, dot - start);
  if (word.empty()) return false;
  if (word.size() == 1 && std::isupper(static_cast<unsigned char>(word[0]))) return true;  // initial, "F. [UNK]"
  const std::string w = lower(word);
  const auto& list = abbreviations();
  return std::find(list.begin(), list.end(), w) != list.end();
}

}  // namespace detail

/// Rule-based splitter: a sentence ends at '.', '!' or '?' (plus trailing quotes or brackets)
/// followed by whitespace, unless the period closes an abbreviation or initial, or the next word
/// starts in lowercase.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  auto emit = [&](std::size_t from, std::size_t to) {
    while (from < to && detail::is_space(static_cast<unsigned char>(text[from]))) ++from;
    while (to > from && detail::is_space(static_cast<unsigned char>(text[to - 1]))) --to;
    if (to > from) out.emplace_back(text.substr(from, to - from));
  };
  std::size_t begin = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    std::size_t end = i + 1;
    while (end < text.size() && (text[end] == '.' || text[end] == '!' || text[end] == '?')) ++end;
    while (end < text.size() && (text[end] == '"' || text[end] == '\'' || text[end] == ')' || text[end] == ']')) ++end;
    // Closing curly quote (U+201D / U+2019).
    while (end + 2 < text.size() + 0 && static_cast<unsigned char>(text[end]) == 0xE2 &&
           static_cast<unsigned char>(text[end + 1]) == 0x80 &&
           (static_cast<unsigned char>(text[end + 2]) == 0x9D || static_cast<unsigned char>(text[end + 2]) == 0x99)) {
      end += 3;
    }
    if (end < text.size() && !detail::is_space(static_cast<unsigned char>(text[end]))) continue;
    std::size_t next = end;
    while (next < text.size() && detail::is_space(static_cast<unsigned char>(text[next]))) ++next;
    if (next >= text.size()) break;
    if (c == '.' && end == i + 1 && detail::is_abbreviation(text, i)) continue;
    if (std::islower(static_cast<unsigned char>(text[next]))) continue;
    emit(begin, end);
    begin = end;
    i = end - 1;
  }
  emit(begin, text.size());
  return out;
}

/// Splits one normalized text box into Sentences with consecutive positions starting at
/// `first_position` (so the boxes of one review can be numbered in sequence).
inline std::vector<Sentence> segment_review(std::string_view review_text, const std::string& review_id, TextBox box,
                                            int first_position = 0,
                                            ResearchDomain domain = ResearchDomain::MINT,
                                            const std::string& language = "en") {
  std::vector<Sentence> out;
  int position = first_position;
  for (auto& text : split_sentences(review_text)) {
    Sentence s;
    s.review_id = review_id;
    s.position = position;
    s.sentence_id = review_id + ":" + std::to_string(position);
    s.text = std::move(text);
    s.text_box = box;
    s.research_domain = domain;
    s.language = language;
    out.push_back(std::move(s));
    ++position;
  }
  return out;
}

}  // namespace reviewlens::corpus
