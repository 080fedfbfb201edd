#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "reviewlens/category.hpp"
#include "reviewlens/corpus/types.hpp"
#include "reviewlens/error.hpp"

namespace reviewlens::corpus {

using Json = nlohmann::ordered_json;

namespace detail {

inline int binary_field(const Json& j, const char* key) {
  if (!j.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  const Json& v = j.at(key);
  if (!v.is_number_integer()) throw std::invalid_argument(std::string("field '") + key + "' must be 0 or 1");
  const auto x = v.get<long long>();
  if (x != 0 && x != 1) throw std::invalid_argument(std::string("field '") + key + "' must be 0 or 1");
  return static_cast<int>(x);
}

inline std::string string_field(const Json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string())
    throw std::invalid_argument(std::string("missing string field '") + key + "'");
  return j.at(key).get<std::string>();
}

}  // namespace detail

inline Json labels_to_json(const LabelVector& labels) {
  Json j = Json::object();
  for (Category c : kAllCategories) j[std::string(codebook_name(c))] = labels[c];
  return j;
}

/// Requires all 12 codebook names with 0/1 values; unknown keys are rejected.
inline LabelVector labels_from_json(const Json& j) {
  if (!j.is_object()) throw std::invalid_argument("'labels' must be an object");
  LabelVector labels;
  for (Category c : kAllCategories) labels[c] = detail::binary_field(j, std::string(codebook_name(c)).c_str());
  for (const auto& [key, value] : j.items())
    if (!parse_category(key)) throw std::invalid_argument("unknown category '" + key + "'");
  return labels;
}

inline Json to_json(const Sentence& s) {
  return Json{{"sentence_id", s.sentence_id},           {"review_id", s.review_id},
              {"position", s.position},                 {"text", s.text},
              {"text_box", std::string(to_string(s.text_box))},
              {"research_domain", std::string(to_string(s.research_domain))},
              {"language", s.language}};
}

inline Sentence sentence_from_json(const Json& j) {
  Sentence s;
  s.sentence_id = detail::string_field(j, "sentence_id");
  s.review_id = detail::string_field(j, "review_id");
  if (!j.contains("position") || !j.at("position").is_number_integer() || j.at("position").get<long long>() < 0)
    throw std::invalid_argument("'position' must be a non-negative integer");
  s.position = j.at("position").get<int>();
  s.text = detail::string_field(j, "text");
  if (s.text.empty()) throw std::invalid_argument("'text' is empty");
  const auto box = parse_text_box(detail::string_field(j, "text_box"));
  if (!box) throw std::invalid_argument("unknown text_box '" + j.at("text_box").get<std::string>() + "'");
  s.text_box = *box;
  const auto domain = parse_research_domain(detail::string_field(j, "research_domain"));
  if (!domain) throw std::invalid_argument("unknown research_domain '" + j.at("research_domain").get<std::string>() + "'");
  s.research_domain = *domain;
  if (j.contains("language")) s.language = detail::string_field(j, "language");
  return s;
}

inline Json to_json(const AnnotationRecord& r) {
  Json j{{"sentence_id", r.sentence_id},
         {"annotator_id", r.annotator_id},
         {"round_id", r.round_id},
         {"labels", labels_to_json(r.labels)}};
  if (r.rationale_context) j["rationale_context"] = *r.rationale_context;
  return j;
}

/// Schema only; gating is checked separately so the error kind can differ.
inline AnnotationRecord annotation_from_json(const Json& j) {
  AnnotationRecord r;
  r.sentence_id = detail::string_field(j, "sentence_id");
  r.annotator_id = detail::string_field(j, "annotator_id");
  r.round_id = detail::string_field(j, "round_id");
  if (!j.contains("labels")) throw std::invalid_argument("missing field 'labels'");
  r.labels = labels_from_json(j.at("labels"));
  if (j.contains("rationale_context") && !j.at("rationale_context").is_null())
    r.rationale_context = detail::binary_field(j, "rationale_context");
  return r;
}

inline Json to_json(const GoldLabel& g) {
  Json agreement = Json::object();
  for (Category c : kAllCategories) agreement[std::string(codebook_name(c))] = std::string(to_string(g.agreement[c]));
  Json j{{"sentence_id", g.sentence_id},
         {"labels", labels_to_json(g.labels)},
         {"agreement", agreement},
         {"n_annotators", g.n_annotators}};
  if (g.rationale_context) j["rationale_context"] = *g.rationale_context;
  return j;
}

inline GoldLabel gold_from_json(const Json& j) {
  GoldLabel g;
  g.sentence_id = detail::string_field(j, "sentence_id");
  if (!j.contains("labels")) throw std::invalid_argument("missing field 'labels'");
  g.labels = labels_from_json(j.at("labels"));
  if (j.contains("agreement")) {
    const Json& a = j.at("agreement");
    if (!a.is_object()) throw std::invalid_argument("'agreement' must be an object");
    for (Category c : kAllCategories) {
      const std::string key(codebook_name(c));
      if (!a.contains(key) || !a.at(key).is_string()) throw std::invalid_argument("missing agreement for '" + key + "'");
      const auto level = parse_agreement(a.at(key).get<std::string>());
      if (!level) throw std::invalid_argument("unknown agreement level for '" + key + "'");
      g.agreement[c] = *level;
    }
  } else {
    g.agreement.values.fill(Agreement::Full);
  }
  if (j.contains("n_annotators")) {
    if (!j.at("n_annotators").is_number_integer()) throw std::invalid_argument("'n_annotators' must be an integer");
    g.n_annotators = j.at("n_annotators").get<int>();
  }
  if (j.contains("rationale_context") && !j.at("rationale_context").is_null())
    g.rationale_context = detail::binary_field(j, "rationale_context");
  return g;
}

/// Calls `on_record(json, line_number)` per non-blank line. Parse failures and any
/// std::invalid_argument thrown by the callback become MalformedRecord with the line number.
inline void read_jsonl(const std::filesystem::path& path, const std::function<void(const Json&, std::size_t)>& on_record) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      fail(ErrorKind::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
    }
    if (!j.is_object()) fail(ErrorKind::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": not an object");
    try {
      on_record(j, line_no);
    } catch (const std::invalid_argument& e) {
      fail(ErrorKind::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Json::exception& e) {
      fail(ErrorKind::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& item : items) out << to_json(item).dump() << '\n';
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

/// Checks gating and (sentence, annotator, round) uniqueness of in-memory records.
inline void validate_annotations(const std::vector<AnnotationRecord>& records) {
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (const auto& r : records) {
    if (!satisfies_gating(r.labels))
      fail(ErrorKind::GatingViolation, "Rationale without Positive/Negative for " + r.sentence_id + " by " + r.annotator_id);
    if (!seen.emplace(r.sentence_id, r.annotator_id, r.round_id).second)
      fail(ErrorKind::DuplicateRecord,
           "duplicate record (" + r.sentence_id + ", " + r.annotator_id + ", " + r.round_id + ")");
  }
}

inline std::vector<AnnotationRecord> ingest_annotations(const std::filesystem::path& path) {
  std::vector<AnnotationRecord> records;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  read_jsonl(path, [&](const Json& j, std::size_t line) {
    AnnotationRecord r = annotation_from_json(j);
    const std::string where = path.string() + ":" + std::to_string(line) + ": ";
    if (!satisfies_gating(r.labels))
      fail(ErrorKind::GatingViolation, where + "Rationale marked without Positive or Negative");
    if (!seen.emplace(r.sentence_id, r.annotator_id, r.round_id).second)
      fail(ErrorKind::DuplicateRecord, where + "duplicate (sentence_id, annotator_id, round_id)");
    records.push_back(std::move(r));
  });
  return records;
}

inline std::vector<Sentence> ingest_sentences(const std::filesystem::path& path) {
  std::vector<Sentence> sentences;
  std::set<std::string> ids;
  std::set<std::pair<std::string, int>> positions;
  read_jsonl(path, [&](const Json& j, std::size_t line) {
    Sentence s = sentence_from_json(j);
    const std::string where = path.string() + ":" + std::to_string(line) + ": ";
    if (!ids.insert(s.sentence_id).second) fail(ErrorKind::DuplicateRecord, where + "duplicate sentence_id " + s.sentence_id);
    if (!positions.emplace(s.review_id, s.position).second)
      fail(ErrorKind::DuplicateRecord, where + "duplicate (review_id, position)");
    sentences.push_back(std::move(s));
  });
  return sentences;
}

inline std::vector<GoldLabel> ingest_gold(const std::filesystem::path& path) {
  std::vector<GoldLabel> golds;
  std::set<std::string> ids;
  read_jsonl(path, [&](const Json& j, std::size_t line) {
    GoldLabel g = gold_from_json(j);
    if (!ids.insert(g.sentence_id).second)
      fail(ErrorKind::DuplicateRecord,
           path.string() + ":" + std::to_string(line) + ": duplicate sentence_id " + g.sentence_id);
    golds.push_back(std::move(g));
  });
  return golds;
}

}  // namespace reviewlens::corpus
