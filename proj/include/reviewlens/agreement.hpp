#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reviewlens/category.hpp"
#include "reviewlens/corpus/aggregate.hpp"
#include "reviewlens/corpus/types.hpp"
#include "reviewlens/error.hpp"
#include "reviewlens/metrics.hpp"

namespace reviewlens::agreement {

inline constexpr int kDefaultPanelSize = 3;

struct CategoryAgreement {
  double full_agreement_rate = 0;  // unanimous on either value
  double prevalence_majority = 0;  // share labelled 1 by the quorum rule
  double prevalence_full = 0;      // share labelled 1 by every annotator

  bool operator==(const CategoryAgreement&) const = default;
};

struct AgreementSummary {
  long long n_sentences = 0;
  PerCategory<CategoryAgreement> categories;
  // Only present when every record in scope carried rationale_context.
  std::optional<double> rationale_context_agreement;

  bool operator==(const AgreementSummary&) const = default;
};

struct AgreementReport {
  int panel_size = kDefaultPanelSize;
  AgreementSummary overall;
  std::map<std::string, AgreementSummary> per_round;

  bool operator==(const AgreementReport&) const = default;
};

namespace detail {

inline AgreementSummary summarize(const std::vector<corpus::AnnotationRecord>& records, int panel_size) {
  const auto groups = corpus::group_by_sentence(records);
  AgreementSummary s;
  s.n_sentences = static_cast<long long>(groups.size());
  if (groups.empty()) return s;
  PerCategory<long long> full, majority, all_ones;
  long long context_full = 0;
  bool context_everywhere = true;
  for (const auto& [sentence_id, group] : groups) {
    const int n = static_cast<int>(group.size());
    if (n < panel_size)
      fail(ErrorKind::InsufficientAnnotators, "sentence " + sentence_id + " has " + std::to_string(n) +
                                                  " record(s), panel size is " + std::to_string(panel_size));
    if (n > panel_size)
      fail(ErrorKind::InvalidArgument, "sentence " + sentence_id + " has " + std::to_string(n) +
                                           " records, panel size is " + std::to_string(panel_size));
    for (Category c : kAllCategories) {
      int ones = 0;
      for (const auto* r : group) ones += r->labels[c];
      if (ones == 0 || ones == n) full[c] += 1;
      if (ones == n) all_ones[c] += 1;
      if (ones >= corpus::kDefaultQuorum) majority[c] += 1;
    }
    int ctx = 0;
    for (const auto* r : group) {
      if (!r->rationale_context) {
        context_everywhere = false;
        break;
      }
      ctx += *r->rationale_context;
    }
    if (context_everywhere && (ctx == 0 || ctx == n)) context_full += 1;
  }
  const double n = static_cast<double>(groups.size());
  for (Category c : kAllCategories) {
    s.categories[c].full_agreement_rate = static_cast<double>(full[c]) / n;
    s.categories[c].prevalence_majority = static_cast<double>(majority[c]) / n;
    s.categories[c].prevalence_full = static_cast<double>(all_ones[c]) / n;
  }
  if (context_everywhere) s.rationale_context_agreement = static_cast<double>(context_full) / n;
  return s;
}

}  // namespace detail

/// Raw (not chance-corrected) agreement, overall and per annotation round.
inline AgreementReport agreement_stats(const std::vector<corpus::AnnotationRecord>& records,
                                       int panel_size = kDefaultPanelSize) {
  if (panel_size < 1) fail(ErrorKind::InvalidArgument, "panel size must be positive");
  AgreementReport report;
  report.panel_size = panel_size;
  report.overall = detail::summarize(records, panel_size);
  std::map<std::string, std::vector<corpus::AnnotationRecord>> by_round;
  for (const auto& r : records) by_round[r.round_id].push_back(r);
  for (const auto& [round, rs] : by_round) report.per_round[round] = detail::summarize(rs, panel_size);
  return report;
}

/// Mean full-agreement rate over the twelve categories.
inline double mean_full_agreement(const AgreementSummary& s) {
  double total = 0;
  for (const auto& c : s.categories) total += c.full_agreement_rate;
  return total / static_cast<double>(kNumCategories);
}

/// Bin k counts sentences assigned exactly k categories.
struct CountDistribution {
  std::array<long long, kNumCategories + 1> counts{};
  long long total = 0;

  double share(std::size_t k) const { return total == 0 ? 0.0 : static_cast<double>(counts.at(k)) / static_cast<double>(total); }
  bool operator==(const CountDistribution&) const = default;
};

inline CountDistribution category_count_distribution(const std::vector<corpus::GoldLabel>& golds) {
  if (golds.empty()) fail(ErrorKind::InvalidArgument, "no gold labels");
  CountDistribution d;
  for (const auto& g : golds) {
    std::size_t k = 0;
    for (int v : g.labels) k += v == 1 ? 1 : 0;
    d.counts[k] += 1;
  }
  d.total = static_cast<long long>(golds.size());
  return d;
}

inline PerCategory<double> prevalence_shares(const std::vector<corpus::GoldLabel>& golds) {
  if (golds.empty()) fail(ErrorKind::InvalidArgument, "no gold labels");
  PerCategory<long long> positives;
  for (const auto& g : golds)
    for (Category c : kAllCategories) positives[c] += g.labels[c];
  PerCategory<double> shares;
  for (Category c : kAllCategories) shares[c] = static_cast<double>(positives[c]) / static_cast<double>(golds.size());
  return shares;
}

/// Product-moment correlation, computed on centred values.
inline double pearson_r(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) fail(ErrorKind::InvalidArgument, "pearson_r inputs differ in length");
  if (xs.size() < 2) fail(ErrorKind::InvalidArgument, "pearson_r needs at least two points");
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) fail(ErrorKind::ZeroVariance, "pearson_r input has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Pearson r over categories present in both maps.
inline double pearson_r(const std::map<Category, double>& a, const std::map<Category, double>& b) {
  std::vector<double> xs, ys;
  for (const auto& [c, v] : a) {
    const auto it = b.find(c);
    if (it == b.end()) continue;
    xs.push_back(v);
    ys.push_back(it->second);
  }
  return pearson_r(xs, ys);
}

// ---- annotator difficulty survey

inline constexpr int kMinScore = 1;
inline constexpr int kMaxScore = 10;

struct SurveyResponse {
  std::string annotator_id;
  Category category{};
  int score = 0;

  bool operator==(const SurveyResponse&) const = default;
};

struct DifficultySurvey {
  std::vector<SurveyResponse> responses;
  PerCategory<std::optional<double>> means;  // empty when no annotator answered

  bool operator==(const DifficultySurvey&) const = default;
};

inline DifficultySurvey make_survey(std::vector<SurveyResponse> responses) {
  DifficultySurvey s;
  PerCategory<long long> sums, counts;
  for (const auto& r : responses) {
    if (r.score < kMinScore || r.score > kMaxScore)
      fail(ErrorKind::OutOfRangeScore, "score " + std::to_string(r.score) + " for " +
                                           std::string(codebook_name(r.category)) + " is outside 1..10");
    sums[r.category] += r.score;
    counts[r.category] += 1;
  }
  for (Category c : kAllCategories)
    if (counts[c] > 0) s.means[c] = static_cast<double>(sums[c]) / static_cast<double>(counts[c]);
  s.responses = std::move(responses);
  return s;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(std::move(cur));
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? "" : f.substr(b, e - b + 1);
  }
  return out;
}

inline std::optional<Category> parse_any_category_name(const std::string& s) {
  if (auto c = parse_category(s)) return c;
  for (Category c : kAllCategories)
    if (display_name(c) == s) return c;
  return std::nullopt;
}

}  // namespace detail

/// Reads `annotator_id,category,score`. Blank scores are missing responses and are skipped.
inline DifficultySurvey read_survey(std::istream& in, const std::string& where = "survey") {
  std::string line;
  std::size_t line_no = 0;
  auto where_at = [&] { return where + ":" + std::to_string(line_no) + ": "; };
  std::map<std::string, std::size_t> col;
  std::vector<SurveyResponse> responses;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = detail::split_csv_line(line);
    if (col.empty()) {
      for (std::size_t i = 0; i < fields.size(); ++i) col[fields[i]] = i;
      for (const char* name : {"annotator_id", "category", "score"})
        if (!col.count(name)) fail(ErrorKind::MalformedRecord, where_at() + "missing column " + name);
      continue;
    }
    auto field = [&](const char* name) -> const std::string& {
      const auto i = col.at(name);
      if (i >= fields.size()) fail(ErrorKind::MalformedRecord, where_at() + "too few fields");
      return fields[i];
    };
    const auto category = detail::parse_any_category_name(field("category"));
    if (!category) fail(ErrorKind::MalformedRecord, where_at() + "unknown category '" + field("category") + "'");
    const auto& score_text = field("score");
    if (score_text.empty()) continue;
    std::size_t used = 0;
    int score = 0;
    try {
      score = std::stoi(score_text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != score_text.size()) fail(ErrorKind::MalformedRecord, where_at() + "score is not an integer");
    if (score < kMinScore || score > kMaxScore)
      fail(ErrorKind::OutOfRangeScore, where_at() + "score " + score_text + " is outside 1..10");
    responses.push_back({field("annotator_id"), *category, score});
  }
  if (col.empty()) fail(ErrorKind::MalformedRecord, where + ": empty survey file");
  return make_survey(std::move(responses));
}

inline DifficultySurvey ingest_survey(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return read_survey(in, path.string());
}

// ---- export

inline nlohmann::ordered_json to_json(const AgreementSummary& s) {
  nlohmann::ordered_json j;
  j["n_sentences"] = s.n_sentences;
  nlohmann::ordered_json cats;
  for (Category c : kAllCategories) {
    const auto& a = s.categories[c];
    cats[std::string(codebook_name(c))] = {{"full_agreement_rate", a.full_agreement_rate},
                                           {"prevalence_majority", a.prevalence_majority},
                                           {"prevalence_full", a.prevalence_full}};
  }
  j["categories"] = std::move(cats);
  j["mean_full_agreement_rate"] = s.n_sentences ? mean_full_agreement(s) : 0.0;
  j["rationale_context_agreement"] =
      s.rationale_context_agreement ? nlohmann::ordered_json(*s.rationale_context_agreement) : nlohmann::ordered_json();
  return j;
}

inline nlohmann::ordered_json to_json(const AgreementReport& r) {
  nlohmann::ordered_json j;
  j["panel_size"] = r.panel_size;
  j["overall"] = to_json(r.overall);
  nlohmann::ordered_json rounds = nlohmann::ordered_json::object();
  for (const auto& [id, s] : r.per_round) rounds[id] = to_json(s);
  j["per_round"] = std::move(rounds);
  return j;
}

/// One row per (scope, category); scope is "all" or a round id.
inline void write_agreement_csv(std::ostream& out, const AgreementReport& r) {
  out << "scope,category,n_sentences,full_agreement_rate,prevalence_majority,prevalence_full\n";
  auto rows = [&](const std::string& scope, const AgreementSummary& s) {
    for (Category c : kAllCategories) {
      const auto& a = s.categories[c];
      out << scope << ',' << codebook_name(c) << ',' << s.n_sentences << ',' << metrics::format_number(a.full_agreement_rate)
          << ',' << metrics::format_number(a.prevalence_majority) << ',' << metrics::format_number(a.prevalence_full)
          << '\n';
    }
  };
  rows("all", r.overall);
  for (const auto& [id, s] : r.per_round) rows(id, s);
}

inline nlohmann::ordered_json to_json(const CountDistribution& d) {
  nlohmann::ordered_json j;
  j["total"] = d.total;
  nlohmann::ordered_json bins = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < d.counts.size(); ++k) bins.push_back({{"k", k}, {"count", d.counts[k]}, {"share", d.share(k)}});
  j["bins"] = std::move(bins);
  return j;
}

inline void write_count_distribution_csv(std::ostream& out, const CountDistribution& d) {
  out << "n_categories,count,share\n";
  for (std::size_t k = 0; k < d.counts.size(); ++k)
    out << k << ',' << d.counts[k] << ',' << metrics::format_number(d.share(k)) << '\n';
}

inline void write_survey_csv(std::ostream& out, const DifficultySurvey& s) {
  out << "category,mean_score,n_responses\n";
  for (Category c : kAllCategories) {
    long long n = 0;
    for (const auto& r : s.responses) n += r.category == c ? 1 : 0;
    out << codebook_name(c) << ',' << (s.means[c] ? metrics::format_number(*s.means[c]) : "") << ',' << n << '\n';
  }
}

}  // namespace reviewlens::agreement
