#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "reviewlens/agreement.hpp"
#include "reviewlens/corpus/io.hpp"
#include "reviewlens/corpus/split.hpp"
#include "reviewlens/corpus/types.hpp"
#include "reviewlens/error.hpp"
#include "reviewlens/rng.hpp"

namespace reviewlens::service {

using Json = nlohmann::ordered_json;

inline constexpr int kAnnotatorsPerSentence = 3;
inline constexpr const char* kDbPathEnv = "REVIEWLENS_DB_PATH";
inline constexpr const char* kBindAddrEnv = "REVIEWLENS_BIND_ADDR";

enum class RoundStatus { Open, Closed };

inline std::string_view to_string(RoundStatus s) { return s == RoundStatus::Open ? "open" : "closed"; }

struct Assignment {
  std::string sentence_id;
  std::vector<std::string> annotators;  // kAnnotatorsPerSentence distinct panelists

  bool operator==(const Assignment&) const = default;
};

struct Round {
  std::string round_id;
  corpus::SampleSpec spec;
  std::vector<std::string> panel;
  std::vector<Assignment> assignments;  // in sampling order
  RoundStatus status = RoundStatus::Open;
};

struct Revocation {
  std::string round_id, sentence_id, annotator_id, reason;
};

struct Progress {
  long long assigned = 0;            // sentence-annotator pairs
  long long submitted = 0;           // accepted, not revoked
  long long complete_sentences = 0;  // all panelists' records present
};

struct RoundAgreement {
  std::string round_id;
  long long complete_sentences = 0;
  long long partial_sentences = 0;  // some but not all records in; excluded from the report
  long long pending_sentences = 0;  // no records yet
  std::optional<agreement::AgreementReport> report;
};

/// Spreads every sentence over kAnnotatorsPerSentence consecutive members of a seeded
/// permutation of the panel, cycling, so per-annotator loads differ by at most one.
inline std::vector<Assignment> assign(const std::vector<corpus::Sentence>& sample, std::vector<std::string> panel,
                                      std::uint64_t seed) {
  if (static_cast<int>(panel.size()) < kAnnotatorsPerSentence)
    fail(ErrorKind::PanelTooSmall, "panel has " + std::to_string(panel.size()) + " annotator(s), need at least " +
                                       std::to_string(kAnnotatorsPerSentence));
  std::set<std::string> distinct(panel.begin(), panel.end());
  if (distinct.size() != panel.size()) fail(ErrorKind::InvalidArgument, "panel lists an annotator twice");
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  rng.shuffle(panel);
  std::vector<Assignment> out;
  std::size_t next = 0;
  for (const auto& s : sample) {
    Assignment a{s.sentence_id, {}};
    for (int k = 0; k < kAnnotatorsPerSentence; ++k) a.annotators.push_back(panel[next++ % panel.size()]);
    std::sort(a.annotators.begin(), a.annotators.end());
    out.push_back(std::move(a));
  }
  return out;
}

// ---- JSON

inline Json spec_to_json(const corpus::SampleSpec& s) {
  return {{"mode", s.mode == corpus::SampleMode::Random ? "random" : "stratified_by_text_box"},
          {"n_total", s.n_total},
          {"n_per_box", s.n_per_box},
          {"seed", s.seed}};
}

inline corpus::SampleSpec spec_from_json(const Json& j) {
  if (!j.is_object()) fail(ErrorKind::MalformedRecord, "sampling spec must be an object");
  corpus::SampleSpec s;
  const auto mode = j.value("mode", std::string("random"));
  if (mode == "random") s.mode = corpus::SampleMode::Random;
  else if (mode == "stratified_by_text_box" || mode == "stratified") s.mode = corpus::SampleMode::StratifiedByTextBox;
  else fail(ErrorKind::MalformedRecord, "unknown sampling mode '" + mode + "'");
  try {
    s.n_total = j.value("n_total", std::size_t{0});
    s.n_per_box = j.value("n_per_box", std::size_t{0});
    s.seed = j.value("seed", kDefaultSeed);
  } catch (const Json::exception& e) {
    fail(ErrorKind::MalformedRecord, std::string("sampling spec: ") + e.what());
  }
  if ((s.mode == corpus::SampleMode::Random ? s.n_total : s.n_per_box) == 0)
    fail(ErrorKind::InvalidArgument, "sampling spec requests no sentences");
  return s;
}

inline Json to_json(const Progress& p) {
  return {{"assigned", p.assigned}, {"submitted", p.submitted}, {"complete_sentences", p.complete_sentences}};
}

inline Json round_json(const Round& r, bool with_assignments = true) {
  Json j{{"round_id", r.round_id}, {"spec", spec_to_json(r.spec)}, {"panel", r.panel}, {"status", to_string(r.status)},
         {"n_sentences", r.assignments.size()}};
  if (with_assignments) {
    Json arr = Json::array();
    for (const auto& a : r.assignments) arr.push_back({{"sentence_id", a.sentence_id}, {"annotators", a.annotators}});
    j["assignments"] = std::move(arr);
  }
  return j;
}

inline Json to_json(const RoundAgreement& a) {
  return {{"round_id", a.round_id},
          {"complete_sentences", a.complete_sentences},
          {"partial_sentences", a.partial_sentences},
          {"pending_sentences", a.pending_sentences},
          {"report", a.report ? Json(agreement::to_json(*a.report)) : Json()}};
}

inline Json category_descriptors() {
  Json arr = Json::array();
  for (Category c : kAllCategories)
    arr.push_back({{"category", codebook_name(c)}, {"display_name", display_name(c)}, {"description", info(c).description}});
  return arr;
}

// ---- store

/// In-memory state behind an append-only JSONL event log. Every mutation is appended and
/// flushed before it becomes visible; opening the store replays the log. One writer at a time.
class Store {
 public:
  Store() = default;  // memory only

  explicit Store(std::filesystem::path log_path) : log_path_(std::move(log_path)) {
    if (std::filesystem::exists(*log_path_)) replay();
    if (log_path_->has_parent_path()) std::filesystem::create_directories(log_path_->parent_path());
    log_.open(*log_path_, std::ios::binary | std::ios::app);
    if (!log_) fail(ErrorKind::Io, "cannot open store log " + log_path_->string());
  }

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// Adds sentences to the pool rounds sample from. Re-adding an identical sentence is a no-op.
  std::size_t add_sentences(const std::vector<corpus::Sentence>& sentences) {
    std::unique_lock lock(mu_);
    std::vector<corpus::Sentence> fresh;
    std::set<std::string> batch;
    for (const auto& s : sentences) {
      const auto it = sentence_index_.find(s.sentence_id);
      if (it != sentence_index_.end()) {
        if (pool_[it->second] != s) fail(ErrorKind::DuplicateRecord, "sentence " + s.sentence_id + " already stored with other content");
        continue;
      }
      if (!batch.insert(s.sentence_id).second) fail(ErrorKind::DuplicateRecord, "sentence " + s.sentence_id + " repeated in batch");
      fresh.push_back(s);
    }
    if (fresh.empty()) return 0;
    Json arr = Json::array();
    for (const auto& s : fresh) arr.push_back(corpus::to_json(s));
    append({{"event", "sentences"}, {"sentences", std::move(arr)}});
    for (auto& s : fresh) apply_sentence(std::move(s));
    return batch.size();
  }

  std::size_t pool_size() const {
    std::shared_lock lock(mu_);
    return pool_.size();
  }

  Round create_round(const corpus::SampleSpec& spec, const std::vector<std::string>& panel, std::string round_id = {}) {
    std::unique_lock lock(mu_);
    if (static_cast<int>(panel.size()) < kAnnotatorsPerSentence)
      fail(ErrorKind::PanelTooSmall, "panel has " + std::to_string(panel.size()) + " annotator(s), need at least " +
                                         std::to_string(kAnnotatorsPerSentence));
    if (round_id.empty()) round_id = "round-" + std::to_string(rounds_.size() + 1);
    if (rounds_.contains(round_id)) fail(ErrorKind::DuplicateRecord, "round " + round_id + " exists");
    Round r;
    r.round_id = round_id;
    r.spec = spec;
    r.panel = panel;
    r.assignments = assign(corpus::sample_round(pool_, spec), panel, spec.seed);
    Json j = round_json(r);
    j["event"] = "round";
    append(j);
    apply_round(r);
    return r;
  }

  Round round(const std::string& round_id) const {
    std::shared_lock lock(mu_);
    return state(round_id).round;
  }

  std::vector<std::string> round_ids() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, st] : rounds_) out.push_back(id);
    return out;
  }

  Progress progress(const std::string& round_id) const {
    std::shared_lock lock(mu_);
    const auto& st = state(round_id);
    Progress p;
    p.assigned = static_cast<long long>(st.round.assignments.size()) * kAnnotatorsPerSentence;
    p.submitted = static_cast<long long>(st.records.size());
    for (const auto& a : st.round.assignments)
      if (submitted_count(st, a.sentence_id) == kAnnotatorsPerSentence) ++p.complete_sentences;
    return p;
  }

  /// Up to n pending sentences from the annotator's queue, in queue order. Read-only.
  std::vector<corpus::Sentence> next_assignments(const std::string& annotator_id, const std::string& round_id,
                                                 std::size_t n) const {
    std::shared_lock lock(mu_);
    const auto& st = state(round_id);
    if (st.round.status == RoundStatus::Closed) fail(ErrorKind::RoundClosed, "round " + round_id + " is closed");
    const auto q = st.queues.find(annotator_id);
    if (q == st.queues.end()) fail(ErrorKind::NotInPanel, annotator_id + " is not on the panel of " + round_id);
    std::vector<corpus::Sentence> out;
    for (const auto& id : q->second) {
      if (out.size() >= n) break;
      out.push_back(pool_[sentence_index_.at(id)]);
    }
    return out;
  }

  /// Accepts the record or throws; (sentence, annotator, round) uniqueness is checked and the
  /// record logged under the same exclusive lock.
  void submit(const corpus::AnnotationRecord& record) {
    std::unique_lock lock(mu_);
    auto& st = state(record.round_id);
    check_submittable(st, record);
    Json j = corpus::to_json(record);
    j["event"] = "annotation";
    append(j);
    apply_annotation(st, record);
  }

  /// Supervisor correction: withdraws an accepted record and puts the sentence back in the
  /// annotator's queue. The revoked record stays in the log.
  void revoke(const Revocation& rev) {
    std::unique_lock lock(mu_);
    auto& st = state(rev.round_id);
    if (st.round.status == RoundStatus::Closed) fail(ErrorKind::RoundClosed, "round " + rev.round_id + " is closed");
    if (!st.records.contains({rev.sentence_id, rev.annotator_id}))
      fail(ErrorKind::InvalidArgument, "no accepted record of " + rev.sentence_id + " by " + rev.annotator_id);
    append({{"event", "revocation"},
            {"round_id", rev.round_id},
            {"sentence_id", rev.sentence_id},
            {"annotator_id", rev.annotator_id},
            {"reason", rev.reason}});
    apply_revocation(st, rev);
  }

  void close_round(const std::string& round_id) {
    std::unique_lock lock(mu_);
    auto& st = state(round_id);
    if (st.round.status == RoundStatus::Closed) return;
    append({{"event", "close"}, {"round_id", round_id}});
    st.round.status = RoundStatus::Closed;
  }

  /// Accepted records ordered by (sentence_id, annotator_id).
  std::vector<corpus::AnnotationRecord> records(const std::string& round_id) const {
    std::shared_lock lock(mu_);
    std::vector<corpus::AnnotationRecord> out;
    for (const auto& [key, rec] : state(round_id).records) out.push_back(rec);
    return out;
  }

  std::vector<Revocation> revocations(const std::string& round_id) const {
    std::shared_lock lock(mu_);
    return state(round_id).revocations;
  }

  /// Byte-stable annotations.jsonl content.
  std::string export_round(const std::string& round_id) const {
    std::string out;
    for (const auto& r : records(round_id)) out += corpus::to_json(r).dump() + "\n";
    return out;
  }

  RoundAgreement round_agreement(const std::string& round_id) const {
    std::shared_lock lock(mu_);
    const auto& st = state(round_id);
    RoundAgreement out;
    out.round_id = round_id;
    std::set<std::string> complete;
    for (const auto& a : st.round.assignments) {
      const int n = submitted_count(st, a.sentence_id);
      if (n == kAnnotatorsPerSentence) {
        ++out.complete_sentences;
        complete.insert(a.sentence_id);
      } else if (n > 0) {
        ++out.partial_sentences;
      } else {
        ++out.pending_sentences;
      }
    }
    if (complete.empty()) return out;
    std::vector<corpus::AnnotationRecord> recs;
    for (const auto& [key, rec] : st.records)
      if (complete.contains(key.first)) recs.push_back(rec);
    out.report = agreement::agreement_stats(recs, kAnnotatorsPerSentence);
    return out;
  }

 private:
  struct RoundState {
    Round round;
    std::map<std::string, std::vector<std::string>> queues;  // annotator -> pending sentence ids
    std::map<std::string, std::set<std::string>> assigned;   // sentence -> annotators
    std::map<std::pair<std::string, std::string>, corpus::AnnotationRecord> records;  // (sentence, annotator)
    std::vector<Revocation> revocations;
  };

  const RoundState& state(const std::string& round_id) const {
    const auto it = rounds_.find(round_id);
    if (it == rounds_.end()) fail(ErrorKind::UnknownRound, "no round " + round_id);
    return it->second;
  }
  RoundState& state(const std::string& round_id) {
    return const_cast<RoundState&>(static_cast<const Store*>(this)->state(round_id));
  }

  static int submitted_count(const RoundState& st, const std::string& sentence_id) {
    const auto lo = st.records.lower_bound({sentence_id, std::string()});
    int n = 0;
    for (auto it = lo; it != st.records.end() && it->first.first == sentence_id; ++it) ++n;
    return n;
  }

  static void check_submittable(const RoundState& st, const corpus::AnnotationRecord& r) {
    if (st.round.status == RoundStatus::Closed) fail(ErrorKind::RoundClosed, "round " + r.round_id + " is closed");
    for (Category c : kAllCategories)
      if (r.labels[c] != 0 && r.labels[c] != 1) fail(ErrorKind::MalformedRecord, "labels must be 0 or 1");
    if (r.rationale_context && *r.rationale_context != 0 && *r.rationale_context != 1)
      fail(ErrorKind::MalformedRecord, "rationale_context must be 0 or 1");
    if (!corpus::satisfies_gating(r.labels))
      fail(ErrorKind::GatingViolation, "Rationale requires Positive or Negative (" + r.sentence_id + ")");
    if (!st.queues.contains(r.annotator_id)) fail(ErrorKind::NotInPanel, r.annotator_id + " is not on the panel of " + r.round_id);
    const auto a = st.assigned.find(r.sentence_id);
    if (a == st.assigned.end() || !a->second.contains(r.annotator_id))
      fail(ErrorKind::NotAssigned, r.sentence_id + " is not assigned to " + r.annotator_id + " in " + r.round_id);
    if (st.records.contains({r.sentence_id, r.annotator_id}))
      fail(ErrorKind::DuplicateSubmission, r.annotator_id + " already submitted " + r.sentence_id + " in " + r.round_id);
  }

  void apply_sentence(corpus::Sentence s) {
    sentence_index_[s.sentence_id] = pool_.size();
    pool_.push_back(std::move(s));
  }

  void apply_round(const Round& r) {
    RoundState st;
    st.round = r;
    for (const auto& member : r.panel) st.queues[member];
    for (const auto& a : r.assignments) {
      if (!sentence_index_.contains(a.sentence_id)) fail(ErrorKind::MalformedRecord, "round references unknown sentence " + a.sentence_id);
      for (const auto& member : a.annotators) {
        st.queues[member].push_back(a.sentence_id);
        st.assigned[a.sentence_id].insert(member);
      }
    }
    rounds_[r.round_id] = std::move(st);
  }

  static void apply_annotation(RoundState& st, const corpus::AnnotationRecord& r) {
    st.records[{r.sentence_id, r.annotator_id}] = r;
    auto& q = st.queues[r.annotator_id];
    q.erase(std::remove(q.begin(), q.end(), r.sentence_id), q.end());
  }

  void apply_revocation(RoundState& st, const Revocation& rev) {
    st.records.erase({rev.sentence_id, rev.annotator_id});
    // Back into the queue at its original position relative to the other pending sentences.
    auto& q = st.queues[rev.annotator_id];
    std::map<std::string, std::size_t> order;
    for (std::size_t i = 0; i < st.round.assignments.size(); ++i) order[st.round.assignments[i].sentence_id] = i;
    q.push_back(rev.sentence_id);
    std::stable_sort(q.begin(), q.end(), [&](const auto& a, const auto& b) { return order.at(a) < order.at(b); });
    st.revocations.push_back(rev);
  }

  void append(const Json& event) {
    if (!log_path_) return;
    log_ << event.dump() << '\n';
    log_.flush();
    if (!log_) fail(ErrorKind::Io, "cannot append to store log " + log_path_->string());
  }

  void replay() {
    std::ifstream in(*log_path_, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot read store log " + log_path_->string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t pos = 0, line_no = 0;
    while (pos < content.size()) {
      const auto end = content.find('\n', pos);
      ++line_no;
      if (end == std::string::npos) {
        // A crash mid-append leaves an unterminated line; that write was never acknowledged.
        spdlog::warn("store log {}: dropping unterminated final line {}", log_path_->string(), line_no);
        std::filesystem::resize_file(*log_path_, pos);
        break;
      }
      const std::string line = content.substr(pos, end - pos);
      pos = end + 1;
      if (line.empty()) continue;
      try {
        apply_event(Json::parse(line));
      } catch (const Json::exception& e) {
        fail(ErrorKind::MalformedRecord, log_path_->string() + ":" + std::to_string(line_no) + ": " + e.what());
      } catch (const std::invalid_argument& e) {
        fail(ErrorKind::MalformedRecord, log_path_->string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  void apply_event(const Json& j) {
    const auto kind = j.at("event").get<std::string>();
    if (kind == "sentences") {
      for (const auto& s : j.at("sentences")) apply_sentence(corpus::sentence_from_json(s));
    } else if (kind == "round") {
      Round r;
      r.round_id = j.at("round_id").get<std::string>();
      r.spec = spec_from_json(j.at("spec"));
      r.panel = j.at("panel").get<std::vector<std::string>>();
      for (const auto& a : j.at("assignments"))
        r.assignments.push_back({a.at("sentence_id").get<std::string>(), a.at("annotators").get<std::vector<std::string>>()});
      apply_round(r);
    } else if (kind == "annotation") {
      const auto rec = corpus::annotation_from_json(j);
      apply_annotation(state(rec.round_id), rec);
    } else if (kind == "revocation") {
      Revocation rev{j.at("round_id").get<std::string>(), j.at("sentence_id").get<std::string>(),
                     j.at("annotator_id").get<std::string>(), j.value("reason", std::string())};
      apply_revocation(state(rev.round_id), rev);
    } else if (kind == "close") {
      state(j.at("round_id").get<std::string>()).round.status = RoundStatus::Closed;
    } else {
      fail(ErrorKind::MalformedRecord, "unknown store event '" + kind + "'");
    }
  }

  mutable std::shared_mutex mu_;
  std::optional<std::filesystem::path> log_path_;
  std::ofstream log_;
  std::vector<corpus::Sentence> pool_;
  std::map<std::string, std::size_t> sentence_index_;
  std::map<std::string, RoundState> rounds_;
};

}  // namespace reviewlens::service
