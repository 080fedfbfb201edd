#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "reviewlens/category.hpp"
#include "reviewlens/classify/bundle.hpp"
#include "reviewlens/classify/context.hpp"
#include "reviewlens/classify/train.hpp"
#include "reviewlens/corpus/split.hpp"
#include "reviewlens/corpus/types.hpp"
#include "reviewlens/error.hpp"
#include "reviewlens/metrics.hpp"
#include "reviewlens/rng.hpp"
#include "reviewlens/util/sha256.hpp"

namespace reviewlens::experiments {

using classify::Approach;
using classify::EncoderModel;
using classify::FineTunedModel;
using classify::LabeledText;
using classify::TrainConfig;
using metrics::CategoryReport;
using metrics::EvalReport;
using Json = nlohmann::ordered_json;

struct RunOptions {
  std::vector<Category> categories;  // empty: all twelve
  int threads = 1;                   // <= 0: hardware concurrency
};

inline std::vector<Category> resolve_categories(const std::vector<Category>& cats) {
  if (cats.empty()) return {kAllCategories.begin(), kAllCategories.end()};
  return cats;
}

/// Gold labels joined with their model input (the sentence, or its context window).
inline std::vector<LabeledText> make_dataset(const std::vector<corpus::GoldLabel>& golds,
                                             const std::vector<corpus::Sentence>& sentences, int context_window = 0) {
  const auto inputs = classify::context_inputs(sentences, context_window);
  std::vector<LabeledText> out;
  out.reserve(golds.size());
  for (const auto& g : golds) {
    const auto it = inputs.find(g.sentence_id);
    if (it == inputs.end()) fail(ErrorKind::InvalidArgument, "gold label for unknown sentence " + g.sentence_id);
    out.push_back({g.sentence_id, it->second, g.labels});
  }
  return out;
}

namespace detail {

/// Runs job(0..n-1) on a bounded pool. Errors are rethrown after all jobs finish, lowest index
/// first, so the reported failure does not depend on scheduling.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& job) {
  if (n == 0) return;
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads) : std::max(1U, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<std::string> ids_of(std::span<const LabeledText> data) {
  std::vector<std::string> ids;
  ids.reserve(data.size());
  for (const auto& d : data) ids.push_back(d.id);
  return ids;
}

/// Items whose id is (keep = true) or is not (keep = false) in `ids`, in data order.
inline std::vector<LabeledText> select(std::span<const LabeledText> data, std::span<const std::string> ids, bool keep) {
  const std::set<std::string> wanted(ids.begin(), ids.end());
  std::vector<LabeledText> out;
  for (const auto& d : data)
    if (wanted.contains(d.id) == keep) out.push_back(d);
  return out;
}

inline std::vector<CategoryReport> evaluate_model(const FineTunedModel& model, std::span<const LabeledText> test,
                                                  std::span<const Category> cats) {
  const auto covered = model.categories();
  std::vector<std::size_t> column;
  for (Category c : cats) {
    const auto it = std::find(covered.begin(), covered.end(), c);
    if (it == covered.end()) fail(ErrorKind::InvalidArgument, "model does not cover " + std::string(codebook_name(c)));
    column.push_back(static_cast<std::size_t>(it - covered.begin()));
  }
  std::vector<std::vector<int>> y(cats.size()), p(cats.size());
  for (const auto& item : test) {
    const auto labels = model.predict_labels(item.text);
    for (std::size_t k = 0; k < cats.size(); ++k) {
      y[k].push_back(item.labels[cats[k]]);
      p[k].push_back(labels[column[k]]);
    }
  }
  std::vector<CategoryReport> out;
  for (std::size_t k = 0; k < cats.size(); ++k) out.push_back({cats[k], metrics::evaluate(y[k], p[k])});
  return out;
}

}  // namespace detail

/// Trains on `train` and scores `test`. The binary approach fits one model per category.
inline std::vector<CategoryReport> train_and_evaluate(Approach approach, std::span<const LabeledText> train,
                                                      std::span<const LabeledText> test, const EncoderModel& encoder,
                                                      const TrainConfig& config, const RunOptions& opt = {}) {
  const auto cats = resolve_categories(opt.categories);
  if (approach != Approach::Binary) {
    const auto model = classify::train(approach, train, std::nullopt, encoder, config);
    return detail::evaluate_model(model, test, cats);
  }
  std::vector<CategoryReport> out(cats.size());
  detail::parallel_for(cats.size(), opt.threads, [&](std::size_t i) {
    const auto model = classify::train_binary(train, cats[i], encoder, config);
    out[i] = detail::evaluate_model(model, test, std::span(&cats[i], 1)).front();
  });
  return out;
}

// ---- cross-validation

struct CategoryCV {
  Category category{};
  std::vector<EvalReport> folds;
  EvalReport mean;  // field-wise mean over folds
  double mean_f1 = 0, min_f1 = 0, max_f1 = 0;

  bool operator==(const CategoryCV&) const = default;
};

struct CVReport {
  Approach approach = Approach::Binary;
  int k = 5;
  std::uint64_t seed = kDefaultSeed;
  std::vector<CategoryCV> categories;
  std::vector<corpus::Split> splits;  // one per category for binary, otherwise a single shared split

  double average_f1() const {
    double total = 0;
    for (const auto& c : categories) total += c.mean_f1;
    return categories.empty() ? 0.0 : total / static_cast<double>(categories.size());
  }
  const CategoryCV& at(Category c) const {
    for (const auto& cc : categories)
      if (cc.category == c) return cc;
    fail(ErrorKind::InvalidArgument, "category not in report: " + std::string(codebook_name(c)));
  }

  bool operator==(const CVReport&) const = default;
};

inline EvalReport mean_report(std::span<const EvalReport> reports) {
  if (reports.empty()) fail(ErrorKind::InvalidArgument, "no reports to average");
  EvalReport m;
  double* fields[] = {&m.share_label,      &m.accuracy,        &m.balanced_accuracy, &m.f1_macro,
                      &m.f1_micro,         &m.f1_label1,       &m.f1_label0,         &m.precision_macro,
                      &m.precision_micro,  &m.precision_label1, &m.precision_label0, &m.recall_macro,
                      &m.recall_micro,     &m.recall_label1,   &m.recall_label0};
  for (const auto& r : reports) {
    const auto v = metrics::report_values(r);
    for (std::size_t i = 0; i < v.size(); ++i) *fields[i] += v[i];
    m.n += r.n;
  }
  for (double* f : fields) *f /= static_cast<double>(reports.size());
  return m;
}

inline CategoryCV summarize(Category c, std::vector<EvalReport> folds) {
  CategoryCV out;
  out.category = c;
  out.mean = mean_report(folds);
  out.mean_f1 = out.mean.f1_macro;
  out.min_f1 = out.max_f1 = folds.front().f1_macro;
  for (const auto& r : folds) {
    out.min_f1 = std::min(out.min_f1, r.f1_macro);
    out.max_f1 = std::max(out.max_f1, r.f1_macro);
  }
  // Summation order can push the mean a rounding step outside [min, max].
  out.mean_f1 = std::clamp(out.mean_f1, out.min_f1, out.max_f1);
  out.folds = std::move(folds);
  return out;
}

/// Fold assignment used by run_cv: stratified on `category` for binary models, unstratified
/// otherwise (one split must serve all categories).
inline corpus::Split cv_split(Approach approach, std::span<const LabeledText> data, Category category, int k,
                              std::uint64_t seed) {
  const auto ids = detail::ids_of(data);
  if (approach != Approach::Binary) return corpus::kfold(ids, k, seed);
  std::vector<int> labels;
  for (const auto& d : data) labels.push_back(d.labels[category]);
  return corpus::stratified_kfold(ids, labels, category, k, seed);
}

/// Each fold is held out once; the model trains on the other k-1. Split and training share config.seed.
inline CVReport run_cv(Approach approach, std::span<const LabeledText> data, const EncoderModel& encoder,
                       const TrainConfig& config, int k = 5, const RunOptions& opt = {}) {
  const auto cats = resolve_categories(opt.categories);
  CVReport report;
  report.approach = approach;
  report.k = k;
  report.seed = config.seed;
  const auto kk = static_cast<std::size_t>(k);

  if (approach == Approach::Binary) {
    for (Category c : cats) report.splits.push_back(cv_split(approach, data, c, k, config.seed));
    std::vector<EvalReport> results(cats.size() * kk);
    detail::parallel_for(results.size(), opt.threads, [&](std::size_t job) {
      const std::size_t ci = job / kk, fold = job % kk;
      const auto& held = report.splits[ci].folds[fold];
      const auto train = detail::select(data, held, false);
      const auto test = detail::select(data, held, true);
      const auto model = classify::train_binary(train, cats[ci], encoder, config);
      results[job] = detail::evaluate_model(model, test, std::span(&cats[ci], 1)).front().report;
    });
    for (std::size_t ci = 0; ci < cats.size(); ++ci)
      report.categories.push_back(summarize(
          cats[ci], {results.begin() + static_cast<long>(ci * kk), results.begin() + static_cast<long>((ci + 1) * kk)}));
    return report;
  }

  report.splits.push_back(cv_split(approach, data, cats.front(), k, config.seed));
  std::vector<std::vector<CategoryReport>> results(kk);
  detail::parallel_for(kk, opt.threads, [&](std::size_t fold) {
    const auto& held = report.splits.front().folds[fold];
    const auto train = detail::select(data, held, false);
    const auto test = detail::select(data, held, true);
    const auto model = classify::train(approach, train, std::nullopt, encoder, config);
    results[fold] = detail::evaluate_model(model, test, cats);
  });
  for (std::size_t ci = 0; ci < cats.size(); ++ci) {
    std::vector<EvalReport> folds;
    for (const auto& r : results) folds.push_back(r[ci].report);
    report.categories.push_back(summarize(cats[ci], std::move(folds)));
  }
  return report;
}

// ---- ablation

struct AblationOptions {
  Approach approach = Approach::Binary;
  std::size_t chunk = 500;
  bool continue_training = false;  // keep fine-tuning one model on each new chunk instead of retraining
  RunOptions run;
};

struct CurvePoint {
  std::size_t train_size = 0;
  std::vector<CategoryReport> reports;
  std::vector<std::string> test_ids;

  bool operator==(const CurvePoint&) const = default;
};

struct LearningCurve {
  Approach approach = Approach::Binary;
  std::size_t chunk = 0;
  bool continued = false;
  std::vector<std::string> train_order;  // the seeded shuffle whose prefixes form each point
  std::vector<CurvePoint> points;

  bool operator==(const LearningCurve&) const = default;
};

/// Cumulative training sizes: multiples of `chunk`, ending at n (the last step may be short).
inline std::vector<std::size_t> ablation_sizes(std::size_t n, std::size_t chunk) {
  if (chunk == 0) fail(ErrorKind::InvalidArgument, "chunk must be positive");
  if (n == 0) fail(ErrorKind::InvalidArgument, "empty training set");
  std::vector<std::size_t> sizes;
  for (std::size_t s = chunk; s < n; s += chunk) sizes.push_back(s);
  sizes.push_back(n);
  return sizes;
}

inline LearningCurve run_ablation(std::span<const LabeledText> train, std::span<const LabeledText> test,
                                  const EncoderModel& encoder, const TrainConfig& config, const AblationOptions& opt = {}) {
  const auto cats = resolve_categories(opt.run.categories);
  const auto sizes = ablation_sizes(train.size(), opt.chunk);
  if (test.empty()) fail(ErrorKind::InvalidArgument, "empty test set");
  if (opt.continue_training && opt.approach == Approach::MultiTask)
    fail(ErrorKind::InvalidArgument, "continued fine-tuning needs an unfrozen encoder (binary or multi-label)");

  std::vector<LabeledText> shuffled(train.begin(), train.end());
  Rng rng(config.seed);
  rng.shuffle(shuffled);

  LearningCurve curve;
  curve.approach = opt.approach;
  curve.chunk = opt.chunk;
  curve.continued = opt.continue_training;
  curve.train_order = detail::ids_of(shuffled);
  const auto test_ids = detail::ids_of(test);
  curve.points.resize(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    curve.points[i].train_size = sizes[i];
    curve.points[i].test_ids = test_ids;
  }
  const std::span<const LabeledText> all(shuffled);

  if (!opt.continue_training) {
    RunOptions inner = opt.run;
    inner.threads = 1;
    detail::parallel_for(sizes.size(), opt.run.threads, [&](std::size_t i) {
      curve.points[i].reports = train_and_evaluate(opt.approach, all.first(sizes[i]), test, encoder, config, inner);
    });
    return curve;
  }

  // One sequence per binary category, or a single sequence for the joint approaches.
  const bool binary = opt.approach == Approach::Binary;
  const std::size_t sequences = binary ? cats.size() : 1;
  std::vector<std::vector<std::vector<CategoryReport>>> results(sequences);
  detail::parallel_for(sequences, opt.run.threads, [&](std::size_t s) {
    const std::vector<Category> scored = binary ? std::vector<Category>{cats[s]} : cats;
    std::optional<FineTunedModel> model;
    std::size_t done = 0;
    for (std::size_t size : sizes) {
      const auto step = all.subspan(done, size - done);
      if (!model) model = classify::train(opt.approach, step, binary ? std::optional(cats[s]) : std::nullopt, encoder, config);
      else classify::continue_training(*model, step, config);
      done = size;
      results[s].push_back(detail::evaluate_model(*model, test, scored));
    }
  });
  for (std::size_t i = 0; i < sizes.size(); ++i)
    for (std::size_t s = 0; s < sequences; ++s)
      for (const auto& r : results[s][i]) curve.points[i].reports.push_back(r);
  return curve;
}

// ---- encoder comparison

struct EncoderComparison {
  std::vector<std::string> encoder_ids;
  std::vector<Category> categories;
  std::vector<std::vector<EvalReport>> reports;  // [encoder][category]
  corpus::Split split;

  double average_f1(std::size_t encoder) const {
    double total = 0;
    for (const auto& r : reports.at(encoder)) total += r.f1_macro;
    return total / static_cast<double>(categories.size());
  }
};

/// Every encoder sees the same stratified holdout split (stratified on `split_category`) and seed.
inline EncoderComparison compare_encoders(std::span<const LabeledText> data, std::span<const EncoderModel> encoders,
                                          const TrainConfig& config, Approach approach = Approach::Binary,
                                          double test_fraction = 0.2, std::optional<Category> split_category = {},
                                          const RunOptions& opt = {}) {
  if (encoders.empty()) fail(ErrorKind::InvalidArgument, "no encoders to compare");
  EncoderComparison out;
  out.categories = resolve_categories(opt.categories);
  const Category strat = split_category.value_or(out.categories.front());
  std::vector<int> labels;
  for (const auto& d : data) labels.push_back(d.labels[strat]);
  out.split = corpus::stratified_holdout(detail::ids_of(data), labels, strat, test_fraction, config.seed);
  const auto train = detail::select(data, out.split.test_ids, false);
  const auto test = detail::select(data, out.split.test_ids, true);
  for (const auto& enc : encoders) {
    out.encoder_ids.push_back(enc.model_id);
    std::vector<EvalReport> row;
    for (const auto& r : train_and_evaluate(approach, train, test, enc, config, opt)) row.push_back(r.report);
    out.reports.push_back(std::move(row));
  }
  return out;
}

inline std::vector<EncoderModel> load_encoders(const std::filesystem::path& models_dir, const std::vector<std::string>& ids) {
  std::vector<EncoderModel> out;
  for (const auto& id : ids) out.push_back(classify::load_encoder(models_dir, id));
  return out;
}

/// Macro-F1 table: one row per category plus an average row, one column per encoder.
inline void write_encoder_table(std::ostream& out, const EncoderComparison& cmp) {
  out << "category";
  for (const auto& id : cmp.encoder_ids) out << ',' << id;
  out << '\n';
  for (std::size_t c = 0; c < cmp.categories.size(); ++c) {
    out << codebook_name(cmp.categories[c]);
    for (const auto& row : cmp.reports) out << ',' << metrics::format_number(row[c].f1_macro);
    out << '\n';
  }
  out << "average";
  for (std::size_t e = 0; e < cmp.encoder_ids.size(); ++e) out << ',' << metrics::format_number(cmp.average_f1(e));
  out << '\n';
}

// ---- majority vs full-agreement training

struct TrainingSetComparison {
  Category category{};
  CategoryCV majority;
  CategoryCV full_agreement;
  std::vector<std::size_t> full_train_sizes;  // per fold
  corpus::Split split;
};

/// Binary k-fold CV twice over the same folds: training folds use every sentence, or only the
/// sentences with unanimous votes on `category`. Validation folds always hold every sentence.
inline TrainingSetComparison compare_training_sets(const std::vector<corpus::GoldLabel>& golds,
                                                   std::span<const LabeledText> data, Category category,
                                                   const EncoderModel& encoder, const TrainConfig& config, int k = 5,
                                                   int threads = 1) {
  if (golds.size() != data.size()) fail(ErrorKind::InvalidArgument, "gold labels and data differ in length");
  std::set<std::string> full;
  long long full_pos = 0, full_neg = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i].sentence_id != data[i].id) fail(ErrorKind::InvalidArgument, "gold labels and data are not aligned");
    if (golds[i].agreement[category] != corpus::Agreement::Full) continue;
    full.insert(golds[i].sentence_id);
    (golds[i].labels[category] ? full_pos : full_neg) += 1;
  }
  if (full_pos == 0 || full_neg == 0)
    fail(ErrorKind::DegenerateStratum,
         "full-agreement subset for " + std::string(codebook_name(category)) + " lacks a class");

  TrainingSetComparison out;
  out.category = category;
  out.split = cv_split(Approach::Binary, data, category, k, config.seed);
  const auto kk = static_cast<std::size_t>(k);
  std::vector<EvalReport> results(2 * kk);
  out.full_train_sizes.assign(kk, 0);
  detail::parallel_for(results.size(), threads, [&](std::size_t job) {
    const std::size_t fold = job % kk;
    const bool full_only = job >= kk;
    const auto& held = out.split.folds[fold];
    auto train = detail::select(data, held, false);
    if (full_only) {
      std::erase_if(train, [&](const LabeledText& t) { return !full.contains(t.id); });
      out.full_train_sizes[fold] = train.size();
    }
    const auto test = detail::select(data, held, true);
    const auto model = classify::train_binary(train, category, encoder, config);
    results[job] = detail::evaluate_model(model, test, std::span(&category, 1)).front().report;
  });
  out.majority = summarize(category, {results.begin(), results.begin() + static_cast<long>(kk)});
  out.full_agreement = summarize(category, {results.begin() + static_cast<long>(kk), results.end()});
  return out;
}

// ---- Rationale with and without context

/// Target-sentence Rationale OR the annotators' context-rationale flag.
inline int combined_rationale(const corpus::GoldLabel& g) {
  if (!g.rationale_context) fail(ErrorKind::InvalidArgument, "sentence " + g.sentence_id + " has no context annotation");
  return g.labels[Category::Rationale] == 1 || *g.rationale_context == 1 ? 1 : 0;
}

struct ContextComparison {
  int window = 1;
  CategoryCV sentence_only;
  CategoryCV with_context;
  corpus::Split split;
};

/// Variant A: the sentence alone with its Rationale label. Variant B: the context window with
/// the combined label. Both run over the same folds, stratified on the sentence-level label.
inline ContextComparison compare_context(const std::vector<corpus::GoldLabel>& golds,
                                         const std::vector<corpus::Sentence>& sentences, const EncoderModel& encoder,
                                         const TrainConfig& config, int k = 5, int window = 1, int threads = 1) {
  if (window < 1) fail(ErrorKind::InvalidArgument, "context window must be at least 1");
  const auto plain = make_dataset(golds, sentences, 0);
  auto context = make_dataset(golds, sentences, window);
  for (std::size_t i = 0; i < golds.size(); ++i) context[i].labels[Category::Rationale] = combined_rationale(golds[i]);

  ContextComparison out;
  out.window = window;
  out.split = cv_split(Approach::Binary, plain, Category::Rationale, k, config.seed);
  const auto kk = static_cast<std::size_t>(k);
  std::vector<EvalReport> results(2 * kk);
  constexpr Category c = Category::Rationale;
  detail::parallel_for(results.size(), threads, [&](std::size_t job) {
    const auto& data = job < kk ? plain : context;
    const auto& held = out.split.folds[job % kk];
    const auto train = detail::select(data, held, false);
    const auto test = detail::select(data, held, true);
    const auto model = classify::train_binary(train, c, encoder, config);
    results[job] = detail::evaluate_model(model, test, std::span(&c, 1)).front().report;
  });
  out.sentence_only = summarize(c, {results.begin(), results.begin() + static_cast<long>(kk)});
  out.with_context = summarize(c, {results.begin() + static_cast<long>(kk), results.end()});
  return out;
}

// ---- run records

struct ResultRow {
  std::string variant;  // approach, encoder id, or comparison arm
  Category category{};
  std::string fold;     // fold index, "mean", or a train size
  EvalReport report;
};

struct RunRecord {
  std::string kind;
  Json manifest;
  std::vector<ResultRow> rows;
  std::vector<std::pair<std::string, std::vector<CategoryReport>>> fold_reports;  // subdirectory -> report.json
};

/// Order-sensitive digest of ids, texts and labels.
inline std::string data_hash(std::span<const LabeledText> data) {
  util::Sha256 h;
  for (const auto& d : data) {
    h.update(d.id).update("\t").update(d.text).update("\t");
    for (int v : d.labels) h.update(v ? "1" : "0");
    h.update("\n");
  }
  return h.hex();
}

inline std::string ids_hash(std::span<const std::string> ids) {
  util::Sha256 h;
  for (const auto& id : ids) h.update(id).update("\n");
  return h.hex();
}

inline Json category_names(std::span<const Category> cats) {
  Json arr = Json::array();
  for (Category c : cats) arr.push_back(std::string(codebook_name(c)));
  return arr;
}

inline Json base_manifest(std::string_view kind, std::span<const LabeledText> data, const TrainConfig& config,
                          std::span<const Category> cats) {
  Json m;
  m["kind"] = kind;
  m["seed"] = config.seed;
  m["config"] = classify::detail::config_to_json(config);
  m["data"] = {{"n", data.size()}, {"sha256", data_hash(data)}};
  m["categories"] = category_names(cats);
  return m;
}

inline Json split_json(const corpus::Split& s) {
  Json folds = Json::array();
  for (const auto& f : s.folds) folds.push_back(ids_hash(f));
  return {{"seed", s.seed}, {"train_sha256", ids_hash(s.train_ids)}, {"test_sha256", ids_hash(s.test_ids)},
          {"fold_sha256", folds}};
}

inline RunRecord record(const CVReport& cv, std::span<const LabeledText> data, const std::string& encoder_id,
                        const TrainConfig& config) {
  RunRecord r;
  r.kind = "cv";
  std::vector<Category> cats;
  for (const auto& c : cv.categories) cats.push_back(c.category);
  r.manifest = base_manifest(r.kind, data, config, cats);
  r.manifest["approach"] = classify::to_string(cv.approach);
  r.manifest["k"] = cv.k;
  r.manifest["encoder"] = encoder_id;
  Json splits = Json::array();
  for (const auto& s : cv.splits) splits.push_back(split_json(s));
  r.manifest["splits"] = splits;
  const auto variant = classify::to_string(cv.approach);
  for (int f = 0; f < cv.k; ++f) {
    std::vector<CategoryReport> fold;
    for (const auto& c : cv.categories) {
      r.rows.push_back({variant, c.category, std::to_string(f), c.folds[static_cast<std::size_t>(f)]});
      fold.push_back({c.category, c.folds[static_cast<std::size_t>(f)]});
    }
    r.fold_reports.emplace_back("fold_" + std::to_string(f), std::move(fold));
  }
  for (const auto& c : cv.categories) r.rows.push_back({variant, c.category, "mean", c.mean});
  return r;
}

inline RunRecord record(const LearningCurve& curve, std::span<const LabeledText> train, std::span<const LabeledText> test,
                        const std::string& encoder_id, const TrainConfig& config) {
  RunRecord r;
  r.kind = "ablation";
  std::vector<Category> cats;
  for (const auto& rep : curve.points.front().reports) cats.push_back(rep.category);
  r.manifest = base_manifest(r.kind, train, config, cats);
  r.manifest["approach"] = classify::to_string(curve.approach);
  r.manifest["chunk"] = curve.chunk;
  r.manifest["continue_training"] = curve.continued;
  r.manifest["encoder"] = encoder_id;
  r.manifest["test"] = {{"n", test.size()}, {"sha256", data_hash(test)}};
  r.manifest["train_order_sha256"] = ids_hash(curve.train_order);
  Json sizes = Json::array();
  for (const auto& p : curve.points) {
    sizes.push_back(p.train_size);
    for (const auto& rep : p.reports)
      r.rows.push_back({classify::to_string(curve.approach), rep.category, std::to_string(p.train_size), rep.report});
    r.fold_reports.emplace_back("size_" + std::to_string(p.train_size), p.reports);
  }
  r.manifest["train_sizes"] = sizes;
  return r;
}

inline RunRecord record(const EncoderComparison& cmp, std::span<const LabeledText> data, const TrainConfig& config,
                        Approach approach) {
  RunRecord r;
  r.kind = "compare-encoders";
  r.manifest = base_manifest(r.kind, data, config, cmp.categories);
  r.manifest["approach"] = classify::to_string(approach);
  r.manifest["encoders"] = cmp.encoder_ids;
  r.manifest["split"] = split_json(cmp.split);
  r.manifest["split"]["stratified_on"] = codebook_name(cmp.split.strat_category);
  for (std::size_t e = 0; e < cmp.encoder_ids.size(); ++e) {
    std::vector<CategoryReport> reports;
    for (std::size_t c = 0; c < cmp.categories.size(); ++c) {
      r.rows.push_back({cmp.encoder_ids[e], cmp.categories[c], "holdout", cmp.reports[e][c]});
      reports.push_back({cmp.categories[c], cmp.reports[e][c]});
    }
    r.fold_reports.emplace_back("encoder_" + std::to_string(e), std::move(reports));
  }
  return r;
}

inline RunRecord record_paired(std::string kind, const CategoryCV& a, const std::string& a_name, const CategoryCV& b,
                               const std::string& b_name, const corpus::Split& split, std::span<const LabeledText> data,
                               const std::string& encoder_id, const TrainConfig& config) {
  RunRecord r;
  r.kind = std::move(kind);
  const std::array<Category, 1> cats{a.category};
  r.manifest = base_manifest(r.kind, data, config, cats);
  r.manifest["k"] = a.folds.size();
  r.manifest["encoder"] = encoder_id;
  r.manifest["split"] = split_json(split);
  for (std::size_t f = 0; f < a.folds.size(); ++f) {
    r.rows.push_back({a_name, a.category, std::to_string(f), a.folds[f]});
    r.rows.push_back({b_name, b.category, std::to_string(f), b.folds[f]});
    r.fold_reports.emplace_back("fold_" + std::to_string(f) + "_" + a_name, std::vector<CategoryReport>{{a.category, a.folds[f]}});
    r.fold_reports.emplace_back("fold_" + std::to_string(f) + "_" + b_name, std::vector<CategoryReport>{{b.category, b.folds[f]}});
  }
  r.rows.push_back({a_name, a.category, "mean", a.mean});
  r.rows.push_back({b_name, b.category, "mean", b.mean});
  return r;
}

inline RunRecord record(const TrainingSetComparison& cmp, std::span<const LabeledText> data,
                        const std::string& encoder_id, const TrainConfig& config) {
  auto r = record_paired("compare-agreement", cmp.majority, "majority", cmp.full_agreement, "full_agreement", cmp.split,
                         data, encoder_id, config);
  r.manifest["full_train_sizes"] = cmp.full_train_sizes;
  return r;
}

inline RunRecord record(const ContextComparison& cmp, std::span<const LabeledText> data, const std::string& encoder_id,
                        const TrainConfig& config) {
  auto r = record_paired("compare-context", cmp.sentence_only, "sentence_only", cmp.with_context, "with_context",
                         cmp.split, data, encoder_id, config);
  r.manifest["window"] = cmp.window;
  return r;
}

inline void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << "variant,category,fold,n";
  for (std::size_t i = 1; i < metrics::kReportColumns.size(); ++i) out << ',' << metrics::kReportColumns[i];
  out << '\n';
  for (const auto& row : rows) {
    out << row.variant << ',' << codebook_name(row.category) << ',' << row.fold << ',' << row.report.n;
    for (double v : metrics::report_values(row.report)) out << ',' << metrics::format_number(v);
    out << '\n';
  }
}

/// Deterministic run id: kind plus a prefix of the manifest digest.
inline std::string default_run_id(const RunRecord& r) { return r.kind + "-" + util::sha256_hex(r.manifest.dump()).substr(0, 12); }

/// Writes <root>/<run_id>/{manifest.json, results.csv, <fold>/report.json}. Returns the run directory.
inline std::filesystem::path write_run(const std::filesystem::path& root, const RunRecord& r, std::string run_id = {}) {
  if (run_id.empty()) run_id = default_run_id(r);
  const auto dir = root / run_id;
  std::filesystem::create_directories(dir);
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + p.string());
    return out;
  };
  {
    auto out = open(dir / "manifest.json");
    out << r.manifest.dump(2) << '\n';
  }
  {
    auto out = open(dir / "results.csv");
    write_results_csv(out, r.rows);
  }
  for (const auto& [name, reports] : r.fold_reports) {
    std::filesystem::create_directories(dir / name);
    auto out = open(dir / name / "report.json");
    out << metrics::to_json(reports).dump(2) << '\n';
  }
  return dir;
}

}  // namespace reviewlens::experiments
