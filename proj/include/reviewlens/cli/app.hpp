#pragma once

#include <csignal>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "reviewlens/agreement.hpp"
#include "reviewlens/classify/bundle.hpp"
#include "reviewlens/classify/predict.hpp"
#include "reviewlens/cli/config.hpp"
#include "reviewlens/cli/report.hpp"
#include "reviewlens/corpus/aggregate.hpp"
#include "reviewlens/corpus/io.hpp"
#include "reviewlens/corpus/split.hpp"
#include "reviewlens/corpus/text.hpp"
#include "reviewlens/experiments.hpp"
#include "reviewlens/fewshot.hpp"
#include "reviewlens/keyness.hpp"
#include "reviewlens/prevalence.hpp"
#include "reviewlens/service/api.hpp"
#include "reviewlens/util/sha256.hpp"

namespace reviewlens::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Failures of the environment (I/O, remote services, numerics) versus bad input.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::ClientUnavailable:
    case ErrorKind::OfflineCacheMiss: return kExitRuntime;
    default: return kExitValidation;
  }
}

namespace detail {

// ---- inputs

inline void require_file(const fs::path& p, const std::string& flag) {
  if (p.empty()) fail(ErrorKind::InvalidArgument, flag + " is required");
  if (!fs::exists(p)) fail(ErrorKind::InvalidArgument, flag + ": no such file " + p.string());
}

/// Files hash their bytes; directories hash the sorted (relative path, file digest) list.
inline std::string hash_input(const fs::path& p) {
  if (!fs::is_directory(p)) return util::sha256_file(p);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  util::Sha256 h;
  for (const auto& f : files) h.update(fs::relative(f, p).generic_string()).update("\t").update(util::sha256_file(f)).update("\n");
  return h.hex();
}

inline fs::path normalized(const fs::path& p) {
  auto abs = fs::absolute(p).lexically_normal();
  if (abs.filename().empty()) abs = abs.parent_path();
  return abs;
}

/// A single-file output: `--out x.jsonl` names the file, anything else is a directory.
struct FileOutput {
  fs::path file;
  fs::path manifest;
};

inline FileOutput file_output(const fs::path& out, const std::string& default_name) {
  if (out.empty()) fail(ErrorKind::InvalidArgument, "--out is required");
  if (out.has_extension()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    return {out, fs::path(out.string() + ".manifest.json")};
  }
  fs::create_directories(out);
  return {out / default_name, out / "manifest.json"};
}

inline fs::path dir_output(const fs::path& out) {
  if (out.empty()) fail(ErrorKind::InvalidArgument, "--out is required");
  fs::create_directories(out);
  return out;
}

inline std::ofstream create(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + p.string());
  return out;
}

inline void write_json(const fs::path& p, const Json& j) {
  auto out = create(p);
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorKind::Io, "write failed for " + p.string());
}

// ---- split files

inline Json split_to_json(const corpus::Split& s, double test_fraction) {
  return Json{{"seed", s.seed},
              {"stratified_on", std::string(codebook_name(s.strat_category))},
              {"test_fraction", test_fraction},
              {"train_ids", s.train_ids},
              {"test_ids", s.test_ids},
              {"folds", s.folds}};
}

inline corpus::Split read_split(const fs::path& p) {
  std::ifstream in(p);
  if (!in) fail(ErrorKind::InvalidArgument, "cannot open split " + p.string());
  const auto j = Json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorKind::MalformedRecord, p.string() + " is not a split file");
  corpus::Split s;
  try {
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    s.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    s.folds = j.value("folds", std::vector<std::vector<std::string>>{});
    const auto c = parse_category(j.at("stratified_on").get<std::string>());
    if (!c) fail(ErrorKind::MalformedRecord, p.string() + ": unknown stratification category");
    s.strat_category = *c;
  } catch (const Json::exception& e) {
    fail(ErrorKind::MalformedRecord, p.string() + ": " + e.what());
  }
  return s;
}

// ---- models

/// A bundle directory, or a `train` output directory whose manifest lists its bundles.
inline std::vector<fs::path> model_dirs(const fs::path& p) {
  if (fs::exists(p / "head.json")) return {p};
  if (fs::exists(p / "manifest.json")) {
    std::ifstream in(p / "manifest.json");
    const auto j = Json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.contains("models")) {
      std::vector<fs::path> out;
      for (const auto& name : j.at("models")) out.push_back(p / name.get<std::string>());
      return out;
    }
  }
  fail(ErrorKind::ModelNotFound, "no model bundle at " + p.string());
}

inline std::vector<fs::path> all_model_dirs(const std::vector<std::string>& args) {
  if (args.empty()) fail(ErrorKind::InvalidArgument, "--model is required");
  std::vector<fs::path> out;
  for (const auto& a : args) {
    auto dirs = model_dirs(a);
    out.insert(out.end(), dirs.begin(), dirs.end());
  }
  return out;
}

}  // namespace detail

/// Parsed state shared by every subcommand.
struct Context {
  RunConfig cfg;
  fs::path config_file;
  std::vector<std::string> command;  // argv without the program name
  std::vector<std::function<void()>> overrides;
  std::ostream* out = &std::cout;

  /// Flag bound to a config field; applied after the config file so flags win.
  template <typename T>
  CLI::Option* bind(CLI::App* app, const std::string& name, T& target, const std::string& help) {
    auto holder = std::make_shared<T>(target);
    auto* opt = app->add_option(name, *holder, help);
    overrides.push_back([opt, holder, &target] {
      if (opt->count() > 0) target = *holder;
    });
    return opt;
  }

  void finalize() {
    if (!config_file.empty()) cfg = load_config(config_file, cfg);
    for (const auto& apply : overrides) apply();
    if (cfg.threads <= 0) cfg.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  }

  classify::EncoderModel encoder() const {
    if (cfg.encoders.size() != 1)
      fail(ErrorKind::InvalidArgument, "exactly one encoder id is required (--encoder or [encoder].ids)");
    return classify::load_encoder(cfg.models_dir, cfg.encoders.front());
  }

  std::vector<Category> categories() const { return resolve_categories(cfg); }

  std::vector<corpus::GoldLabel> golds() const {
    detail::require_file(cfg.gold, "--gold");
    return corpus::ingest_gold(cfg.gold);
  }

  std::vector<corpus::Sentence> sentences() const {
    detail::require_file(cfg.sentences, "--sentences");
    return corpus::ingest_sentences(cfg.sentences);
  }

  experiments::RunOptions run_options() const { return {categories(), cfg.threads}; }

  /// Manifest common to every subcommand: command line, seed, resolved config, input digests.
  Json manifest(const std::string& kind, const std::vector<fs::path>& inputs) const {
    Json j;
    j["kind"] = kind;
    j["command"] = command;
    j["seed"] = cfg.train.seed;
    j["config"] = to_json(cfg);
    Json in = Json::array();
    for (const auto& p : inputs) in.push_back({{"path", p.generic_string()}, {"sha256", detail::hash_input(p)}});
    j["inputs"] = in;
    return j;
  }

  /// Writes an experiment run directly into --out, with the CLI manifest merged in.
  fs::path write_run(experiments::RunRecord rec, const std::vector<fs::path>& inputs) const {
    const auto target = detail::normalized(detail::dir_output(cfg.out));
    Json m = manifest(rec.kind, inputs);
    for (auto& [k, v] : rec.manifest.items())
      if (!m.contains(k)) m[k] = v;
    m["experiment"] = rec.manifest;
    rec.manifest = std::move(m);
    return experiments::write_run(target.parent_path(), rec, target.filename().string());
  }
};

namespace commands {

using Handler = std::function<void(Context&)>;

inline void common(Context& ctx, CLI::App* sub) {
  sub->add_option("--config", ctx.config_file, "TOML run config; flags override its values");
  ctx.bind(sub, "--seed", ctx.cfg.train.seed, "Random seed (default 42)");
  ctx.bind(sub, "--out", ctx.cfg.out, "Output file or directory");
  ctx.bind(sub, "--threads", ctx.cfg.threads, "Worker threads (0: all cores)");
}

inline void data_flags(Context& ctx, CLI::App* sub) {
  ctx.bind(sub, "--gold", ctx.cfg.gold, "gold.jsonl");
  ctx.bind(sub, "--sentences", ctx.cfg.sentences, "sentences.jsonl");
  ctx.bind(sub, "--context-window", ctx.cfg.context_window, "Neighbouring sentences added to each input");
}

inline void model_flags(Context& ctx, CLI::App* sub) {
  ctx.bind(sub, "--models-dir", ctx.cfg.models_dir, "Directory holding pre-trained encoders");
  ctx.bind(sub, "--encoder,--encoders", ctx.cfg.encoders, "Encoder id(s) under --models-dir")->delimiter(',');
  ctx.bind(sub, "--categories", ctx.cfg.categories, "Codebook category names (default: all)")->delimiter(',');
  ctx.bind(sub, "--learning-rate", ctx.cfg.train.learning_rate, "AdamW learning rate");
  ctx.bind(sub, "--epochs", ctx.cfg.train.epochs, "Training epochs");
  ctx.bind(sub, "--batch-size", ctx.cfg.train.batch_size, "Training batch size");
  ctx.bind(sub, "--threshold", ctx.cfg.train.threshold, "Decision threshold on probabilities");
}

inline classify::Approach approach_of(const std::string& s) {
  const auto a = classify::parse_approach(s);
  if (!a) fail(ErrorKind::InvalidArgument, "unknown approach '" + s + "' (binary, multilabel, multitask)");
  return *a;
}

inline Category category_of(const std::string& s) {
  const auto c = parse_category(s);
  if (!c) fail(ErrorKind::InvalidArgument, "unknown category '" + s + "'");
  return *c;
}

// ---- ingest / aggregate / split

inline Handler ingest(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("ingest", "Normalize and segment raw reviews into sentences.jsonl");
  common(ctx, sub);
  auto input = std::make_shared<std::string>();
  sub->add_option("--input", *input, "Reviews JSONL: review_id, text_box, text, research_domain[, language]")->required();
  return [input](Context& c) {
    detail::require_file(*input, "--input");
    std::vector<corpus::Sentence> out;
    std::map<std::string, int> next_position;
    corpus::read_jsonl(*input, [&](const Json& j, std::size_t) {
      const auto review = corpus::detail::string_field(j, "review_id");
      const auto box = corpus::parse_text_box(corpus::detail::string_field(j, "text_box"));
      if (!box) throw std::invalid_argument("unknown text_box");
      const auto domain = corpus::parse_research_domain(corpus::detail::string_field(j, "research_domain"));
      if (!domain) throw std::invalid_argument("unknown research_domain");
      const auto language = j.contains("language") ? corpus::detail::string_field(j, "language") : std::string("en");
      // Boxes of one review are numbered in sequence, in input order.
      auto& pos = next_position[review];
      auto seg = corpus::segment_review(corpus::normalize_text(corpus::detail::string_field(j, "text")), review, *box, pos,
                                        *domain, language);
      pos += static_cast<int>(seg.size());
      for (auto& s : seg) out.push_back(std::move(s));
    });
    const auto target = detail::file_output(c.cfg.out, "sentences.jsonl");
    corpus::write_jsonl(target.file, out);
    auto m = c.manifest("ingest", {fs::path(*input)});
    m["outputs"] = {{{"path", target.file.generic_string()}, {"records", out.size()}}};
    detail::write_json(target.manifest, m);
    spdlog::info("{} sentences -> {}", out.size(), target.file.string());
  };
}

inline Handler aggregate(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("aggregate", "Majority-vote annotations into gold labels");
  common(ctx, sub);
  ctx.bind(sub, "--annotations", ctx.cfg.annotations, "annotations.jsonl")->required();
  auto quorum = std::make_shared<int>(corpus::kDefaultQuorum);
  auto only_full = std::make_shared<std::string>();
  auto panel = std::make_shared<int>(agreement::kDefaultPanelSize);
  sub->add_option("--quorum", *quorum, "Votes needed for label 1")->capture_default_str();
  sub->add_option("--full-agreement", *only_full, "Keep only sentences unanimous on this category");
  sub->add_option("--panel-size", *panel, "Annotators per sentence for agreement statistics")->capture_default_str();
  return [quorum, only_full, panel](Context& c) {
    detail::require_file(c.cfg.annotations, "--annotations");
    const auto records = corpus::ingest_annotations(c.cfg.annotations);
    auto golds = corpus::aggregate_majority(records, *quorum);
    if (!only_full->empty()) golds = corpus::filter_full_agreement(golds, category_of(*only_full));
    const auto target = detail::file_output(c.cfg.out, "gold.jsonl");
    corpus::write_jsonl(target.file, golds);
    auto m = c.manifest("aggregate", {c.cfg.annotations});
    m["quorum"] = *quorum;
    Json outputs = Json::array({{{"path", target.file.generic_string()}, {"records", golds.size()}}});
    if (!c.cfg.out.has_extension()) {
      try {
        const auto stats = agreement::agreement_stats(records, *panel);
        detail::write_json(c.cfg.out / "agreement.json", agreement::to_json(stats));
        auto csv = detail::create(c.cfg.out / "agreement.csv");
        agreement::write_agreement_csv(csv, stats);
        outputs.push_back({{"path", (c.cfg.out / "agreement.json").generic_string()}});
        outputs.push_back({{"path", (c.cfg.out / "agreement.csv").generic_string()}});
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::InsufficientAnnotators) throw;
        spdlog::warn("agreement statistics skipped: {}", e.what());
      }
    }
    m["outputs"] = outputs;
    detail::write_json(target.manifest, m);
    spdlog::info("{} gold labels -> {}", golds.size(), target.file.string());
  };
}

inline Handler split(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("split", "Stratified holdout (and optional k folds of the train part)");
  common(ctx, sub);
  ctx.bind(sub, "--gold", ctx.cfg.gold, "gold.jsonl")->required();
  auto category = std::make_shared<std::string>();
  auto fraction = std::make_shared<double>(0.2);
  auto k = std::make_shared<int>(0);
  sub->add_option("--category", *category, "Category to stratify on")->required();
  sub->add_option("--test-fraction", *fraction, "Share of sentences held out")->capture_default_str();
  sub->add_option("--k", *k, "Also cut the train part into k stratified folds");
  return [category, fraction, k](Context& c) {
    const auto golds = c.golds();
    const auto cat = category_of(*category);
    auto s = corpus::stratified_holdout(golds, cat, *fraction, c.cfg.train.seed);
    if (*k > 0) {
      std::vector<std::string> ids;
      std::vector<int> labels;
      const std::set<std::string> train(s.train_ids.begin(), s.train_ids.end());
      for (const auto& g : golds)
        if (train.count(g.sentence_id)) {
          ids.push_back(g.sentence_id);
          labels.push_back(g.labels[cat]);
        }
      s.folds = corpus::stratified_kfold(ids, labels, cat, *k, c.cfg.train.seed).folds;
    }
    const auto target = detail::file_output(c.cfg.out, "split.json");
    detail::write_json(target.file, detail::split_to_json(s, *fraction));
    auto m = c.manifest("split", {c.cfg.gold});
    m["outputs"] = {{{"path", target.file.generic_string()}, {"train", s.train_ids.size()}, {"test", s.test_ids.size()}}};
    detail::write_json(target.manifest, m);
  };
}

// ---- training and evaluation

inline std::vector<classify::LabeledText> subset(std::vector<classify::LabeledText> data, const fs::path& split_path,
                                                   bool test_part) {
  if (split_path.empty()) return data;
  const auto s = detail::read_split(split_path);
  const auto& ids = test_part ? s.test_ids : s.train_ids;
  return experiments::detail::select(data, ids, true);
}

inline Handler train(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("train", "Fine-tune classifier(s) and save model bundles");
  common(ctx, sub);
  data_flags(ctx, sub);
  model_flags(ctx, sub);
  ctx.bind(sub, "--split", ctx.cfg.split, "split.json; trains on its train_ids");
  auto approach = std::make_shared<std::string>("binary");
  auto category = std::make_shared<std::string>();
  sub->add_option("--approach", *approach, "binary, multilabel or multitask")->capture_default_str();
  sub->add_option("--category", *category, "Binary: train this category only");
  return [approach, category](Context& c) {
    const auto a = approach_of(*approach);
    auto data = subset(experiments::make_dataset(c.golds(), c.sentences(), c.cfg.context_window), c.cfg.split, false);
    const auto encoder = c.encoder();
    const auto out = detail::dir_output(c.cfg.out);
    std::vector<std::optional<Category>> jobs;
    if (a != classify::Approach::Binary) {
      jobs.push_back(std::nullopt);
    } else if (!category->empty()) {
      jobs.push_back(category_of(*category));
    } else {
      for (Category cat : c.categories()) jobs.push_back(cat);
    }
    std::vector<std::string> names(jobs.size());
    std::vector<std::vector<double>> losses(jobs.size());
    experiments::detail::parallel_for(jobs.size(), c.cfg.threads, [&](std::size_t i) {
      const auto model = classify::train(a, data, jobs[i], encoder, c.cfg.train);
      names[i] = jobs[i] ? std::string(codebook_name(*jobs[i])) : classify::to_string(a);
      classify::save_model(model, out / names[i]);
      losses[i] = model.epoch_losses;
    });
    std::vector<fs::path> inputs{c.cfg.gold, c.cfg.sentences, c.cfg.models_dir / c.cfg.encoders.front()};
    if (!c.cfg.split.empty()) inputs.push_back(c.cfg.split);
    auto m = c.manifest("train", inputs);
    m["approach"] = classify::to_string(a);
    m["train_size"] = data.size();
    m["models"] = names;
    Json l;
    for (std::size_t i = 0; i < names.size(); ++i) l[names[i]] = losses[i];
    m["epoch_losses"] = l;
    detail::write_json(out / "manifest.json", m);
  };
}

inline std::vector<metrics::CategoryReport> evaluate_models(const std::vector<classify::FineTunedModel>& models,
                                                            std::span<const classify::LabeledText> test,
                                                            const std::vector<Category>& wanted, int threads) {
  // Each requested category is scored by the first model that covers it.
  std::vector<std::pair<std::size_t, Category>> jobs;
  for (Category cat : wanted) {
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto covered = models[m].categories();
      if (std::find(covered.begin(), covered.end(), cat) != covered.end()) {
        jobs.emplace_back(m, cat);
        break;
      }
    }
  }
  if (jobs.empty()) fail(ErrorKind::InvalidArgument, "the models cover none of the requested categories");
  std::vector<metrics::CategoryReport> out(jobs.size());
  experiments::detail::parallel_for(jobs.size(), threads, [&](std::size_t i) {
    out[i] = experiments::detail::evaluate_model(models[jobs[i].first], test, std::span(&jobs[i].second, 1)).front();
  });
  return out;
}

inline std::vector<classify::FineTunedModel> load_models(const std::vector<fs::path>& dirs) {
  std::vector<classify::FineTunedModel> models;
  for (const auto& d : dirs) models.push_back(classify::load_model(d));
  return models;
}

inline Handler evaluate(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("evaluate", "Score saved models against gold labels");
  common(ctx, sub);
  data_flags(ctx, sub);
  ctx.bind(sub, "--split", ctx.cfg.split, "split.json; evaluates on its test_ids");
  ctx.bind(sub, "--categories", ctx.cfg.categories, "Codebook category names (default: all covered)")->delimiter(',');
  auto model_args = std::make_shared<std::vector<std::string>>();
  sub->add_option("--model", *model_args, "Model bundle or train output directory (repeatable)")->required();
  return [model_args](Context& c) {
    const auto dirs = detail::all_model_dirs(*model_args);
    const auto models = load_models(dirs);
    const auto test = subset(experiments::make_dataset(c.golds(), c.sentences(), c.cfg.context_window), c.cfg.split, true);
    const auto reports = evaluate_models(models, test, c.categories(), c.cfg.threads);
    const auto out = detail::dir_output(c.cfg.out);
    {
      auto csv = detail::create(out / "report.csv");
      metrics::write_report_csv(csv, reports);
    }
    detail::write_json(out / "report.json", metrics::to_json(reports));
    std::vector<fs::path> inputs{c.cfg.gold, c.cfg.sentences};
    inputs.insert(inputs.end(), dirs.begin(), dirs.end());
    if (!c.cfg.split.empty()) inputs.push_back(c.cfg.split);
    auto m = c.manifest("evaluate", inputs);
    m["test_size"] = test.size();
    detail::write_json(out / "manifest.json", m);
  };
}

// ---- experiments

inline std::vector<fs::path> experiment_inputs(const Context& c) {
  std::vector<fs::path> inputs{c.cfg.gold, c.cfg.sentences};
  for (const auto& id : c.cfg.encoders) inputs.push_back(c.cfg.models_dir / id);
  if (!c.cfg.split.empty()) inputs.push_back(c.cfg.split);
  return inputs;
}

inline void run_compare_agreement(Context& c, Category cat, int k) {
  const auto golds = c.golds();
  const auto data = experiments::make_dataset(golds, c.sentences(), c.cfg.context_window);
  const auto encoder = c.encoder();
  const auto cmp = experiments::compare_training_sets(golds, data, cat, encoder, c.cfg.train, k, c.cfg.threads);
  c.write_run(experiments::record(cmp, data, encoder.model_id, c.cfg.train), experiment_inputs(c));
}

inline void run_compare_context(Context& c, int k, int window) {
  const auto golds = c.golds();
  const auto sentences = c.sentences();
  const auto data = experiments::make_dataset(golds, sentences, 0);
  const auto encoder = c.encoder();
  const auto cmp = experiments::compare_context(golds, sentences, encoder, c.cfg.train, k, window, c.cfg.threads);
  c.write_run(experiments::record(cmp, data, encoder.model_id, c.cfg.train), experiment_inputs(c));
}

inline Handler cv(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("cv", "k-fold cross-validation");
  common(ctx, sub);
  data_flags(ctx, sub);
  model_flags(ctx, sub);
  auto approach = std::make_shared<std::string>("binary");
  auto k = std::make_shared<int>(5);
  auto full = std::make_shared<bool>(false);
  auto context = std::make_shared<bool>(false);
  auto category = std::make_shared<std::string>();
  auto window = std::make_shared<int>(1);
  sub->add_option("--approach", *approach, "binary, multilabel or multitask")->capture_default_str();
  sub->add_option("--k", *k, "Folds")->capture_default_str();
  sub->add_flag("--full-agreement", *full, "Compare majority vs full-agreement training sets (needs --category)");
  sub->add_flag("--context", *context, "Compare Rationale with and without neighbouring sentences");
  sub->add_option("--category", *category, "Category for --full-agreement");
  sub->add_option("--window", *window, "Context window for --context")->capture_default_str();
  return [=](Context& c) {
    if (*full && *context) fail(ErrorKind::InvalidArgument, "--full-agreement and --context are exclusive");
    if (*full) {
      if (category->empty()) fail(ErrorKind::InvalidArgument, "--full-agreement needs --category");
      return run_compare_agreement(c, category_of(*category), *k);
    }
    if (*context) return run_compare_context(c, *k, *window);
    const auto a = approach_of(*approach);
    const auto data = experiments::make_dataset(c.golds(), c.sentences(), c.cfg.context_window);
    const auto encoder = c.encoder();
    const auto report = experiments::run_cv(a, data, encoder, c.cfg.train, *k, c.run_options());
    c.write_run(experiments::record(report, data, encoder.model_id, c.cfg.train), experiment_inputs(c));
    for (const auto& cat : report.categories)
      spdlog::info("{}: F1 {:.3f} [{:.3f}, {:.3f}]", codebook_name(cat.category), cat.mean_f1, cat.min_f1, cat.max_f1);
  };
}

inline Handler compare_agreement(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("compare-agreement", "Majority-vote vs full-agreement training sets");
  common(ctx, sub);
  data_flags(ctx, sub);
  model_flags(ctx, sub);
  auto category = std::make_shared<std::string>();
  auto k = std::make_shared<int>(5);
  sub->add_option("--category", *category, "Category to compare")->required();
  sub->add_option("--k", *k, "Folds")->capture_default_str();
  return [=](Context& c) { run_compare_agreement(c, category_of(*category), *k); };
}

inline Handler compare_context(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("compare-context", "Rationale with and without neighbouring sentences");
  common(ctx, sub);
  data_flags(ctx, sub);
  model_flags(ctx, sub);
  auto k = std::make_shared<int>(5);
  auto window = std::make_shared<int>(1);
  sub->add_option("--k", *k, "Folds")->capture_default_str();
  sub->add_option("--window", *window, "Sentences on each side")->capture_default_str();
  return [=](Context& c) { run_compare_context(c, *k, *window); };
}

/// Holdout for ablation and encoder comparison: the split file's, or a fresh stratified one.
inline std::pair<std::vector<classify::LabeledText>, std::vector<classify::LabeledText>> holdout(
    const Context& c, const std::vector<classify::LabeledText>& data, Category strat, double fraction) {
  corpus::Split s;
  if (!c.cfg.split.empty()) {
    s = detail::read_split(c.cfg.split);
  } else {
    const auto ids = experiments::detail::ids_of(data);
    std::vector<int> labels;
    for (const auto& d : data) labels.push_back(d.labels[strat]);
    s = corpus::stratified_holdout(ids, labels, strat, fraction, c.cfg.train.seed);
  }
  return {experiments::detail::select(data, s.train_ids, true), experiments::detail::select(data, s.test_ids, true)};
}

inline Handler ablate(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("ablate", "Learning curve over cumulative training chunks");
  common(ctx, sub);
  data_flags(ctx, sub);
  model_flags(ctx, sub);
  ctx.bind(sub, "--split", ctx.cfg.split, "split.json with the fixed test set");
  auto approach = std::make_shared<std::string>("binary");
  auto chunk = std::make_shared<std::size_t>(500);
  auto cont = std::make_shared<bool>(false);
  auto fraction = std::make_shared<double>(0.2);
  auto category = std::make_shared<std::string>();
  sub->add_option("--approach", *approach, "binary, multilabel or multitask")->capture_default_str();
  sub->add_option("--chunk", *chunk, "Sentences added per point")->capture_default_str();
  sub->add_flag("--continue", *cont, "Continue training the previous model on each new chunk");
  sub->add_option("--test-fraction", *fraction, "Held-out share when no --split is given")->capture_default_str();
  sub->add_option("--category", *category, "Stratify the holdout on this category (default: first evaluated)");
  return [=](Context& c) {
    const auto data = experiments::make_dataset(c.golds(), c.sentences(), c.cfg.context_window);
    const auto cats = c.categories();
    const auto [train, test] = holdout(c, data, category->empty() ? cats.front() : category_of(*category), *fraction);
    const auto encoder = c.encoder();
    experiments::AblationOptions opt;
    opt.approach = approach_of(*approach);
    opt.chunk = *chunk;
    opt.continue_training = *cont;
    opt.run = c.run_options();
    const auto curve = experiments::run_ablation(train, test, encoder, c.cfg.train, opt);
    c.write_run(experiments::record(curve, train, test, encoder.model_id, c.cfg.train), experiment_inputs(c));
  };
}

inline Handler compare_encoders(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("compare-encoders", "Same holdout, several pre-trained encoders");
  common(ctx, sub);
  data_flags(ctx, sub);
  model_flags(ctx, sub);
  auto approach = std::make_shared<std::string>("binary");
  auto fraction = std::make_shared<double>(0.2);
  auto category = std::make_shared<std::string>();
  sub->add_option("--approach", *approach, "binary, multilabel or multitask")->capture_default_str();
  sub->add_option("--test-fraction", *fraction, "Held-out share")->capture_default_str();
  sub->add_option("--category", *category, "Stratify the holdout on this category");
  return [=](Context& c) {
    if (c.cfg.encoders.empty()) fail(ErrorKind::InvalidArgument, "--encoders is required");
    const auto data = experiments::make_dataset(c.golds(), c.sentences(), c.cfg.context_window);
    const auto encoders = experiments::load_encoders(c.cfg.models_dir, c.cfg.encoders);
    const auto a = approach_of(*approach);
    std::optional<Category> strat;
    if (!category->empty()) strat = category_of(*category);
    const auto cmp = experiments::compare_encoders(data, encoders, c.cfg.train, a, *fraction, strat, c.run_options());
    const auto dir = c.write_run(experiments::record(cmp, data, c.cfg.train, a), experiment_inputs(c));
    auto table = detail::create(dir / "encoder_table.csv");
    experiments::write_encoder_table(table, cmp);
  };
}

// ---- corpus analysis

inline Handler classify_cmd(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("classify", "Predict labels for every sentence");
  common(ctx, sub);
  ctx.bind(sub, "--sentences", ctx.cfg.sentences, "sentences.jsonl")->required();
  ctx.bind(sub, "--context-window", ctx.cfg.context_window, "Neighbouring sentences added to each input");
  ctx.bind(sub, "--categories", ctx.cfg.categories, "Codebook category names (default: all covered)")->delimiter(',');
  auto model_args = std::make_shared<std::vector<std::string>>();
  auto batch = std::make_shared<std::size_t>(64);
  sub->add_option("--model", *model_args, "Model bundle or train output directory (repeatable)")->required();
  sub->add_option("--batch", *batch, "Sentences per batch")->capture_default_str();
  return [=](Context& c) {
    const auto dirs = detail::all_model_dirs(*model_args);
    const auto models = load_models(dirs);
    classify::ClassifyOptions opt;
    opt.batch_size = *batch;
    opt.context_window = c.cfg.context_window;
    if (!c.cfg.categories.empty()) opt.categories = c.categories();
    const auto predictions = classify::classify_corpus(models, c.sentences(), opt);
    const auto target = detail::file_output(c.cfg.out, "predictions.jsonl");
    classify::write_predictions(target.file, predictions);
    std::vector<fs::path> inputs{c.cfg.sentences};
    inputs.insert(inputs.end(), dirs.begin(), dirs.end());
    auto m = c.manifest("classify", inputs);
    m["outputs"] = {{{"path", target.file.generic_string()}, {"sentences", predictions.size()}}};
    detail::write_json(target.manifest, m);
  };
}

inline Handler keyness_cmd(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("keyness", "Chi-squared key terms of predicted-positive sentences");
  common(ctx, sub);
  ctx.bind(sub, "--predictions", ctx.cfg.predictions, "predictions.jsonl")->required();
  ctx.bind(sub, "--sentences", ctx.cfg.sentences, "sentences.jsonl")->required();
  auto cats = std::make_shared<std::vector<std::string>>();
  auto k = std::make_shared<std::size_t>(keyness::kDefaultTopK);
  auto no_colloc = std::make_shared<bool>(false);
  auto yates = std::make_shared<bool>(false);
  sub->add_option("--category", *cats, "Category (repeatable; default: all predicted)")->delimiter(',');
  sub->add_option("--k", *k, "Terms per category")->capture_default_str();
  sub->add_flag("--no-collocations", *no_colloc, "Skip multi-word expression detection");
  sub->add_flag("--yates", *yates, "Apply the Yates continuity correction");
  return [=](Context& c) {
    detail::require_file(c.cfg.predictions, "--predictions");
    const auto predictions = classify::read_predictions(c.cfg.predictions);
    std::map<std::string, std::string> text_by_id;
    for (auto& s : c.sentences()) text_by_id.emplace(s.sentence_id, std::move(s.text));
    std::vector<Category> wanted;
    for (const auto& name : *cats) wanted.push_back(category_of(name));
    if (wanted.empty())
      for (Category cat : kAllCategories)
        if (std::any_of(predictions.begin(), predictions.end(), [&](const auto& p) { return p.by_category[cat].has_value(); }))
          wanted.push_back(cat);
    keyness::KeynessOptions opt;
    opt.k = *k;
    opt.collocations = !*no_colloc;
    opt.yates = *yates;
    opt.threads = static_cast<unsigned>(c.cfg.threads);
    std::vector<keyness::CategoryKeyness> rows;
    for (Category cat : wanted) {
      std::vector<std::string> texts;
      std::vector<int> labels;
      for (const auto& p : predictions) {
        if (!p.by_category[cat]) continue;
        const auto it = text_by_id.find(p.sentence_id);
        if (it == text_by_id.end()) fail(ErrorKind::InvalidArgument, "prediction for unknown sentence " + p.sentence_id);
        texts.push_back(it->second);
        labels.push_back(p.by_category[cat]->label);
      }
      if (texts.empty()) fail(ErrorKind::MissingCategoryPrediction, "no predictions for " + std::string(codebook_name(cat)));
      rows.push_back(keyness::category_keyness(texts, labels, cat, opt));
    }
    const auto out = detail::dir_output(c.cfg.out);
    {
      auto csv = detail::create(out / "keyness.csv");
      keyness::write_keyness_csv(csv, rows);
    }
    auto m = c.manifest("keyness", {c.cfg.predictions, c.cfg.sentences});
    m["k"] = *k;
    m["collocations"] = !*no_colloc;
    m["yates"] = *yates;
    detail::write_json(out / "manifest.json", m);
  };
}

inline Handler prevalence_cmd(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("prevalence", "Per-review category shares from predictions");
  common(ctx, sub);
  ctx.bind(sub, "--predictions", ctx.cfg.predictions, "predictions.jsonl")->required();
  ctx.bind(sub, "--sentences", ctx.cfg.sentences, "sentences.jsonl")->required();
  ctx.bind(sub, "--gold", ctx.cfg.gold, "gold.jsonl; adds annotated vs predicted share correlation");
  auto width = std::make_shared<double>(0.05);
  sub->add_option("--bin-width", *width, "Histogram bin width")->capture_default_str();
  return [=](Context& c) {
    detail::require_file(c.cfg.predictions, "--predictions");
    const auto predictions = classify::read_predictions(c.cfg.predictions);
    const auto reviews = prevalence::review_prevalence(c.sentences(), predictions);
    prevalence::SummaryOptions opt;
    opt.bin_width = *width;
    auto summary = prevalence::to_json(prevalence::prevalence_summary(reviews, opt));
    std::vector<fs::path> inputs{c.cfg.predictions, c.cfg.sentences};
    const auto out = detail::dir_output(c.cfg.out);
    if (!c.cfg.gold.empty()) {
      const auto annotated = agreement::prevalence_shares(c.golds());
      const auto predicted = prevalence::predicted_shares(predictions);
      Json shares;
      for (Category cat : kAllCategories)
        shares[std::string(codebook_name(cat))] = {{"annotated", annotated[cat]}, {"predicted", predicted[cat]}};
      summary["shares"] = shares;
      summary["annotated_vs_predicted_r"] = prevalence::compare_annotated_vs_predicted(annotated, predicted);
      inputs.push_back(c.cfg.gold);
    }
    {
      auto csv = detail::create(out / "prevalence.csv");
      prevalence::write_prevalence_csv(csv, reviews);
    }
    detail::write_json(out / "summary.json", summary);
    detail::write_json(out / "manifest.json", c.manifest("prevalence", inputs));
  };
}

inline Handler fewshot_cmd(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("fewshot", "Prompted classification through an LLM server");
  common(ctx, sub);
  data_flags(ctx, sub);
  ctx.bind(sub, "--categories", ctx.cfg.categories, "Codebook category names (default: all)")->delimiter(',');
  ctx.bind(sub, "--split", ctx.cfg.split, "split.json; classifies its test_ids");
  auto url = std::make_shared<std::string>();
  auto model = std::make_shared<std::string>(fewshot::kDefaultModel);
  auto cache = std::make_shared<std::string>();
  auto inflight = std::make_shared<unsigned>(1);
  sub->add_option("--llm-url", *url, std::string("Generation endpoint (default: $") + fewshot::kLlmUrlEnv + ")");
  sub->add_option("--llm-model", *model, "Model name sent with each request")->capture_default_str();
  sub->add_option("--cache", *cache, "JSONL completion cache, reused across runs");
  sub->add_option("--max-inflight", *inflight, "Concurrent requests")->capture_default_str();
  return [=](Context& c) {
    const auto golds = c.golds();
    const auto sentences = c.sentences();
    std::map<std::string, std::string> text_by_id;
    for (const auto& s : sentences) text_by_id.emplace(s.sentence_id, s.text);
    std::vector<fewshot::CategoryPromptSpec> specs;
    std::set<std::string> examples;
    for (Category cat : c.categories()) {
      specs.push_back(fewshot::make_spec(cat, golds, text_by_id));
      examples.insert(specs.back().positive_example);
      examples.insert(specs.back().negative_example);
    }
    // Prompt examples are left out of the scored items.
    auto items = subset(experiments::make_dataset(golds, sentences, 0), c.cfg.split, true);
    std::erase_if(items, [&](const classify::LabeledText& t) { return examples.count(t.text) > 0; });
    std::unique_ptr<fewshot::LlmClient> http;
    if (url->empty()) {
      http = fewshot::HttpLlmClient::from_env();
    } else {
      http = std::make_unique<fewshot::HttpLlmClient>(*url);
    }
    fewshot::CachingClient client(*http, cache->empty() ? std::nullopt : std::optional<fs::path>(*cache));
    fewshot::FewshotOptions opt;
    opt.model = *model;
    opt.max_inflight = std::max(1u, *inflight);
    const auto result = fewshot::classify_fewshot(client, specs, items, opt);
    const auto out = detail::dir_output(c.cfg.out);
    classify::write_predictions(out / "predictions.jsonl", result.predictions);
    std::vector<metrics::CategoryReport> reports;
    Json failures;
    for (const auto& spec : specs) {
      if (result.reports[spec.category]) reports.push_back({spec.category, *result.reports[spec.category]});
      failures[std::string(codebook_name(spec.category))] = {{"parse", result.parse_failures[spec.category]},
                                                             {"client", result.client_failures[spec.category]}};
    }
    {
      auto csv = detail::create(out / "report.csv");
      metrics::write_report_csv(csv, reports);
    }
    detail::write_json(out / "report.json", metrics::to_json(reports));
    detail::write_json(out / "failures.json", failures);
    std::vector<fs::path> inputs{c.cfg.gold, c.cfg.sentences};
    if (!c.cfg.split.empty()) inputs.push_back(c.cfg.split);
    auto m = c.manifest("fewshot", inputs);
    m["llm_model"] = *model;
    m["items"] = items.size();
    detail::write_json(out / "manifest.json", m);
  };
}

// ---- service and reports

inline Handler serve(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("serve", "Run the annotation service until SIGINT/SIGTERM");
  sub->add_option("--config", ctx.config_file, "TOML run config");
  auto db = std::make_shared<std::string>(service::env_or(service::kDbPathEnv, ""));
  auto bind = std::make_shared<std::string>(service::env_or(service::kBindAddrEnv, service::kDefaultBindAddr));
  ctx.bind(sub, "--sentences", ctx.cfg.sentences, "Load these sentences into the pool at startup");
  sub->add_option("--db", *db, std::string("Event log path (default: $") + service::kDbPathEnv + ")");
  sub->add_option("--bind", *bind, std::string("host:port (default: $") + service::kBindAddrEnv + " or " +
                                        service::kDefaultBindAddr + ")");
  return [=](Context& c) {
    const auto addr = service::parse_bind_address(*bind);
    if (db->empty()) fail(ErrorKind::InvalidArgument, "--db or $" + std::string(service::kDbPathEnv) + " is required");
    service::Service svc{fs::path(*db)};
    if (!c.cfg.sentences.empty()) spdlog::info("pool +{} sentences", svc.store().add_sentences(c.sentences()));
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);  // server threads inherit the mask
    const int port = svc.bind(addr);
    std::thread waiter([&] {
      int sig = 0;
      sigwait(&signals, &sig);
      svc.stop();
    });
    (*c.out) << "listening on " << addr.host << ':' << port << std::endl;
    svc.run();
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    pthread_sigmask(SIG_UNBLOCK, &signals, nullptr);
  };
}

inline Handler report_cmd(Context& ctx, CLI::App& app) {
  auto* sub = app.add_subcommand("report", "Tables and SVG plots for a run directory");
  auto run_dir = std::make_shared<std::string>();
  sub->add_option("--run", *run_dir, "Run directory")->required();
  common(ctx, sub);
  return [=](Context& c) {
    const fs::path run(*run_dir);
    const auto out = c.cfg.out.empty() ? run / "report" : c.cfg.out;
    const auto files = cli::report(run, out);
    auto m = c.manifest("report", {run / "manifest.json"});
    m["outputs"] = files;
    detail::write_json(out / "manifest.json", m);
    for (const auto& f : files) (*c.out) << (out / f).string() << '\n';
  };
}

}  // namespace commands

/// Runs one subcommand. Returns 0 on success, 1 for invalid input, 2 for runtime failures.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app("Sentence-level classification of grant peer review texts", "reviewlens");
  app.require_subcommand(1);
  app.set_version_flag("--version", "reviewlens 0.1.0");
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  Context ctx;
  ctx.out = &out;
  ctx.command = args;
  std::map<std::string, commands::Handler> handlers;
  using Factory = commands::Handler (*)(Context&, CLI::App&);
  for (Factory make : {commands::ingest, commands::aggregate, commands::split, commands::train, commands::evaluate,
                       commands::cv, commands::ablate, commands::compare_encoders, commands::compare_agreement,
                       commands::compare_context, commands::classify_cmd, commands::keyness_cmd,
                       commands::prevalence_cmd, commands::fewshot_cmd, commands::serve, commands::report_cmd}) {
    auto handler = make(ctx, app);
    const auto all = app.get_subcommands([](CLI::App*) { return true; });
    handlers.emplace(all.back()->get_name(), std::move(handler));
  }

  if (!args.empty() && !args.front().empty() && args.front().front() != '-' && !handlers.count(args.front())) {
    err << "error: unknown subcommand '" << args.front() << "'\n\n" << app.help();
    return kExitValidation;
  }

  std::vector<const char*> argv{"reviewlens"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitValidation;
  }

  const auto level = spdlog::get_level();
  if (quiet) spdlog::set_level(spdlog::level::warn);
  int code = kExitOk;
  try {
    ctx.finalize();
    handlers.at(app.get_subcommands().front()->get_name())(ctx);
  } catch (const Error& e) {
    err << "error [" << to_string(e.kind()) << "]: " << e.what() << '\n';
    code = exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error [Io]: " << e.what() << '\n';
    code = kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    code = kExitRuntime;
  }
  spdlog::set_level(level);
  return code;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace reviewlens::cli
