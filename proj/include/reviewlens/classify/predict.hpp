#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reviewlens/classify/context.hpp"
#include "reviewlens/classify/train.hpp"
#include "reviewlens/corpus/types.hpp"
#include "reviewlens/error.hpp"

namespace reviewlens::classify {

struct Prediction {
  double prob = 0.0;
  int label = 0;

  bool operator==(const Prediction&) const = default;
};

struct SentencePrediction {
  std::string sentence_id;
  PerCategory<std::optional<Prediction>> by_category;

  bool operator==(const SentencePrediction&) const = default;
};

/// Predictions in input order.
using PredictionSet = std::vector<SentencePrediction>;

struct ClassifyOptions {
  std::size_t batch_size = 64;
  int context_window = 0;  // 0: the sentence alone
  std::vector<Category> categories;  // empty: everything the models cover
};

/// Scores every sentence with every model and hands each result to `sink` in input order.
/// Memory stays bounded by one batch, so arbitrarily large inputs can be streamed to disk.
/// A category covered by two models is rejected, as is a requested one covered by none.
inline void classify_stream(std::span<const FineTunedModel> models, std::span<const corpus::Sentence> sentences,
                            const ClassifyOptions& options, const std::function<void(SentencePrediction&&)>& sink) {
  if (options.batch_size == 0) fail(ErrorKind::InvalidArgument, "batch_size must be positive");
  PerCategory<int> owner;
  owner.values.fill(-1);
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (Category c : models[m].categories()) {
      if (owner[c] != -1) fail(ErrorKind::InvalidArgument, "two models cover " + std::string(codebook_name(c)));
      owner[c] = static_cast<int>(m);
    }
  }
  PerCategory<bool> wanted;
  if (options.categories.empty()) {
    for (Category c : kAllCategories) wanted[c] = owner[c] != -1;
  } else {
    for (Category c : options.categories) {
      if (owner[c] == -1) fail(ErrorKind::InvalidArgument, "no model covers " + std::string(codebook_name(c)));
      wanted[c] = true;
    }
  }
  std::map<std::string, std::string> context;
  if (options.context_window > 0) context = context_inputs(sentences, options.context_window);

  for (std::size_t start = 0; start < sentences.size(); start += options.batch_size) {
    const std::size_t end = std::min(sentences.size(), start + options.batch_size);
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = sentences[i];
      const std::string& input = options.context_window > 0 ? context.at(s.sentence_id) : s.text;
      SentencePrediction out;
      out.sentence_id = s.sentence_id;
      for (const auto& model : models) {
        const auto cats = model.categories();
        bool needed = false;
        for (Category c : cats) needed = needed || wanted[c];
        if (!needed) continue;
        const auto probs = model.predict_proba(input);
        for (std::size_t k = 0; k < cats.size(); ++k) {
          if (!wanted[cats[k]]) continue;
          out.by_category[cats[k]] = Prediction{probs[k], predict(probs[k], model.config.threshold)};
        }
      }
      sink(std::move(out));
    }
  }
}

inline PredictionSet classify_corpus(std::span<const FineTunedModel> models, std::span<const corpus::Sentence> sentences,
                                     const ClassifyOptions& options = {}) {
  PredictionSet out;
  out.reserve(sentences.size());
  classify_stream(models, sentences, options, [&](SentencePrediction&& p) { out.push_back(std::move(p)); });
  return out;
}

/// One predictions.jsonl line per (sentence, category).
inline void write_prediction_lines(std::ostream& out, const SentencePrediction& p) {
  for (Category c : kAllCategories) {
    if (!p.by_category[c]) continue;
    nlohmann::ordered_json j{{"sentence_id", p.sentence_id},
                             {"category", std::string(codebook_name(c))},
                             {"prob", p.by_category[c]->prob},
                             {"label", p.by_category[c]->label}};
    out << j.dump() << '\n';
  }
}

inline void write_predictions(const std::filesystem::path& path, const PredictionSet& set) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& p : set) write_prediction_lines(out, p);
}

/// Reads predictions.jsonl back, grouping lines by sentence in order of first appearance.
inline PredictionSet read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  PredictionSet out;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(ErrorKind::MalformedRecord, where + ": invalid JSON");
    try {
      const auto id = j.at("sentence_id").get<std::string>();
      const auto c = parse_category(j.at("category").get<std::string>());
      if (!c) fail(ErrorKind::MalformedRecord, where + ": unknown category");
      const int label = j.at("label").get<int>();
      if (label != 0 && label != 1) fail(ErrorKind::MalformedRecord, where + ": label must be 0 or 1");
      auto [it, inserted] = index.emplace(id, out.size());
      if (inserted) out.push_back(SentencePrediction{id, {}});
      out[it->second].by_category[*c] = Prediction{j.at("prob").get<double>(), label};
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::MalformedRecord, where + ": " + e.what());
    }
  }
  return out;
}

}  // namespace reviewlens::classify
