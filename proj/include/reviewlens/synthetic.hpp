#pragma once

// Synthetic review data with known ground truth, plus the small pre-trained encoder fixture
// used by the test suites and smoke runs. Labels are a deterministic function of injected
// keywords, so a working pipeline must recover them.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "reviewlens/category.hpp"
#include "reviewlens/classify/encoder.hpp"
#include "reviewlens/classify/head.hpp"
#include "reviewlens/classify/train.hpp"
#include "reviewlens/corpus/types.hpp"
#include "reviewlens/nn/adamw.hpp"
#include "reviewlens/rng.hpp"

namespace reviewlens::synthetic {

inline const std::vector<std::string>& function_words() {
  static const std::vector<std::string> words{"the", "of",   "and", "to",   "in",  "is",    "a",   "this", "will", "be",
                                              "with", "for", "on",  "that", "it",  "which", "are", "an",   "as",   "has"};
  return words;
}

inline const std::vector<std::string>& content_words() {
  static const std::vector<std::string> words{"project", "proposal", "research", "study", "team",   "work",     "results",
                                              "data",    "plan",     "field",    "topic", "report", "question", "phase"};
  return words;
}

/// Label-bearing keyword per category.
inline const std::map<Category, std::string>& keywords() {
  static const std::map<Category, std::string> kw{
      {Category::TrackRecord, "publications"},
      {Category::RelevanceOriginalityTopicality, "timely"},
      {Category::Suitability, "appropriate"},
      {Category::Feasibility, "feasible"},
      {Category::Applicant, "applicant"},
      {Category::ApplicantQuantity, "citations"},
      {Category::Proposal, "aims"},
      {Category::Method, "methodology"},
      {Category::Positive, "excellent"},
      {Category::Negative, "unclear"},
      {Category::Suggestion, "suggest"},
      {Category::Rationale, "because"},
  };
  return kw;
}

inline std::vector<std::string> vocabulary() {
  std::vector<std::string> words = function_words();
  words.insert(words.end(), content_words().begin(), content_words().end());
  for (const auto& [c, w] : keywords()) words.push_back(w);
  return words;
}

/// 4-8 function words and 1-3 content words in random order, with `extra` words inserted
/// at random positions.
inline std::string sentence(Rng& rng, const std::vector<std::string>& extra = {}) {
  const auto& fw = function_words();
  const auto& cw = content_words();
  std::vector<std::string> words;
  const auto n_function = 4 + rng.below(5);
  for (std::uint64_t i = 0; i < n_function; ++i) words.push_back(fw[rng.below(fw.size())]);
  const auto n_content = 1 + rng.below(3);
  for (std::uint64_t i = 0; i < n_content; ++i) {
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), cw[rng.below(cw.size())]);
  }
  for (const auto& e : extra) words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), e);
  std::string text;
  for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
  text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
  return text + ".";
}

/// Draws labels for `categories` independently at `positive_rate`; every positive carries its keyword.
inline classify::LabeledText labeled_sentence(Rng& rng, const std::vector<Category>& categories, double positive_rate,
                                              std::string id) {
  classify::LabeledText item;
  item.id = std::move(id);
  std::vector<std::string> extra;
  for (Category c : categories) {
    if (rng.uniform() < positive_rate) {
      item.labels[c] = 1;
      extra.push_back(keywords().at(c));
    }
  }
  item.text = sentence(rng, extra);
  return item;
}

inline std::vector<classify::LabeledText> keyword_corpus(std::size_t n, std::uint64_t seed,
                                                         const std::vector<Category>& categories,
                                                         double positive_rate = 0.5) {
  Rng rng(seed);
  std::vector<classify::LabeledText> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(labeled_sentence(rng, categories, positive_rate, "s" + std::to_string(i)));
  return out;
}

struct Dataset {
  std::vector<corpus::Sentence> sentences;
  std::vector<corpus::AnnotationRecord> annotations;
  std::vector<classify::LabeledText> truth;  // noise-free labels, aligned with sentences
};

/// Reviews of `sentences_per_review` sentences, each annotated by three annotators who copy the
/// true label except that each vote flips with probability `noise`. Rationale votes are gated:
/// an annotator only keeps a Rationale vote when they also marked Positive or Negative.
inline Dataset annotated_dataset(std::size_t n_sentences, std::uint64_t seed, const std::vector<Category>& categories,
                                 double positive_rate = 0.5, double noise = 0.0, std::size_t sentences_per_review = 5,
                                 const std::vector<std::string>& annotators = {"ann1", "ann2", "ann3"},
                                 const std::string& round_id = "r1") {
  Rng rng(seed);
  Dataset ds;
  const auto boxes = corpus::kAllTextBoxes;
  for (std::size_t i = 0; i < n_sentences; ++i) {
    corpus::Sentence s;
    const std::size_t review = i / sentences_per_review;
    s.review_id = "rev" + std::to_string(review);
    s.position = static_cast<int>(i % sentences_per_review);
    s.sentence_id = s.review_id + ":" + std::to_string(s.position);
    s.text_box = boxes[i % boxes.size()];
    s.research_domain = static_cast<corpus::ResearchDomain>(review % 3);
    auto item = labeled_sentence(rng, categories, positive_rate, s.sentence_id);
    s.text = item.text;
    for (const auto& ann : annotators) {
      corpus::AnnotationRecord r;
      r.sentence_id = s.sentence_id;
      r.annotator_id = ann;
      r.round_id = round_id;
      for (Category c : kAllCategories) {
        int v = item.labels[c];
        if (noise > 0 && rng.uniform() < noise) v = 1 - v;
        r.labels[c] = v;
      }
      if (!corpus::satisfies_gating(r.labels)) r.labels[Category::Rationale] = 0;
      r.rationale_context = r.labels[Category::Rationale];
      ds.annotations.push_back(std::move(r));
    }
    ds.sentences.push_back(std::move(s));
    ds.truth.push_back(std::move(item));
  }
  return ds;
}

struct FixtureOptions {
  std::uint64_t seed = 7;
  int hidden = 32;
  int layers = 2;
  int heads = 2;
  int max_tokens = 64;
  int pretrain_steps = 4000;
  int pretrain_batch = 16;
  double pretrain_lr = 1e-3;
  double keyword_rate = 0.1;
  std::uint64_t pretrain_seed = 11;
  float output_gain = 4.0F;
};

/// Tiny BERT-architecture encoder standing in for a pre-trained checkpoint. It is pre-trained
/// so that keyword presence is linearly recoverable from the CLS state, then its final
/// LayerNorm is rescaled so the CLS vector's magnitude resembles a base-size encoder's.
inline classify::EncoderModel pretrained_fixture_encoder(const FixtureOptions& opt = {}) {
  classify::EncoderModel enc =
      classify::make_fixture_encoder(vocabulary(), opt.seed, opt.hidden, opt.layers, opt.heads, opt.max_tokens);
  enc.model_id = "fixture/tiny-bert";

  std::vector<std::string> targets;
  for (const auto& [c, w] : keywords()) targets.push_back(w);
  std::vector<int> target_ids;
  for (const auto& t : targets) target_ids.push_back(enc.tokenizer.word_pieces(t).front());
  const auto n_targets = static_cast<Eigen::Index>(targets.size());

  Rng rng(opt.pretrain_seed);
  nn::Linear<classify::Scalar> decoder("decoder", enc.hidden_dim(), n_targets);
  nn::fill_normal(decoder.weight.value, rng, 0.02);
  auto params = enc.network.parameters();
  decoder.collect(params);
  nn::AdamW<classify::Scalar> optimizer(params, {opt.pretrain_lr, 0.0});
  nn::BertEncoder<classify::Scalar>::Cache cache;
  const auto scale = static_cast<classify::Scalar>(opt.pretrain_batch * n_targets);
  for (int step = 0; step < opt.pretrain_steps; ++step) {
    optimizer.zero_grad();
    for (int b = 0; b < opt.pretrain_batch; ++b) {
      std::vector<std::string> extra;
      for (const auto& [c, w] : keywords())
        if (rng.uniform() < opt.keyword_rate) extra.push_back(w);
      const auto ids = enc.token_ids(sentence(rng, extra));
      nn::Matrix<classify::Scalar> y = nn::Matrix<classify::Scalar>::Zero(1, n_targets);
      for (Eigen::Index k = 0; k < n_targets; ++k)
        if (std::find(ids.begin(), ids.end(), target_ids[static_cast<std::size_t>(k)]) != ids.end()) y(0, k) = 1;
      const nn::Matrix<classify::Scalar> h = enc.network.pooled(ids, &cache);
      const nn::Matrix<classify::Scalar> p =
          decoder.forward(h).unaryExpr([](classify::Scalar v) { return nn::sigmoid(v); });
      const nn::Matrix<classify::Scalar> dh = decoder.backward(h, (p - y) / scale);
      enc.network.backward_pooled(cache, dh.row(0));
    }
    optimizer.step();
  }

  auto all = enc.network.parameters();
  // The last two parameters are the final LayerNorm gain and bias.
  all[all.size() - 2]->value *= opt.output_gain;
  all[all.size() - 1]->value *= opt.output_gain;
  return enc;
}

/// Test configuration for the tiny encoder: published defaults, learning rate scaled x10.
inline classify::TrainConfig tiny_train_config(std::uint64_t seed = kDefaultSeed) {
  classify::TrainConfig cfg;
  cfg.learning_rate = 2e-4;
  cfg.seed = seed;
  return cfg;
}

}  // namespace reviewlens::synthetic
