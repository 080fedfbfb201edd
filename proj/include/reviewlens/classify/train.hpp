#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reviewlens/category.hpp"
#include "reviewlens/classify/encoder.hpp"
#include "reviewlens/classify/head.hpp"
#include "reviewlens/error.hpp"
#include "reviewlens/nn/adamw.hpp"
#include "reviewlens/rng.hpp"

namespace reviewlens::classify {

enum class Approach { Binary, MultiLabel, MultiTask };

inline std::string to_string(Approach a) {
  switch (a) {
    case Approach::Binary: return "binary";
    case Approach::MultiLabel: return "multilabel";
    case Approach::MultiTask: return "multitask";
  }
  return "";
}

inline std::optional<Approach> parse_approach(std::string_view s) {
  if (s == "binary") return Approach::Binary;
  if (s == "multilabel" || s == "multi-label") return Approach::MultiLabel;
  if (s == "multitask" || s == "multi-task") return Approach::MultiTask;
  return std::nullopt;
}

/// Fine-tuning hyperparameters. Defaults are the published settings; there is no warmup or decay
/// schedule and no class reweighting.
struct TrainConfig {
  double learning_rate = 2e-5;
  double weight_decay = 0.01;
  int epochs = 3;
  int batch_size = 10;
  double threshold = kDefaultThreshold;
  std::uint64_t seed = kDefaultSeed;
  int adapter_dim = 64;
  bool multitask_sequential = false;  // train adapters one category at a time instead of jointly

  void validate() const {
    if (!(learning_rate > 0) || weight_decay < 0 || epochs <= 0 || batch_size <= 0 || adapter_dim <= 0) {
      fail(ErrorKind::InvalidArgument, "training hyperparameters must be positive");
    }
    if (!(threshold > 0 && threshold < 1)) fail(ErrorKind::InvalidArgument, "threshold must lie in (0,1)");
  }
};

/// One training or evaluation instance: the model input text and its 12 gold labels.
struct LabeledText {
  std::string id;
  std::string text;
  LabelVector labels;
};

struct AdapterHead {
  Category category{};
  Adapter<Scalar> adapter;
  ClassifierHead<Scalar> head;
};

struct FineTunedModel {
  Approach approach = Approach::Binary;
  std::optional<Category> category;  // binary models only
  EncoderModel encoder;
  ClassifierHead<Scalar> head;        // binary and multi-label
  std::vector<AdapterHead> adapters;  // multi-task, one per category
  TrainConfig config;
  std::vector<double> epoch_losses;

  /// Categories this model scores, in output order.
  std::vector<Category> categories() const {
    if (approach == Approach::Binary) return {*category};
    if (approach == Approach::MultiTask) {
      std::vector<Category> out;
      for (const auto& a : adapters) out.push_back(a.category);
      return out;
    }
    return {kAllCategories.begin(), kAllCategories.end()};
  }

  std::vector<double> predict_proba_ids(const std::vector<int>& ids) const {
    const Embedding h = encoder.network.pooled(ids);
    std::vector<double> out;
    if (approach == Approach::MultiTask) {
      for (const auto& a : adapters) {
        const nn::Matrix<Scalar> adapted = a.adapter.forward(h);
        out.push_back(static_cast<double>(head_forward<Scalar>(a.head, adapted.row(0))(0)));
      }
      return out;
    }
    const auto p = head_forward<Scalar>(head, h);
    for (Eigen::Index i = 0; i < p.size(); ++i) out.push_back(static_cast<double>(p(i)));
    return out;
  }

  std::vector<double> predict_proba(std::string_view text) const { return predict_proba_ids(encoder.token_ids(text)); }

  std::vector<int> predict_labels(std::string_view text) const {
    std::vector<int> out;
    for (double p : predict_proba(text)) out.push_back(predict(p, config.threshold));
    return out;
  }
};

namespace detail {

inline void check_finite(double loss) {
  if (!std::isfinite(loss)) fail(ErrorKind::NonFiniteLoss, "training loss became non-finite");
}

inline std::vector<std::vector<int>> tokenize_all(const EncoderModel& encoder, std::span<const LabeledText> data) {
  std::vector<std::vector<int>> ids;
  ids.reserve(data.size());
  for (const auto& d : data) ids.push_back(encoder.token_ids(d.text));
  return ids;
}

inline nn::Matrix<Scalar> targets(std::span<const LabeledText> data, std::span<const Category> cats) {
  nn::Matrix<Scalar> y(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(cats.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t c = 0; c < cats.size(); ++c) {
      y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = static_cast<Scalar>(data[i].labels[cats[c]]);
    }
  }
  return y;
}

/// Joint fine-tuning of encoder and head with AdamW over shuffled mini-batches.
inline std::vector<double> fine_tune(EncoderModel& encoder, ClassifierHead<Scalar>& head,
                                     const std::vector<std::vector<int>>& inputs, const nn::Matrix<Scalar>& y,
                                     const TrainConfig& config, Rng& rng) {
  std::vector<nn::Param<Scalar>*> params = encoder.network.parameters();
  head.linear.collect(params);
  nn::AdamW<Scalar> optimizer(params, {config.learning_rate, config.weight_decay});

  std::vector<std::size_t> order(inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const Eigen::Index outputs = y.cols();
  std::vector<double> epoch_losses;
  typename nn::BertEncoder<Scalar>::Cache cache;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const auto scale = static_cast<Scalar>((end - start) * static_cast<std::size_t>(outputs));
      optimizer.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const Embedding h = encoder.network.pooled(inputs[i], &cache);
        const nn::Matrix<Scalar> hm = h;
        nn::Matrix<Scalar> z = head.linear.forward(hm);
        nn::Matrix<Scalar> p = z.unaryExpr([](Scalar v) { return nn::sigmoid(v); });
        const nn::Matrix<Scalar> yi = y.row(static_cast<Eigen::Index>(i));
        epoch_loss += static_cast<double>(bce_loss<Scalar>(p, yi)) * static_cast<double>(outputs);
        const nn::Matrix<Scalar> dz = (p - yi) / scale;
        const nn::Matrix<Scalar> dh = head.linear.backward(hm, dz);
        encoder.network.backward_pooled(cache, dh.row(0));
      }
      optimizer.step();
    }
    epoch_loss /= static_cast<double>(order.size() * static_cast<std::size_t>(outputs));
    check_finite(epoch_loss);
    epoch_losses.push_back(epoch_loss);
  }
  return epoch_losses;
}

}  // namespace detail

inline void require_both_classes(std::span<const LabeledText> data, Category c) {
  std::size_t positives = 0;
  for (const auto& d : data) positives += d.labels[c] == 1 ? 1 : 0;
  if (positives == 0 || positives == data.size()) {
    fail(ErrorKind::DegenerateStratum,
         "category " + std::string(codebook_name(c)) + " has only one class in the training data");
  }
}

/// One encoder + single-output head fine-tuned for one category. Seeded with seed + category index.
inline FineTunedModel train_binary(std::span<const LabeledText> data, Category category, const EncoderModel& encoder,
                                   const TrainConfig& config) {
  config.validate();
  require_both_classes(data, category);
  Rng rng(config.seed + index_of(category));
  FineTunedModel model;
  model.approach = Approach::Binary;
  model.category = category;
  model.encoder = encoder;
  model.config = config;
  model.head = ClassifierHead<Scalar>::fresh(HeadVariant::Binary, encoder.hidden_dim(), 1, rng);
  const std::array<Category, 1> cats{category};
  model.epoch_losses =
      detail::fine_tune(model.encoder, model.head, detail::tokenize_all(encoder, data), detail::targets(data, cats), config, rng);
  return model;
}

/// Further epochs on an already fine-tuned binary or multi-label model (continuation training).
inline void continue_training(FineTunedModel& model, std::span<const LabeledText> data, const TrainConfig& config) {
  config.validate();
  if (model.approach == Approach::MultiTask) fail(ErrorKind::InvalidArgument, "continuation applies to fine-tuned encoders");
  const auto cats = model.categories();
  Rng rng(config.seed + (model.category ? index_of(*model.category) : 0));
  const auto losses = detail::fine_tune(model.encoder, model.head, detail::tokenize_all(model.encoder, data),
                                        detail::targets(data, cats), config, rng);
  model.epoch_losses.insert(model.epoch_losses.end(), losses.begin(), losses.end());
  model.config = config;
}

/// One encoder + 12-output head; loss is BCE averaged over all outputs.
inline FineTunedModel train_multilabel(std::span<const LabeledText> data, const EncoderModel& encoder,
                                       const TrainConfig& config) {
  config.validate();
  bool any_positive = false;
  for (const auto& d : data)
    for (int v : d.labels) any_positive = any_positive || v == 1;
  if (!any_positive) fail(ErrorKind::DegenerateStratum, "multi-label training data has no positive label");
  Rng rng(config.seed);
  FineTunedModel model;
  model.approach = Approach::MultiLabel;
  model.encoder = encoder;
  model.config = config;
  model.head = ClassifierHead<Scalar>::fresh(HeadVariant::MultiLabel, encoder.hidden_dim(), kNumCategories, rng);
  model.epoch_losses = detail::fine_tune(model.encoder, model.head, detail::tokenize_all(encoder, data),
                                         detail::targets(data, kAllCategories), config, rng);
  return model;
}

/// Frozen shared encoder; one adapter and binary head per category, trained on the cached CLS embeddings.
inline FineTunedModel train_multitask(std::span<const LabeledText> data, const EncoderModel& encoder,
                                      const TrainConfig& config) {
  config.validate();
  bool any_positive = false;
  for (const auto& d : data)
    for (int v : d.labels) any_positive = any_positive || v == 1;
  if (!any_positive) fail(ErrorKind::DegenerateStratum, "multi-task training data has no positive label");

  FineTunedModel model;
  model.approach = Approach::MultiTask;
  model.encoder = encoder;
  model.config = config;

  // Single shared encoder pass; θ is never touched afterwards.
  const auto n = static_cast<Eigen::Index>(data.size());
  nn::Matrix<Scalar> embeddings(n, encoder.hidden_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    embeddings.row(i) = encoder.network.pooled(encoder.token_ids(data[static_cast<std::size_t>(i)].text));
  }
  const nn::Matrix<Scalar> y = detail::targets(data, kAllCategories);

  Rng init_rng(config.seed);
  for (Category c : kAllCategories) {
    AdapterHead a;
    a.category = c;
    a.adapter = Adapter<Scalar>::fresh("adapter." + std::string(codebook_name(c)), encoder.hidden_dim(),
                                       config.adapter_dim, init_rng);
    a.head = ClassifierHead<Scalar>::fresh(HeadVariant::Adapter, encoder.hidden_dim(), 1, init_rng);
    model.adapters.push_back(std::move(a));
  }

  // Trains the given adapters jointly: the loss is the mean over those categories' BCE.
  auto run = [&](std::vector<AdapterHead*> group, Rng& rng) {
    std::vector<nn::Param<Scalar>*> params;
    for (AdapterHead* a : group) {
      a->adapter.collect(params);
      a->head.linear.collect(params);
    }
    nn::AdamW<Scalar> optimizer(params, {config.learning_rate, config.weight_decay});
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::vector<double> losses;
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      rng.shuffle(order);
      double epoch_loss = 0.0;
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t end = std::min(order.size(), start + batch);
        const auto rows = static_cast<Eigen::Index>(end - start);
        nn::Matrix<Scalar> hb(rows, embeddings.cols());
        for (Eigen::Index r = 0; r < rows; ++r) hb.row(r) = embeddings.row(order[start + static_cast<std::size_t>(r)]);
        optimizer.zero_grad();
        for (AdapterHead* a : group) {
          nn::Matrix<Scalar> yb(rows, 1);
          for (Eigen::Index r = 0; r < rows; ++r) {
            yb(r, 0) = y(order[start + static_cast<std::size_t>(r)], static_cast<Eigen::Index>(index_of(a->category)));
          }
          typename Adapter<Scalar>::Cache cache;
          const nn::Matrix<Scalar> adapted = a->adapter.forward(hb, &cache);
          const nn::Matrix<Scalar> p =
              a->head.linear.forward(adapted).unaryExpr([](Scalar v) { return nn::sigmoid(v); });
          epoch_loss += static_cast<double>(bce_loss<Scalar>(p, yb)) * static_cast<double>(rows);
          const nn::Matrix<Scalar> dz = (p - yb) / static_cast<Scalar>(rows * static_cast<Eigen::Index>(group.size()));
          a->adapter.backward(cache, a->head.linear.backward(adapted, dz));
        }
        optimizer.step();
      }
      epoch_loss /= static_cast<double>(order.size() * group.size());
      detail::check_finite(epoch_loss);
      losses.push_back(epoch_loss);
    }
    return losses;
  };

  if (config.multitask_sequential) {
    std::vector<double> totals(static_cast<std::size_t>(config.epochs), 0.0);
    for (auto& a : model.adapters) {
      Rng rng(config.seed + index_of(a.category));
      const auto losses = run({&a}, rng);
      for (std::size_t e = 0; e < losses.size(); ++e) totals[e] += losses[e] / static_cast<double>(kNumCategories);
    }
    model.epoch_losses = totals;
  } else {
    std::vector<AdapterHead*> all;
    for (auto& a : model.adapters) all.push_back(&a);
    Rng rng(config.seed);
    model.epoch_losses = run(all, rng);
  }
  return model;
}

inline FineTunedModel train(Approach approach, std::span<const LabeledText> data, std::optional<Category> category,
                            const EncoderModel& encoder, const TrainConfig& config) {
  switch (approach) {
    case Approach::Binary:
      if (!category) fail(ErrorKind::InvalidArgument, "binary training needs a category");
      return train_binary(data, *category, encoder, config);
    case Approach::MultiLabel: return train_multilabel(data, encoder, config);
    case Approach::MultiTask: return train_multitask(data, encoder, config);
  }
  fail(ErrorKind::InvalidArgument, "unknown approach");
}

}  // namespace reviewlens::classify
