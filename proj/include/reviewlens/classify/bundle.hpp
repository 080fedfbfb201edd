#pragma once

// Trained-model bundle on disk:
//   head.json    approach, head variant, categories, W/b (and adapters for multi-task)
//   encoder/     full encoder checkpoint (unchanged base weights for multi-task)
//   config.json  training configuration snapshot, base model id, per-epoch losses
//   category     codebook name of a binary model, "all" otherwise

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "reviewlens/classify/train.hpp"
#include "reviewlens/error.hpp"

namespace reviewlens::classify {

namespace detail {

using Json = nlohmann::ordered_json;

inline Json matrix_to_json(const nn::Matrix<Scalar>& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(static_cast<double>(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void matrix_from_json(const Json& j, nn::Matrix<Scalar>& m, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != m.rows())
    fail(ErrorKind::MalformedRecord, "bad shape for " + what);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != m.cols())
      fail(ErrorKind::MalformedRecord, "bad shape for " + what);
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(row[static_cast<std::size_t>(c)].get<double>());
  }
}

inline Json linear_to_json(const nn::Linear<Scalar>& l) {
  return Json{{"W", matrix_to_json(l.weight.value)}, {"b", matrix_to_json(l.bias.value)}};
}

inline void linear_from_json(const Json& j, nn::Linear<Scalar>& l, const std::string& what) {
  if (!j.contains("W") || !j.contains("b")) fail(ErrorKind::MalformedRecord, what + " lacks W or b");
  matrix_from_json(j.at("W"), l.weight.value, what + ".W");
  matrix_from_json(j.at("b"), l.bias.value, what + ".b");
}

inline Json config_to_json(const TrainConfig& c) {
  return Json{{"learning_rate", c.learning_rate},       {"weight_decay", c.weight_decay},
              {"epochs", c.epochs},                     {"batch_size", c.batch_size},
              {"threshold", c.threshold},               {"seed", c.seed},
              {"adapter_dim", c.adapter_dim},           {"multitask_sequential", c.multitask_sequential}};
}

inline TrainConfig config_from_json(const Json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.threshold = j.value("threshold", c.threshold);
  c.seed = j.value("seed", c.seed);
  c.adapter_dim = j.value("adapter_dim", c.adapter_dim);
  c.multitask_sequential = j.value("multitask_sequential", c.multitask_sequential);
  return c;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::ModelNotFound, "missing " + path.string());
  auto j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::MalformedRecord, "invalid JSON in " + path.string());
  return j;
}

}  // namespace detail

inline void save_model(const FineTunedModel& model, const std::filesystem::path& dir) {
  using detail::Json;
  std::filesystem::create_directories(dir);
  Json head{{"approach", to_string(model.approach)}};
  Json cats = Json::array();
  for (Category c : model.categories()) cats.push_back(std::string(codebook_name(c)));
  head["categories"] = cats;
  if (model.approach == Approach::MultiTask) {
    head["variant"] = to_string(HeadVariant::Adapter);
    head["bottleneck_dim"] = model.adapters.empty() ? 0 : model.adapters.front().adapter.bottleneck_dim();
    Json adapters = Json::array();
    for (const auto& a : model.adapters) {
      adapters.push_back(Json{{"category", std::string(codebook_name(a.category))},
                              {"down", detail::linear_to_json(a.adapter.down)},
                              {"up", detail::linear_to_json(a.adapter.up)},
                              {"head", detail::linear_to_json(a.head.linear)}});
    }
    head["adapters"] = adapters;
  } else {
    head["variant"] = to_string(model.head.variant);
    head.update(detail::linear_to_json(model.head.linear));
  }
  {
    std::ofstream out(dir / "head.json");
    out << head.dump() << '\n';
  }
  save_encoder(model.encoder, dir / "encoder");
  {
    Json cfg{{"approach", to_string(model.approach)},
             {"base_model_id", model.encoder.model_id},
             {"max_tokens", model.encoder.max_tokens},
             {"train_config", detail::config_to_json(model.config)},
             {"epoch_losses", model.epoch_losses}};
    std::ofstream out(dir / "config.json");
    out << cfg.dump(2) << '\n';
  }
  std::ofstream out(dir / "category");
  out << (model.category ? std::string(codebook_name(*model.category)) : std::string("all")) << '\n';
}

inline FineTunedModel load_model(const std::filesystem::path& dir) {
  using detail::Json;
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::ModelNotFound, "no model bundle at " + dir.string());
  const Json cfg = detail::read_json_file(dir / "config.json");
  const Json head = detail::read_json_file(dir / "head.json");
  FineTunedModel model;
  const auto approach = parse_approach(head.value("approach", std::string{}));
  if (!approach) fail(ErrorKind::MalformedRecord, "unknown approach in " + (dir / "head.json").string());
  model.approach = *approach;
  model.config = detail::config_from_json(cfg.value("train_config", Json::object()));
  model.epoch_losses = cfg.value("epoch_losses", std::vector<double>{});
  model.encoder = load_encoder(dir, "encoder", cfg.value("max_tokens", kDefaultMaxTokens));
  model.encoder.model_id = cfg.value("base_model_id", std::string("encoder"));
  const Eigen::Index hidden = model.encoder.hidden_dim();

  std::vector<Category> cats;
  for (const auto& name : head.value("categories", std::vector<std::string>{})) {
    const auto c = parse_category(name);
    if (!c) fail(ErrorKind::MalformedRecord, "unknown category '" + name + "' in bundle");
    cats.push_back(*c);
  }
  if (model.approach == Approach::MultiTask) {
    const auto bottleneck = head.value("bottleneck_dim", 0);
    for (const auto& a : head.value("adapters", Json::array())) {
      AdapterHead ah;
      const auto c = parse_category(a.value("category", std::string{}));
      if (!c) fail(ErrorKind::MalformedRecord, "adapter without a known category");
      ah.category = *c;
      const std::string name = "adapter." + std::string(codebook_name(*c));
      ah.adapter = Adapter<Scalar>(name, hidden, bottleneck);
      ah.head = ClassifierHead<Scalar>(HeadVariant::Adapter, hidden, 1);
      detail::linear_from_json(a.at("down"), ah.adapter.down, name + ".down");
      detail::linear_from_json(a.at("up"), ah.adapter.up, name + ".up");
      detail::linear_from_json(a.at("head"), ah.head.linear, name + ".head");
      model.adapters.push_back(std::move(ah));
    }
  } else {
    const bool binary = model.approach == Approach::Binary;
    if (binary) {
      if (cats.size() != 1) fail(ErrorKind::MalformedRecord, "binary bundle must name one category");
      model.category = cats.front();
    }
    model.head = ClassifierHead<Scalar>(binary ? HeadVariant::Binary : HeadVariant::MultiLabel, hidden,
                                        binary ? 1 : static_cast<Eigen::Index>(kNumCategories));
    detail::linear_from_json(head, model.head.linear, "head");
  }
  return model;
}

}  // namespace reviewlens::classify
