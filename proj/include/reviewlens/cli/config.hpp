#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "reviewlens/category.hpp"
#include "reviewlens/classify/bundle.hpp"
#include "reviewlens/classify/train.hpp"
#include "reviewlens/error.hpp"

namespace reviewlens::cli {

using Json = nlohmann::ordered_json;

struct RunConfig {
  std::filesystem::path sentences;
  std::filesystem::path annotations;
  std::filesystem::path gold;
  std::filesystem::path predictions;
  std::filesystem::path split;
  std::filesystem::path models_dir = "models";
  std::filesystem::path out;
  std::vector<std::string> encoders;
  std::vector<std::string> categories;  // codebook names; empty means all twelve
  classify::TrainConfig train;          // train.seed is the run seed
  int threads = 1;
  int context_window = 0;
};

namespace detail {

inline void check_keys(const toml::table& t, std::initializer_list<std::string_view> allowed, const std::string& where) {
  const std::set<std::string_view> ok(allowed);
  for (const auto& [key, node] : t) {
    (void)node;
    if (!ok.count(key.str())) fail(ErrorKind::InvalidArgument, "unknown key '" + std::string(key.str()) + "' in " + where);
  }
}

template <typename T>
void read(const toml::table& t, std::string_view key, T& target, const std::string& where) {
  const auto* node = t.get(key);
  if (!node) return;
  if constexpr (std::is_same_v<T, std::filesystem::path>) {
    const auto v = node->value<std::string>();
    if (!v) fail(ErrorKind::InvalidArgument, where + "." + std::string(key) + " must be a string");
    target = *v;
  } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
    const auto* arr = node->as_array();
    if (!arr) fail(ErrorKind::InvalidArgument, where + "." + std::string(key) + " must be an array of strings");
    target.clear();
    for (const auto& item : *arr) {
      const auto v = item.value<std::string>();
      if (!v) fail(ErrorKind::InvalidArgument, where + "." + std::string(key) + " must be an array of strings");
      target.push_back(*v);
    }
  } else {
    const auto v = node->value<T>();
    if (!v) fail(ErrorKind::InvalidArgument, where + "." + std::string(key) + " has the wrong type");
    target = *v;
  }
}

inline const toml::table* subtable(const toml::table& t, std::string_view key) {
  const auto* node = t.get(key);
  if (!node) return nullptr;
  if (!node->is_table()) fail(ErrorKind::InvalidArgument, "[" + std::string(key) + "] must be a table");
  return node->as_table();
}

}  // namespace detail

/// Reads a TOML run config. Relative paths stay relative to the working directory.
inline void apply_toml(const toml::table& t, RunConfig& cfg) {
  using detail::read;
  detail::check_keys(t, {"seed", "threads", "categories", "context_window", "paths", "encoder", "train"}, "config");
  std::int64_t seed = static_cast<std::int64_t>(cfg.train.seed);
  read(t, "seed", seed, "config");
  if (seed < 0) fail(ErrorKind::InvalidArgument, "seed must be non-negative");
  cfg.train.seed = static_cast<std::uint64_t>(seed);
  std::int64_t threads = cfg.threads, window = cfg.context_window;
  read(t, "threads", threads, "config");
  read(t, "context_window", window, "config");
  cfg.threads = static_cast<int>(threads);
  cfg.context_window = static_cast<int>(window);
  read(t, "categories", cfg.categories, "config");
  if (const auto* p = detail::subtable(t, "paths")) {
    detail::check_keys(*p, {"sentences", "annotations", "gold", "predictions", "split", "models_dir", "out"}, "[paths]");
    read(*p, "sentences", cfg.sentences, "paths");
    read(*p, "annotations", cfg.annotations, "paths");
    read(*p, "gold", cfg.gold, "paths");
    read(*p, "predictions", cfg.predictions, "paths");
    read(*p, "split", cfg.split, "paths");
    read(*p, "models_dir", cfg.models_dir, "paths");
    read(*p, "out", cfg.out, "paths");
  }
  if (const auto* e = detail::subtable(t, "encoder")) {
    detail::check_keys(*e, {"ids"}, "[encoder]");
    read(*e, "ids", cfg.encoders, "encoder");
  }
  if (const auto* tr = detail::subtable(t, "train")) {
    detail::check_keys(*tr, {"learning_rate", "weight_decay", "epochs", "batch_size", "threshold", "adapter_dim",
                             "multitask_sequential"},
                       "[train]");
    auto& c = cfg.train;
    std::int64_t epochs = c.epochs, batch = c.batch_size, adapter = c.adapter_dim;
    read(*tr, "learning_rate", c.learning_rate, "train");
    read(*tr, "weight_decay", c.weight_decay, "train");
    read(*tr, "threshold", c.threshold, "train");
    read(*tr, "epochs", epochs, "train");
    read(*tr, "batch_size", batch, "train");
    read(*tr, "adapter_dim", adapter, "train");
    read(*tr, "multitask_sequential", c.multitask_sequential, "train");
    c.epochs = static_cast<int>(epochs);
    c.batch_size = static_cast<int>(batch);
    c.adapter_dim = static_cast<int>(adapter);
  }
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig cfg = {}) {
  if (!std::filesystem::is_regular_file(path)) fail(ErrorKind::InvalidArgument, "config file not found: " + path.string());
  try {
    apply_toml(toml::parse_file(path.string()), cfg);
  } catch (const toml::parse_error& e) {
    fail(ErrorKind::InvalidArgument, path.string() + ": " + std::string(e.description()));
  }
  return cfg;
}

inline std::vector<Category> resolve_categories(const RunConfig& cfg) {
  std::vector<Category> out;
  for (const auto& name : cfg.categories) {
    const auto c = parse_category(name);
    if (!c) fail(ErrorKind::InvalidArgument, "unknown category '" + name + "'");
    if (std::find(out.begin(), out.end(), *c) != out.end()) fail(ErrorKind::InvalidArgument, "category listed twice: " + name);
    out.push_back(*c);
  }
  if (out.empty()) out.assign(kAllCategories.begin(), kAllCategories.end());
  return out;
}

/// The resolved config as recorded in run manifests.
inline Json to_json(const RunConfig& cfg) {
  Json paths;
  auto put = [&](const char* key, const std::filesystem::path& p) {
    if (!p.empty()) paths[key] = p.generic_string();
  };
  put("sentences", cfg.sentences);
  put("annotations", cfg.annotations);
  put("gold", cfg.gold);
  put("predictions", cfg.predictions);
  put("split", cfg.split);
  put("models_dir", cfg.models_dir);
  return Json{{"seed", cfg.train.seed},
              {"threads", cfg.threads},
              {"context_window", cfg.context_window},
              {"categories", cfg.categories},
              {"encoders", cfg.encoders},
              {"paths", paths.is_null() ? Json::object() : paths},
              {"train", classify::detail::config_to_json(cfg.train)}};
}

}  // namespace reviewlens::cli
