#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "reviewlens/error.hpp"
#include "reviewlens/nn/bert.hpp"
#include "reviewlens/nn/safetensors.hpp"
#include "reviewlens/nn/wordpiece.hpp"

namespace reviewlens::classify {

using Scalar = float;
using Embedding = nn::RowVector<Scalar>;

inline constexpr int kDefaultMaxTokens = 512;

/// A loaded encoder checkpoint: weights, tokenizer, and the truncation length applied to inputs.
struct EncoderModel {
  std::string model_id;
  nn::BertEncoder<Scalar> network;
  nn::WordPieceTokenizer tokenizer;
  int max_tokens = kDefaultMaxTokens;

  int hidden_dim() const { return network.hidden_size(); }

  std::vector<int> token_ids(std::string_view text) const { return tokenizer.encode(text, max_tokens); }

  /// Separator placed between sentences of a context window.
  std::string separator() const { return " [SEP] "; }
};

/// Metadata in an HF-style config.json, without touching the weights.
inline nn::BertConfig read_encoder_config(const std::filesystem::path& config_path) {
  std::ifstream in(config_path);
  if (!in) fail(ErrorKind::Io, "cannot open " + config_path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(ErrorKind::MalformedRecord, "unparseable " + config_path.string());
  if (j.contains("model_type")) {
    const auto type = j["model_type"].get<std::string>();
    if (type != "bert") fail(ErrorKind::InvalidArgument, "unsupported model_type '" + type + "' (BERT family only)");
  }
  nn::BertConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.hidden_size = j.at("hidden_size").get<int>();
  cfg.num_hidden_layers = j.at("num_hidden_layers").get<int>();
  cfg.num_attention_heads = j.at("num_attention_heads").get<int>();
  cfg.intermediate_size = j.at("intermediate_size").get<int>();
  cfg.max_position_embeddings = j.value("max_position_embeddings", 512);
  cfg.type_vocab_size = j.value("type_vocab_size", 2);
  cfg.layer_norm_eps = j.value("layer_norm_eps", 1e-12);
  if (j.value("hidden_act", std::string("gelu")) != "gelu") {
    fail(ErrorKind::InvalidArgument, "only the exact GELU activation is supported");
  }
  cfg.validate();
  return cfg;
}

inline nlohmann::ordered_json encoder_config_json(const nn::BertConfig& cfg) {
  return {{"model_type", "bert"},
          {"vocab_size", cfg.vocab_size},
          {"hidden_size", cfg.hidden_size},
          {"num_hidden_layers", cfg.num_hidden_layers},
          {"num_attention_heads", cfg.num_attention_heads},
          {"intermediate_size", cfg.intermediate_size},
          {"max_position_embeddings", cfg.max_position_embeddings},
          {"type_vocab_size", cfg.type_vocab_size},
          {"layer_norm_eps", cfg.layer_norm_eps},
          {"hidden_act", "gelu"}};
}

namespace detail {

inline const nn::TensorData* find_tensor(const std::map<std::string, nn::TensorData>& tensors, const std::string& name) {
  static constexpr std::string_view kPrefixes[] = {"", "bert.", "model."};
  for (auto prefix : kPrefixes) {
    std::string key = std::string(prefix) + name;
    if (auto it = tensors.find(key); it != tensors.end()) return &it->second;
    // Older checkpoints name LayerNorm parameters gamma/beta.
    if (key.ends_with("LayerNorm.weight")) key.replace(key.size() - 6, 6, "gamma");
    else if (key.ends_with("LayerNorm.bias")) key.replace(key.size() - 4, 4, "beta");
    else continue;
    if (auto it = tensors.find(key); it != tensors.end()) return &it->second;
  }
  return nullptr;
}

}  // namespace detail

/// Resolves `model_id` under `models_dir` (ids may contain '/', e.g. "allenai/specter2_base").
/// No network access: a missing directory is ModelNotFound, an incomplete one OfflineCacheMiss.
inline EncoderModel load_encoder(const std::filesystem::path& models_dir, const std::string& model_id,
                                 int max_tokens = kDefaultMaxTokens) {
  const auto dir = models_dir / model_id;
  if (!std::filesystem::is_directory(dir)) {
    fail(ErrorKind::ModelNotFound, "no model '" + model_id + "' under " + models_dir.string());
  }
  for (const char* required : {"config.json", "vocab.txt", "model.safetensors"}) {
    if (!std::filesystem::exists(dir / required)) {
      fail(ErrorKind::OfflineCacheMiss, "model '" + model_id + "' is missing " + required +
                                            " and cannot be fetched offline");
    }
  }
  const nn::BertConfig cfg = read_encoder_config(dir / "config.json");
  bool lowercase = true;
  if (std::ifstream tc(dir / "tokenizer_config.json"); tc) {
    const auto j = nlohmann::json::parse(tc, nullptr, false);
    if (!j.is_discarded()) lowercase = j.value("do_lower_case", true);
  }

  EncoderModel model;
  model.model_id = model_id;
  model.tokenizer = nn::WordPieceTokenizer::from_file(dir / "vocab.txt", lowercase);
  if (static_cast<int>(model.tokenizer.vocab_size()) > cfg.vocab_size) {
    fail(ErrorKind::MalformedRecord, "vocabulary larger than the embedding table");
  }
  model.network = nn::BertEncoder<Scalar>(cfg);
  model.max_tokens = std::min(max_tokens, cfg.max_position_embeddings);

  const auto tensors = nn::read_safetensors(dir / "model.safetensors");
  for (nn::Param<Scalar>* p : model.network.parameters()) {
    const nn::TensorData* t = detail::find_tensor(tensors, p->name);
    if (t == nullptr) fail(ErrorKind::MalformedRecord, "checkpoint lacks tensor " + p->name);
    const auto expected = static_cast<std::size_t>(p->value.size());
    if (t->values.size() != expected) fail(ErrorKind::MalformedRecord, "shape mismatch for " + p->name);
    std::copy(t->values.begin(), t->values.end(), p->value.data());
  }
  return model;
}

/// Writes config.json, vocab.txt and model.safetensors into `dir`.
inline void save_encoder(const EncoderModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "config.json");
    out << encoder_config_json(model.network.config()).dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "tokenizer_config.json");
    out << nlohmann::ordered_json{{"do_lower_case", model.tokenizer.lowercase()}}.dump(2) << '\n';
  }
  model.tokenizer.save(dir / "vocab.txt");
  std::map<std::string, nn::TensorData> tensors;
  for (const nn::Param<Scalar>* p : model.network.parameters()) {
    nn::TensorData t;
    // Biases and norms are 1-D in torch checkpoints.
    if (p->value.rows() == 1 && !p->decay) t.shape = {p->value.cols()};
    else t.shape = {p->value.rows(), p->value.cols()};
    t.values.assign(p->value.data(), p->value.data() + p->value.size());
    tensors.emplace(p->name, std::move(t));
  }
  nn::write_safetensors(dir / "model.safetensors", tensors);
}

/// CLS embeddings, one per text, in inference mode (no dropout, so repeatable).
inline std::vector<Embedding> encode_batch(const EncoderModel& encoder, const std::vector<std::string>& texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& text : texts) out.push_back(encoder.network.pooled(encoder.token_ids(text)));
  return out;
}

/// Small randomly initialized encoder for tests and smoke runs. Weights use a wide N(0, 0.2)
/// so token content reaches the CLS position without pre-training.
inline EncoderModel make_fixture_encoder(const std::vector<std::string>& words, std::uint64_t seed,
                                         int hidden = 32, int layers = 2, int heads = 2, int max_tokens = 64) {
  std::vector<std::string> vocab(nn::WordPieceTokenizer::kSpecialTokens.begin(),
                                 nn::WordPieceTokenizer::kSpecialTokens.end());
  for (char c : std::string_view(".,;:!?()'\"-/%")) vocab.emplace_back(1, c);
  for (const auto& w : words) {
    if (std::find(vocab.begin(), vocab.end(), w) == vocab.end()) vocab.push_back(w);
  }
  nn::BertConfig cfg;
  cfg.vocab_size = static_cast<int>(vocab.size());
  cfg.hidden_size = hidden;
  cfg.num_hidden_layers = layers;
  cfg.num_attention_heads = heads;
  cfg.intermediate_size = 4 * hidden;
  cfg.max_position_embeddings = max_tokens;
  cfg.type_vocab_size = 2;
  EncoderModel model;
  model.model_id = "fixture/tiny-bert";
  model.network = nn::BertEncoder<Scalar>::random(cfg, seed, 0.2);
  model.tokenizer = nn::WordPieceTokenizer(std::move(vocab), true);
  model.max_tokens = max_tokens;
  return model;
}

}  // namespace reviewlens::classify
