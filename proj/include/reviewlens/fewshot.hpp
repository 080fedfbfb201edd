#pragma once

#include <atomic>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "reviewlens/category.hpp"
#include "reviewlens/classify/predict.hpp"
#include "reviewlens/classify/train.hpp"
#include "reviewlens/corpus/types.hpp"
#include "reviewlens/error.hpp"
#include "reviewlens/metrics.hpp"
#include "reviewlens/util/http.hpp"
#include "reviewlens/util/sha256.hpp"

namespace reviewlens::fewshot {

inline constexpr const char* kDefaultModel = "Meta-Llama-3-8B-Instruct";
inline constexpr const char* kLlmUrlEnv = "REVIEWLENS_LLM_URL";

struct CategoryPromptSpec {
  Category category{};
  std::string description;
  std::string positive_example;
  std::string negative_example;
};

inline void validate(const CategoryPromptSpec& spec) {
  if (spec.description.empty()) fail(ErrorKind::InvalidArgument, "prompt spec needs a description");
  if (spec.positive_example.empty() || spec.negative_example.empty())
    fail(ErrorKind::InvalidArgument, "prompt spec needs both examples");
  if (spec.positive_example == spec.negative_example)
    fail(ErrorKind::InvalidArgument, "prompt spec examples must differ");
}

/// Codebook description plus examples chosen from unanimously labelled sentences: the positive
/// one is unanimous 1 for the category, the negative one unanimous 0 for all twelve.
inline CategoryPromptSpec make_spec(Category category, const std::vector<corpus::GoldLabel>& golds,
                                    const std::map<std::string, std::string>& text_by_id) {
  CategoryPromptSpec spec{category, std::string(info(category).description), {}, {}};
  for (const auto& g : golds) {
    const auto it = text_by_id.find(g.sentence_id);
    if (it == text_by_id.end()) continue;
    if (spec.positive_example.empty() && g.labels[category] == 1 && g.agreement[category] == corpus::Agreement::Full)
      spec.positive_example = it->second;
    if (spec.negative_example.empty()) {
      bool none = true;
      for (Category c : kAllCategories) none = none && g.labels[c] == 0 && g.agreement[c] == corpus::Agreement::Full;
      if (none) spec.negative_example = it->second;
    }
    if (!spec.positive_example.empty() && !spec.negative_example.empty()) break;
  }
  if (spec.positive_example.empty())
    fail(ErrorKind::InvalidArgument, "no unanimous positive example for " + std::string(codebook_name(category)));
  if (spec.negative_example.empty()) fail(ErrorKind::InvalidArgument, "no unanimous example without any category");
  validate(spec);
  return spec;
}

// ---- prompts

enum class LabelStyle { Digits, YesNo };

struct LabelTokens {
  std::string positive, negative;
};

inline LabelTokens label_tokens(LabelStyle style) {
  return style == LabelStyle::Digits ? LabelTokens{"1", "0"} : LabelTokens{"yes", "no"};
}

struct ChatTurn {
  std::string role;  // system, user or assistant
  std::string content;

  bool operator==(const ChatTurn&) const = default;
};

using PromptMessages = std::vector<ChatTurn>;

inline std::string user_turn(const std::string& sentence) { return "Sentence: " + sentence; }

/// System framing, one positive and one negative exemplar exchange, then the sentence to label.
inline PromptMessages build_prompt(const CategoryPromptSpec& spec, const std::string& sentence,
                                   LabelStyle style = LabelStyle::Digits) {
  validate(spec);
  const auto tokens = label_tokens(style);
  std::string system =
      "You label single sentences taken from peer review reports on grant applications.\n"
      "Category: " + std::string(display_name(spec.category)) + "\n"
      "Description: " + spec.description + "\n"
      "Reply with " + tokens.positive + " if the sentence belongs to this category and with " + tokens.negative +
      " if it does not. Reply with the label only.";
  return {
      {"system", std::move(system)},
      {"user", user_turn(spec.positive_example)},
      {"assistant", tokens.positive},
      {"user", user_turn(spec.negative_example)},
      {"assistant", tokens.negative},
      {"user", user_turn(sentence)},
  };
}

/// Llama 3 instruct chat markup, ending with an open assistant header for generation.
inline std::string serialize_llama3(const PromptMessages& messages) {
  std::string out = "<|begin_of_text|>";
  for (const auto& t : messages)
    out += "<|start_header_id|>" + t.role + "<|end_header_id|>\n\n" + t.content + "<|eot_id|>";
  out += "<|start_header_id|>assistant<|end_header_id|>\n\n";
  return out;
}

/// First whole word equal (case-insensitively) to either label token decides.
inline int parse_label(const std::string& completion, LabelStyle style = LabelStyle::Digits) {
  const auto tokens = label_tokens(style);
  std::string word;
  auto decide = [&]() -> std::optional<int> {
    if (word == tokens.positive) return 1;
    if (word == tokens.negative) return 0;
    return std::nullopt;
  };
  for (char ch : completion + " ") {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      word += static_cast<char>(std::tolower(u));
      continue;
    }
    if (auto v = decide()) return *v;
    word.clear();
  }
  fail(ErrorKind::ParseFailure, "no label in completion '" + completion + "'");
}

// ---- clients

struct GenerationRequest {
  std::string model = kDefaultModel;
  PromptMessages messages;
  double temperature = 0.0;
  int max_tokens = 8;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json msgs = nlohmann::ordered_json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return {{"model", model}, {"messages", std::move(msgs)}, {"temperature", temperature}, {"max_tokens", max_tokens}};
  }
  std::string cache_key() const { return util::sha256_hex(to_json().dump()); }
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Generated text; throws Error(ClientUnavailable) when the backend cannot be reached.
  virtual std::string generate(const GenerationRequest& request) = 0;
};

/// Accepts OpenAI-style chat responses as well as flat {"text"|"generated_text"|"content"} bodies.
inline std::string extract_generated_text(const nlohmann::json& body) {
  if (body.contains("choices") && body["choices"].is_array() && !body["choices"].empty()) {
    const auto& c = body["choices"][0];
    if (c.contains("message") && c["message"].contains("content")) return c["message"]["content"].get<std::string>();
    if (c.contains("text")) return c["text"].get<std::string>();
  }
  for (const char* key : {"text", "generated_text", "content"})
    if (body.contains(key) && body[key].is_string()) return body[key].get<std::string>();
  if (body.is_array() && !body.empty()) return extract_generated_text(body[0]);
  fail(ErrorKind::ClientUnavailable, "response carries no generated text");
}

/// POSTs the request JSON to a local generation endpoint.
class HttpLlmClient : public LlmClient {
 public:
  explicit HttpLlmClient(std::string url, int timeout_seconds = 120) : timeout_(timeout_seconds) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) fail(ErrorKind::InvalidArgument, "LLM url needs a scheme: " + url);
    const auto path = url.find('/', scheme + 3);
    base_ = url.substr(0, path);
    path_ = path == std::string::npos ? "/" : url.substr(path);
  }

  static std::unique_ptr<HttpLlmClient> from_env() {
    const char* url = std::getenv(kLlmUrlEnv);
    if (!url || !*url) fail(ErrorKind::ClientUnavailable, std::string(kLlmUrlEnv) + " is not set");
    return std::make_unique<HttpLlmClient>(url);
  }

  std::string generate(const GenerationRequest& request) override {
    httplib::Client cli(base_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    const auto res = cli.Post(path_, request.to_json().dump(), "application/json");
    if (!res) fail(ErrorKind::ClientUnavailable, "cannot reach " + base_ + path_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
      fail(ErrorKind::ClientUnavailable, base_ + path_ + " answered HTTP " + std::to_string(res->status));
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ClientUnavailable, std::string("response is not JSON: ") + e.what());
    }
    return extract_generated_text(body);
  }

 private:
  std::string base_, path_;
  int timeout_;
};

/// Memoizes completions by request hash. Concurrent identical requests share one inner call.
/// With a path, completions are appended to a JSONL file and reloaded on construction.
class CachingClient : public LlmClient {
 public:
  explicit CachingClient(LlmClient& inner, std::optional<std::filesystem::path> path = std::nullopt)
      : inner_(inner), path_(std::move(path)) {
    if (!path_ || !std::filesystem::exists(*path_)) return;
    std::ifstream in(*path_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("key") || !j.contains("completion")) continue;
      std::promise<std::string> p;
      p.set_value(j["completion"].get<std::string>());
      entries_[j["key"].get<std::string>()] = p.get_future().share();
    }
  }

  std::string generate(const GenerationRequest& request) override {
    const auto key = request.cache_key();
    std::promise<std::string> mine;
    std::shared_future<std::string> fut;
    bool owner = false;
    {
      std::lock_guard lock(mu_);
      auto it = entries_.find(key);
      if (it == entries_.end()) {
        fut = mine.get_future().share();
        entries_.emplace(key, fut);
        owner = true;
      } else {
        fut = it->second;
      }
    }
    if (!owner) return fut.get();
    try {
      auto text = inner_.generate(request);
      ++misses_;
      mine.set_value(text);
      if (path_) {
        std::lock_guard lock(mu_);
        std::ofstream out(*path_, std::ios::app);
        out << nlohmann::json{{"key", key}, {"completion", text}}.dump() << '\n';
      }
      return text;
    } catch (...) {
      {
        std::lock_guard lock(mu_);
        entries_.erase(key);  // failures are not cached
      }
      mine.set_exception(std::current_exception());
      throw;
    }
  }

  long long inner_calls() const { return misses_.load(); }

 private:
  LlmClient& inner_;
  std::optional<std::filesystem::path> path_;
  std::mutex mu_;
  std::map<std::string, std::shared_future<std::string>> entries_;
  std::atomic<long long> misses_{0};
};

// ---- batch classification

struct FewshotOptions {
  std::string model = kDefaultModel;
  double temperature = 0.0;
  int max_tokens = 8;
  LabelStyle style = LabelStyle::Digits;
  unsigned max_inflight = 1;
  bool evaluate = true;  // items carry gold labels
};

struct FewshotResult {
  classify::PredictionSet predictions;
  PerCategory<std::optional<metrics::EvalReport>> reports;
  PerCategory<long long> parse_failures;
  PerCategory<long long> client_failures;
};

/// One generation per (category, item). Unparseable or failed generations count as label 0 and
/// are logged; the run only aborts when no request succeeded at all.
inline FewshotResult classify_fewshot(LlmClient& client, const std::vector<CategoryPromptSpec>& specs,
                                      std::span<const classify::LabeledText> items, const FewshotOptions& opt = {}) {
  for (const auto& s : specs) validate(s);
  FewshotResult result;
  result.predictions.resize(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) result.predictions[i].sentence_id = items[i].id;
  const std::size_t total = specs.size() * items.size();
  std::atomic<std::size_t> next{0};
  std::atomic<long long> succeeded{0};
  std::mutex mu;
  std::optional<std::string> last_error;

  auto worker = [&] {
    for (std::size_t job = next++; job < total; job = next++) {
      const auto& spec = specs[job / items.size()];
      const std::size_t i = job % items.size();
      GenerationRequest req{opt.model, build_prompt(spec, items[i].text, opt.style), opt.temperature, opt.max_tokens};
      int label = 0;
      try {
        const auto text = client.generate(req);
        ++succeeded;
        try {
          label = parse_label(text, opt.style);
        } catch (const Error&) {
          spdlog::warn("fewshot: unparseable completion for {} / {}: '{}'", items[i].id, codebook_name(spec.category), text);
          std::lock_guard lock(mu);
          result.parse_failures[spec.category] += 1;
        }
      } catch (const Error& e) {
        spdlog::warn("fewshot: generation failed for {} / {}: {}", items[i].id, codebook_name(spec.category), e.what());
        std::lock_guard lock(mu);
        result.client_failures[spec.category] += 1;
        last_error = e.what();
      }
      std::lock_guard lock(mu);
      result.predictions[i].by_category[spec.category] = classify::Prediction{static_cast<double>(label), label};
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(opt.max_inflight, static_cast<unsigned>(std::max<std::size_t>(1, total))));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (total > 0 && succeeded == 0)
    fail(ErrorKind::ClientUnavailable, "every generation request failed" + (last_error ? ": " + *last_error : ""));

  if (opt.evaluate && !items.empty()) {
    for (const auto& spec : specs) {
      std::vector<int> y, p;
      for (std::size_t i = 0; i < items.size(); ++i) {
        y.push_back(items[i].labels[spec.category]);
        p.push_back(result.predictions[i].by_category[spec.category]->label);
      }
      result.reports[spec.category] = metrics::evaluate(y, p);
    }
  }
  return result;
}

}  // namespace reviewlens::fewshot
