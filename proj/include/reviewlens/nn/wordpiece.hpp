#pragma once

#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "reviewlens/error.hpp"

namespace reviewlens::nn {

/// BERT-style tokenizer: whitespace/punctuation pre-split, optional ASCII lowercasing, then greedy
/// longest-match WordPiece with "##" continuations. Special tokens written literally in the text
/// (e.g. the "[UNK]" anonymization placeholder or a "[SEP]" context separator) map to their ids.
class WordPieceTokenizer {
 public:
  static constexpr std::array<std::string_view, 5> kSpecialTokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                                   "[MASK]"};

  WordPieceTokenizer() = default;

  WordPieceTokenizer(std::vector<std::string> vocab, bool lowercase = true)
      : vocab_(std::move(vocab)), lowercase_(lowercase) {
    for (std::size_t i = 0; i < vocab_.size(); ++i) ids_.emplace(vocab_[i], static_cast<int>(i));
    unk_id_ = require("[UNK]");
    cls_id_ = require("[CLS]");
    sep_id_ = require("[SEP]");
    if (auto it = ids_.find("[PAD]"); it != ids_.end()) pad_id_ = it->second;
  }

  static WordPieceTokenizer from_file(const std::filesystem::path& vocab_path, bool lowercase = true) {
    std::ifstream in(vocab_path);
    if (!in) fail(ErrorKind::Io, "cannot open vocabulary " + vocab_path.string());
    std::vector<std::string> vocab;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      vocab.push_back(line);
    }
    return WordPieceTokenizer(std::move(vocab), lowercase);
  }

  void save(const std::filesystem::path& vocab_path) const {
    std::ofstream out(vocab_path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write vocabulary " + vocab_path.string());
    for (const auto& tok : vocab_) out << tok << '\n';
  }

  std::size_t vocab_size() const { return vocab_.size(); }
  bool lowercase() const { return lowercase_; }
  int cls_id() const { return cls_id_; }
  int sep_id() const { return sep_id_; }
  int unk_id() const { return unk_id_; }
  int pad_id() const { return pad_id_; }
  const std::string& token(int id) const { return vocab_.at(static_cast<std::size_t>(id)); }

  std::vector<std::string> basic_tokenize(std::string_view text) const {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    };
    for (std::size_t i = 0; i < text.size();) {
      if (text[i] == '[') {
        bool matched = false;
        for (std::string_view special : kSpecialTokens) {
          if (text.substr(i, special.size()) == special) {
            flush();
            words.emplace_back(special);
            i += special.size();
            matched = true;
            break;
          }
        }
        if (matched) continue;
      }
      const auto c = static_cast<unsigned char>(text[i]);
      if (std::isspace(c) || std::iscntrl(c)) {
        flush();
      } else if (c < 0x80 && std::ispunct(c)) {
        flush();
        words.emplace_back(1, static_cast<char>(c));
      } else {
        current.push_back(lowercase_ && c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
      }
      ++i;
    }
    flush();
    return words;
  }

  std::vector<int> word_pieces(const std::string& word) const {
    if (auto it = ids_.find(word); it != ids_.end()) return {it->second};
    if (word.size() > kMaxWordBytes) return {unk_id_};
    std::vector<int> pieces;
    std::size_t start = 0;
    while (start < word.size()) {
      std::size_t end = word.size();
      int found = -1;
      while (start < end) {
        std::string candidate = (start > 0 ? "##" : "") + word.substr(start, end - start);
        if (auto it = ids_.find(candidate); it != ids_.end()) {
          found = it->second;
          break;
        }
        --end;
      }
      if (found < 0) return {unk_id_};
      pieces.push_back(found);
      start = end;
    }
    return pieces;
  }

  /// Ids without special framing.
  std::vector<int> tokenize_ids(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& word : basic_tokenize(text)) {
      const auto pieces = word_pieces(word);
      ids.insert(ids.end(), pieces.begin(), pieces.end());
    }
    return ids;
  }

  /// [CLS] tokens [SEP], tail-truncated so the whole sequence fits in max_tokens.
  std::vector<int> encode(std::string_view text, int max_tokens) const {
    if (max_tokens < 2) fail(ErrorKind::InvalidArgument, "max_tokens must leave room for [CLS] and [SEP]");
    std::vector<int> body = tokenize_ids(text);
    const auto limit = static_cast<std::size_t>(max_tokens - 2);
    if (body.size() > limit) body.resize(limit);
    std::vector<int> ids;
    ids.reserve(body.size() + 2);
    ids.push_back(cls_id_);
    ids.insert(ids.end(), body.begin(), body.end());
    ids.push_back(sep_id_);
    return ids;
  }

 private:
  static constexpr std::size_t kMaxWordBytes = 100;

  int require(const std::string& tok) const {
    auto it = ids_.find(tok);
    if (it == ids_.end()) fail(ErrorKind::MalformedRecord, "vocabulary lacks " + tok);
    return it->second;
  }

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
  bool lowercase_ = true;
  int unk_id_ = 0, cls_id_ = 0, sep_id_ = 0, pad_id_ = 0;
};

}  // namespace reviewlens::nn
