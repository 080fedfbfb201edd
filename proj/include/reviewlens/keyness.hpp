#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "reviewlens/category.hpp"
#include "reviewlens/error.hpp"
#include "reviewlens/metrics.hpp"

namespace reviewlens::keyness {

using TokenStream = std::vector<std::string>;

inline constexpr long long kDefaultMinCount = 10;
inline constexpr double kDefaultZThreshold = 3.0;
inline constexpr std::size_t kDefaultTopK = 25;
// Added to every cell of the collocation contingency table.
inline constexpr double kCollocationSmoothing = 0.5;

namespace detail {

inline bool word_byte(unsigned char ch) { return std::isalnum(ch) || ch >= 0x80; }

}  // namespace detail

/// Lowercased word tokens. Hyphens and apostrophes survive between word characters, and a dot
/// between digits ("3.5"); every other punctuation mark separates tokens. "[UNK]" becomes "unk".
inline TokenStream tokenize(std::string_view text) {
  TokenStream out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto ch = static_cast<unsigned char>(text[i]);
    if (detail::word_byte(ch)) {
      cur += static_cast<char>(std::tolower(ch));
      continue;
    }
    const bool joiner = ch == '-' || ch == '\'' ||
                        (ch == '.' && !cur.empty() && std::isdigit(static_cast<unsigned char>(cur.back())) &&
                         i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1])));
    if (joiner && !cur.empty() && i + 1 < text.size() && detail::word_byte(static_cast<unsigned char>(text[i + 1]))) {
      cur += static_cast<char>(ch);
      continue;
    }
    flush();
  }
  flush();
  return out;
}

// ---- collocations

struct MultiwordExpression {
  std::vector<std::string> tokens;
  long long count = 0;
  double lambda = 0;
  double sigma = 0;
  double z = 0;

  std::string joined() const {
    std::string s;
    for (const auto& t : tokens) s += (s.empty() ? "" : "_") + t;
    return s;
  }
  bool operator==(const MultiwordExpression&) const = default;
};

struct CollocationOptions {
  long long min_count = kDefaultMinCount;
  double z_threshold = kDefaultZThreshold;
  std::size_t max_size = 3;  // 2 = bigrams only
};

/// Log-odds ratio of a smoothed 2x2 adjacency table, indexed by (first matches) | (second matches) << 1,
/// with sigma = sqrt(sum 1/n) and z = lambda / sigma.
inline void score_table(const std::array<double, 4>& table, MultiwordExpression& mwe) {
  double n[4];
  double inv = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    n[i] = table[i] + kCollocationSmoothing;
    inv += 1.0 / n[i];
  }
  mwe.lambda = std::log(n[3]) + std::log(n[0]) - std::log(n[1]) - std::log(n[2]);
  mwe.sigma = std::sqrt(inv);
  mwe.z = mwe.lambda / mwe.sigma;
}

namespace detail {

struct NgramKeyHash {
  std::size_t operator()(const std::vector<std::string>& v) const {
    std::size_t h = 0;
    for (const auto& s : v) h = h * 1000003u ^ std::hash<std::string>{}(s);
    return h;
  }
};

using NgramCounts = std::unordered_map<std::vector<std::string>, long long, NgramKeyHash>;

// Counts of every sub-pattern of each window. Key: (mask, words-at-mask-slots).
struct WindowCounts {
  std::size_t size = 0;
  long long windows = 0;
  std::vector<NgramCounts> by_mask;  // index = slot mask

  explicit WindowCounts(std::size_t k) : size(k), by_mask(std::size_t{1} << k) {}

  void add(const TokenStream& s) {
    if (s.size() < size) return;
    for (std::size_t i = 0; i + size <= s.size(); ++i) {
      ++windows;
      for (std::size_t mask = 1; mask < by_mask.size(); ++mask) {
        std::vector<std::string> key;
        for (std::size_t j = 0; j < size; ++j)
          if (mask & (std::size_t{1} << j)) key.push_back(s[i + j]);
        ++by_mask[mask][key];
      }
    }
  }

  long long count(std::size_t mask, const std::vector<std::string>& words) const {
    if (mask == 0) return windows;
    std::vector<std::string> key;
    for (std::size_t j = 0; j < size; ++j)
      if (mask & (std::size_t{1} << j)) key.push_back(words[j]);
    const auto it = by_mask[mask].find(key);
    return it == by_mask[mask].end() ? 0 : it->second;
  }
};

// 2x2 table for a window split into a left part (slots in `left`) and the remaining slots.
inline std::array<double, 4> split_table(const WindowCounts& wc, const std::vector<std::string>& words, std::size_t left) {
  const std::size_t all = (std::size_t{1} << wc.size) - 1, right = all & ~left;
  const auto both = static_cast<double>(wc.count(all, words));
  const auto l = static_cast<double>(wc.count(left, words));
  const auto r = static_cast<double>(wc.count(right, words));
  const auto n = static_cast<double>(wc.windows);
  return {n - l - r + both, l - both, r - both, both};
}

}  // namespace detail

/// Adjacent n-grams (n = 2..max_size) within each stream, scored by the z statistic of the
/// adjacency log-odds. A trigram is scored on both of its binary splits and keeps the weaker one.
/// Sorted by z descending, then joined form.
inline std::vector<MultiwordExpression> detect_collocations(const std::vector<TokenStream>& streams,
                                                            const CollocationOptions& opt = {}) {
  if (streams.empty()) fail(ErrorKind::InvalidArgument, "no token streams");
  if (opt.max_size < 2 || opt.max_size > 3) fail(ErrorKind::InvalidArgument, "collocation size must be 2 or 3");
  std::vector<MultiwordExpression> found;
  for (std::size_t k = 2; k <= opt.max_size; ++k) {
    detail::WindowCounts wc(k);
    for (const auto& s : streams) wc.add(s);
    const std::size_t full = (std::size_t{1} << k) - 1;
    for (const auto& [words, count] : wc.by_mask[full]) {
      if (count < opt.min_count) continue;
      MultiwordExpression mwe{words, count};
      score_table(detail::split_table(wc, words, 1), mwe);
      if (k == 3) {
        MultiwordExpression other = mwe;
        score_table(detail::split_table(wc, words, 3), other);
        if (other.z < mwe.z) mwe = other;
      }
      if (mwe.z >= opt.z_threshold) found.push_back(std::move(mwe));
    }
  }
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) {
    if (a.z != b.z) return a.z > b.z;
    return a.joined() < b.joined();
  });
  return found;
}

/// Rewrites detected expressions as single underscore-joined tokens, scanning left to right and
/// preferring the longest match at each position.
inline std::vector<TokenStream> apply_collocations(const std::vector<TokenStream>& streams,
                                                   const std::vector<MultiwordExpression>& mwes) {
  std::set<std::vector<std::string>> known;
  std::size_t longest = 1;
  for (const auto& m : mwes) {
    known.insert(m.tokens);
    longest = std::max(longest, m.tokens.size());
  }
  std::vector<TokenStream> out;
  out.reserve(streams.size());
  for (const auto& s : streams) {
    TokenStream r;
    for (std::size_t i = 0; i < s.size();) {
      std::size_t taken = 1;
      for (std::size_t len = std::min(longest, s.size() - i); len >= 2; --len) {
        if (known.count(std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                 s.begin() + static_cast<std::ptrdiff_t>(i + len)))) {
          taken = len;
          break;
        }
      }
      std::string tok = s[i];
      for (std::size_t j = 1; j < taken; ++j) tok += "_" + s[i + j];
      r.push_back(std::move(tok));
      i += taken;
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---- chi-squared keyness

enum class Direction { Target, Reference };

inline std::string_view to_string(Direction d) { return d == Direction::Target ? "target" : "reference"; }

struct KeynessResult {
  std::string term;
  double chi2 = 0;
  Direction direction = Direction::Reference;
  long long freq_target = 0;
  long long freq_reference = 0;

  bool operator==(const KeynessResult&) const = default;
};

using DocFreqs = std::map<std::string, long long>;

/// 2x2 statistic N(ad-bc)^2 / ((a+b)(c+d)(a+c)(b+d)); 0 when a margin is empty.
inline double chi2_2x2(long long a, long long b, long long c, long long d, bool yates = false) {
  const double n = static_cast<double>(a + b + c + d);
  const double denom = static_cast<double>(a + b) * static_cast<double>(c + d) * static_cast<double>(a + c) *
                       static_cast<double>(b + d);
  if (denom == 0) return 0.0;
  double diff = std::abs(static_cast<double>(a) * static_cast<double>(d) - static_cast<double>(b) * static_cast<double>(c));
  if (yates) diff = std::max(0.0, diff - n / 2.0);
  return n * diff * diff / denom;
}

/// Ranked keyness: target-direction terms first by chi2 descending, ties broken by higher target
/// frequency then term; reference-direction terms follow in the same order.
inline std::vector<KeynessResult> keyness_chi2(const DocFreqs& target, const DocFreqs& reference, long long n_target,
                                               long long n_reference, bool yates = false) {
  if (n_target <= 0) fail(ErrorKind::EmptyGroup, "target group is empty");
  if (n_reference <= 0) fail(ErrorKind::EmptyGroup, "reference group is empty");
  std::set<std::string> terms;
  for (const auto& [t, f] : target) terms.insert(t);
  for (const auto& [t, f] : reference) terms.insert(t);
  std::vector<KeynessResult> out;
  out.reserve(terms.size());
  for (const auto& term : terms) {
    const auto it = target.find(term);
    const auto ir = reference.find(term);
    const long long a = it == target.end() ? 0 : it->second;
    const long long c = ir == reference.end() ? 0 : ir->second;
    if (a < 0 || a > n_target || c < 0 || c > n_reference)
      fail(ErrorKind::InvalidArgument, "document frequency of '" + term + "' exceeds its group size");
    KeynessResult r;
    r.term = term;
    r.freq_target = a;
    r.freq_reference = c;
    r.chi2 = chi2_2x2(a, n_target - a, c, n_reference - c, yates);
    // a > (a+c) n_target / N, compared in integers.
    r.direction = a * (n_target + n_reference) > (a + c) * n_target ? Direction::Target : Direction::Reference;
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const KeynessResult& x, const KeynessResult& y) {
    if (x.direction != y.direction) return x.direction == Direction::Target;
    if (x.chi2 != y.chi2) return x.chi2 > y.chi2;
    if (x.freq_target != y.freq_target) return x.freq_target > y.freq_target;
    return x.term < y.term;
  });
  return out;
}

inline std::vector<KeynessResult> top_terms(const std::vector<KeynessResult>& ranked, std::size_t k = kDefaultTopK) {
  std::vector<KeynessResult> out;
  for (const auto& r : ranked) {
    if (out.size() == k) break;
    if (r.direction == Direction::Target) out.push_back(r);
  }
  return out;
}

// ---- grouping

struct GroupedFreqs {
  DocFreqs target, reference;
  long long n_target = 0, n_reference = 0;
};

namespace detail {

inline void count_docs(const std::vector<TokenStream>& docs, const std::vector<int>& in_target, std::size_t begin,
                       std::size_t end, GroupedFreqs& g) {
  for (std::size_t i = begin; i < end; ++i) {
    const std::set<std::string> unique(docs[i].begin(), docs[i].end());
    auto& freqs = in_target[i] ? g.target : g.reference;
    (in_target[i] ? g.n_target : g.n_reference) += 1;
    for (const auto& t : unique) ++freqs[t];
  }
}

}  // namespace detail

/// Document frequencies per group; a document is one sentence. Shards are merged by addition.
inline GroupedFreqs group_doc_freqs(const std::vector<TokenStream>& docs, const std::vector<int>& in_target,
                                    unsigned threads = 1) {
  if (docs.size() != in_target.size()) fail(ErrorKind::InvalidArgument, "documents and group flags differ in length");
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, docs.size() / 1000))));
  std::vector<GroupedFreqs> shards(threads);
  std::vector<std::thread> pool;
  const std::size_t chunk = (docs.size() + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t b = std::min(docs.size(), t * chunk), e = std::min(docs.size(), b + chunk);
    if (threads == 1) detail::count_docs(docs, in_target, b, e, shards[t]);
    else pool.emplace_back([&, b, e, t] { detail::count_docs(docs, in_target, b, e, shards[t]); });
  }
  for (auto& th : pool) th.join();
  GroupedFreqs out = std::move(shards[0]);
  for (std::size_t t = 1; t < shards.size(); ++t) {
    out.n_target += shards[t].n_target;
    out.n_reference += shards[t].n_reference;
    for (const auto& [k, v] : shards[t].target) out.target[k] += v;
    for (const auto& [k, v] : shards[t].reference) out.reference[k] += v;
  }
  return out;
}

struct KeynessOptions {
  bool collocations = true;
  CollocationOptions collocation;
  bool yates = false;
  std::size_t k = kDefaultTopK;
  unsigned threads = 1;
};

struct CategoryKeyness {
  Category category{};
  std::vector<MultiwordExpression> collocations;
  std::vector<KeynessResult> top;
};

/// Tokenize, join collocations found over the whole corpus, then rank terms of sentences
/// predicted positive against the rest.
inline CategoryKeyness category_keyness(const std::vector<std::string>& texts, const std::vector<int>& predicted,
                                        Category category, const KeynessOptions& opt = {}) {
  std::vector<TokenStream> docs;
  docs.reserve(texts.size());
  for (const auto& t : texts) docs.push_back(tokenize(t));
  CategoryKeyness out;
  out.category = category;
  if (opt.collocations && !docs.empty()) {
    out.collocations = detect_collocations(docs, opt.collocation);
    docs = apply_collocations(docs, out.collocations);
  }
  const auto g = group_doc_freqs(docs, predicted, opt.threads);
  out.top = top_terms(keyness_chi2(g.target, g.reference, g.n_target, g.n_reference, opt.yates), opt.k);
  return out;
}

inline void write_keyness_csv(std::ostream& out, const std::vector<CategoryKeyness>& rows) {
  out << "category,rank,term,chi2,freq_target,freq_reference\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.top.size(); ++i) {
      const auto& r = row.top[i];
      out << codebook_name(row.category) << ',' << i + 1 << ',' << r.term << ',' << metrics::format_number(r.chi2) << ','
          << r.freq_target << ',' << r.freq_reference << '\n';
    }
  }
}

}  // namespace reviewlens::keyness
