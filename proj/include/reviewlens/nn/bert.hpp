#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "reviewlens/error.hpp"
#include "reviewlens/nn/layers.hpp"

namespace reviewlens::nn {

/// Architecture hyperparameters of a BERT-family encoder (names follow config.json).
struct BertConfig {
  int vocab_size = 0;
  int hidden_size = 768;
  int num_hidden_layers = 12;
  int num_attention_heads = 12;
  int intermediate_size = 3072;
  int max_position_embeddings = 512;
  int type_vocab_size = 2;
  double layer_norm_eps = 1e-12;

  int head_dim() const { return hidden_size / num_attention_heads; }

  void validate() const {
    if (vocab_size <= 0 || hidden_size <= 0 || num_hidden_layers <= 0 || num_attention_heads <= 0 ||
        intermediate_size <= 0 || max_position_embeddings <= 0 || type_vocab_size <= 0) {
      fail(ErrorKind::InvalidArgument, "encoder config has non-positive dimensions");
    }
    if (hidden_size % num_attention_heads != 0) {
      fail(ErrorKind::InvalidArgument, "hidden_size must be divisible by num_attention_heads");
    }
  }
};

template <typename T>
struct SelfAttention {
  Linear<T> query, key, value, output;
  LayerNorm<T> norm;
  int heads = 1;

  struct Cache {
    Matrix<T> input, q, k, v, context;
    std::vector<Matrix<T>> probs;
    typename LayerNorm<T>::Cache norm;
  };

  SelfAttention() = default;
  SelfAttention(const std::string& prefix, const BertConfig& cfg)
      : query(prefix + ".attention.self.query", cfg.hidden_size, cfg.hidden_size),
        key(prefix + ".attention.self.key", cfg.hidden_size, cfg.hidden_size),
        value(prefix + ".attention.self.value", cfg.hidden_size, cfg.hidden_size),
        output(prefix + ".attention.output.dense", cfg.hidden_size, cfg.hidden_size),
        norm(prefix + ".attention.output.LayerNorm", cfg.hidden_size, static_cast<T>(cfg.layer_norm_eps)),
        heads(cfg.num_attention_heads) {}

  Matrix<T> forward(const Matrix<T>& x, Cache* cache) const {
    const Eigen::Index d = x.cols();
    const Eigen::Index dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Matrix<T> q = query.forward(x);
    Matrix<T> k = key.forward(x);
    Matrix<T> v = value.forward(x);
    Matrix<T> context(x.rows(), d);
    std::vector<Matrix<T>> probs;
    if (cache != nullptr) probs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.middleCols(h * dh, dh);
      const auto kh = k.middleCols(h * dh, dh);
      const auto vh = v.middleCols(h * dh, dh);
      Matrix<T> p = softmax_rows<T>((qh * kh.transpose()) * scale);
      context.middleCols(h * dh, dh).noalias() = p * vh;
      if (cache != nullptr) probs.push_back(std::move(p));
    }
    Matrix<T> attended = output.forward(context) + x;
    Matrix<T> y = norm.forward(attended, cache ? &cache->norm : nullptr);
    if (cache != nullptr) {
      cache->input = x;
      cache->q = std::move(q);
      cache->k = std::move(k);
      cache->v = std::move(v);
      cache->context = std::move(context);
      cache->probs = std::move(probs);
    }
    return y;
  }

  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy) {
    const Eigen::Index d = cache.input.cols();
    const Eigen::Index dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const Matrix<T> d_attended = norm.backward(cache.norm, dy);
    Matrix<T> dx = d_attended;  // residual
    const Matrix<T> d_context = output.backward(cache.context, d_attended);
    Matrix<T> dq(cache.q.rows(), d), dk(cache.k.rows(), d), dv(cache.v.rows(), d);
    for (int h = 0; h < heads; ++h) {
      const auto qh = cache.q.middleCols(h * dh, dh);
      const auto kh = cache.k.middleCols(h * dh, dh);
      const auto vh = cache.v.middleCols(h * dh, dh);
      const Matrix<T>& p = cache.probs[h];
      const Matrix<T> dctx = d_context.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * dctx;
      const Matrix<T> dp = dctx * vh.transpose();
      Matrix<T> ds(p.rows(), p.cols());
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const T inner = dp.row(r).dot(p.row(r));
        ds.row(r) = (p.row(r).array() * (dp.row(r).array() - inner)).matrix();
      }
      ds *= scale;
      dq.middleCols(h * dh, dh).noalias() = ds * kh;
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qh;
    }
    dx += query.backward(cache.input, dq);
    dx += key.backward(cache.input, dk);
    dx += value.backward(cache.input, dv);
    return dx;
  }

  void collect(std::vector<Param<T>*>& out) {
    query.collect(out);
    key.collect(out);
    value.collect(out);
    output.collect(out);
    norm.collect(out);
  }
};

template <typename T>
struct FeedForward {
  Linear<T> intermediate, output;
  LayerNorm<T> norm;

  struct Cache {
    Matrix<T> input, pre_activation, activation;
    typename LayerNorm<T>::Cache norm;
  };

  FeedForward() = default;
  FeedForward(const std::string& prefix, const BertConfig& cfg)
      : intermediate(prefix + ".intermediate.dense", cfg.hidden_size, cfg.intermediate_size),
        output(prefix + ".output.dense", cfg.intermediate_size, cfg.hidden_size),
        norm(prefix + ".output.LayerNorm", cfg.hidden_size, static_cast<T>(cfg.layer_norm_eps)) {}

  Matrix<T> forward(const Matrix<T>& x, Cache* cache) const {
    Matrix<T> pre = intermediate.forward(x);
    Matrix<T> act = gelu<T>(pre);
    Matrix<T> y = norm.forward(output.forward(act) + x, cache ? &cache->norm : nullptr);
    if (cache != nullptr) {
      cache->input = x;
      cache->pre_activation = std::move(pre);
      cache->activation = std::move(act);
    }
    return y;
  }

  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy) {
    const Matrix<T> d_sum = norm.backward(cache.norm, dy);
    const Matrix<T> d_act = output.backward(cache.activation, d_sum);
    const Matrix<T> d_pre = gelu_backward<T>(cache.pre_activation, d_act);
    return intermediate.backward(cache.input, d_pre) + d_sum;
  }

  void collect(std::vector<Param<T>*>& out) {
    intermediate.collect(out);
    output.collect(out);
    norm.collect(out);
  }
};

/// Post-LayerNorm transformer encoder with BERT's parameter layout.
template <typename T>
class BertEncoder {
 public:
  struct Cache {
    std::vector<int> ids;
    typename LayerNorm<T>::Cache embed_norm;
    std::vector<typename SelfAttention<T>::Cache> attention;
    std::vector<typename FeedForward<T>::Cache> feed_forward;
  };

  BertEncoder() = default;

  explicit BertEncoder(const BertConfig& cfg) : config_(cfg) {
    cfg.validate();
    word_ = Param<T>("embeddings.word_embeddings.weight", cfg.vocab_size, cfg.hidden_size, true);
    position_ = Param<T>("embeddings.position_embeddings.weight", cfg.max_position_embeddings,
                         cfg.hidden_size, true);
    token_type_ =
        Param<T>("embeddings.token_type_embeddings.weight", cfg.type_vocab_size, cfg.hidden_size, true);
    embed_norm_ = LayerNorm<T>("embeddings.LayerNorm", cfg.hidden_size, static_cast<T>(cfg.layer_norm_eps));
    for (int l = 0; l < cfg.num_hidden_layers; ++l) {
      const std::string prefix = "encoder.layer." + std::to_string(l);
      attention_.emplace_back(prefix, cfg);
      feed_forward_.emplace_back(prefix, cfg);
    }
  }

  /// Randomly initialized encoder: N(0, stddev) weights, unit LayerNorm gains, zero biases.
  static BertEncoder random(const BertConfig& cfg, std::uint64_t seed, double stddev = 0.02) {
    BertEncoder enc(cfg);
    Rng rng(seed);
    for (Param<T>* p : enc.parameters()) {
      if (p->decay) fill_normal(p->value, rng, stddev);
    }
    return enc;
  }

  const BertConfig& config() const { return config_; }
  int hidden_size() const { return config_.hidden_size; }

  /// Final-layer hidden states, one row per token.
  Matrix<T> forward(const std::vector<int>& ids, Cache* cache = nullptr) const {
    if (ids.empty()) fail(ErrorKind::InvalidArgument, "empty token sequence");
    if (static_cast<int>(ids.size()) > config_.max_position_embeddings) {
      fail(ErrorKind::InvalidArgument, "token sequence longer than position table");
    }
    const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
    Matrix<T> x(n, config_.hidden_size);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int id = ids[static_cast<std::size_t>(i)];
      if (id < 0 || id >= config_.vocab_size) fail(ErrorKind::InvalidArgument, "token id out of range");
      x.row(i) = word_.value.row(id) + position_.value.row(i) + token_type_.value.row(0);
    }
    if (cache != nullptr) {
      cache->ids = ids;
      cache->attention.assign(attention_.size(), {});
      cache->feed_forward.assign(feed_forward_.size(), {});
    }
    Matrix<T> h = embed_norm_.forward(x, cache ? &cache->embed_norm : nullptr);
    for (std::size_t l = 0; l < attention_.size(); ++l) {
      h = attention_[l].forward(h, cache ? &cache->attention[l] : nullptr);
      h = feed_forward_[l].forward(h, cache ? &cache->feed_forward[l] : nullptr);
    }
    return h;
  }

  /// First-token (CLS) final-layer state.
  RowVector<T> pooled(const std::vector<int>& ids, Cache* cache = nullptr) const {
    return forward(ids, cache).row(0);
  }

  /// Backpropagates dL/d(pooled) through a cached forward pass, accumulating gradients.
  void backward_pooled(const Cache& cache, const RowVector<T>& d_pooled) {
    Matrix<T> dh = Matrix<T>::Zero(static_cast<Eigen::Index>(cache.ids.size()), config_.hidden_size);
    dh.row(0) = d_pooled;
    backward(cache, dh);
  }

  void backward(const Cache& cache, Matrix<T> dh) {
    for (std::size_t l = attention_.size(); l-- > 0;) {
      dh = feed_forward_[l].backward(cache.feed_forward[l], dh);
      dh = attention_[l].backward(cache.attention[l], dh);
    }
    const Matrix<T> dx = embed_norm_.backward(cache.embed_norm, dh);
    for (Eigen::Index i = 0; i < dx.rows(); ++i) {
      word_.grad.row(cache.ids[static_cast<std::size_t>(i)]) += dx.row(i);
      position_.grad.row(i) += dx.row(i);
      token_type_.grad.row(0) += dx.row(i);
    }
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out{&word_, &position_, &token_type_};
    embed_norm_.collect(out);
    for (std::size_t l = 0; l < attention_.size(); ++l) {
      attention_[l].collect(out);
      feed_forward_[l].collect(out);
    }
    return out;
  }

  std::vector<const Param<T>*> parameters() const {
    std::vector<const Param<T>*> out;
    for (Param<T>* p : const_cast<BertEncoder*>(this)->parameters()) out.push_back(p);
    return out;
  }

  template <typename U>
  BertEncoder<U> cast() const {
    BertEncoder<U> out(config_);
    auto src = parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return out;
  }

 private:
  BertConfig config_;
  Param<T> word_, position_, token_type_;
  LayerNorm<T> embed_norm_;
  std::vector<SelfAttention<T>> attention_;
  std::vector<FeedForward<T>> feed_forward_;
};

}  // namespace reviewlens::nn
