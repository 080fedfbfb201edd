#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "reviewlens/error.hpp"
#include "reviewlens/nn/layers.hpp"

namespace reviewlens::classify {

inline constexpr double kProbabilityEps = 1e-7;
inline constexpr double kDefaultThreshold = 0.5;

enum class HeadVariant { Binary, MultiLabel, Adapter };

inline std::string to_string(HeadVariant v) {
  switch (v) {
    case HeadVariant::Binary: return "binary";
    case HeadVariant::MultiLabel: return "multilabel";
    case HeadVariant::Adapter: return "adapter";
  }
  return "";
}

/// Linear output layer: probabilities = sigmoid(W h + b), W is (out_dim x hidden_dim).
template <typename T>
struct ClassifierHead {
  HeadVariant variant = HeadVariant::Binary;
  nn::Linear<T> linear;

  ClassifierHead() = default;
  ClassifierHead(HeadVariant v, Eigen::Index hidden_dim, Eigen::Index out_dim)
      : variant(v), linear("classifier", hidden_dim, out_dim) {
    if (v == HeadVariant::Binary && out_dim != 1) fail(ErrorKind::InvalidArgument, "binary head has one output");
  }

  /// Zero bias and N(0, 0.02) weights.
  static ClassifierHead fresh(HeadVariant v, Eigen::Index hidden_dim, Eigen::Index out_dim, Rng& rng) {
    ClassifierHead head(v, hidden_dim, out_dim);
    nn::fill_normal(head.linear.weight.value, rng, 0.02);
    return head;
  }

  Eigen::Index hidden_dim() const { return linear.in_dim(); }
  Eigen::Index out_dim() const { return linear.out_dim(); }
  nn::Matrix<T>& W() { return linear.weight.value; }
  nn::Matrix<T>& b() { return linear.bias.value; }
  const nn::Matrix<T>& W() const { return linear.weight.value; }
  const nn::Matrix<T>& b() const { return linear.bias.value; }
};

template <typename T>
nn::RowVector<T> head_logits(const ClassifierHead<T>& head, const nn::RowVector<T>& h) {
  if (h.size() != head.hidden_dim()) fail(ErrorKind::InvalidArgument, "embedding width does not match head");
  return (h * head.W().transpose() + head.b().row(0)).eval();
}

template <typename T>
nn::RowVector<T> head_forward(const ClassifierHead<T>& head, const nn::RowVector<T>& h) {
  return head_logits(head, h).unaryExpr([](T z) { return nn::sigmoid(z); });
}

/// 1 iff prob >= threshold.
inline int predict(double prob, double threshold = kDefaultThreshold) { return prob >= threshold ? 1 : 0; }

template <typename T>
std::vector<int> predict(std::span<const T> probs, double threshold = kDefaultThreshold) {
  std::vector<int> out;
  out.reserve(probs.size());
  for (T p : probs) out.push_back(predict(static_cast<double>(p), threshold));
  return out;
}

/// Mean binary cross-entropy over every (instance, output) cell, probabilities clamped to [eps, 1-eps].
template <typename T>
T bce_loss(const nn::Matrix<T>& probs, const nn::Matrix<T>& labels, double eps = kProbabilityEps) {
  if (probs.rows() != labels.rows() || probs.cols() != labels.cols() || probs.size() == 0) {
    fail(ErrorKind::InvalidArgument, "bce_loss shape mismatch");
  }
  const T lo = static_cast<T>(eps);
  const T hi = T(1) - static_cast<T>(eps);
  T total = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const T p = std::clamp(probs.data()[i], lo, hi);
    const T y = labels.data()[i];
    total -= y * std::log(p) + (T(1) - y) * std::log(T(1) - p);
  }
  return total / static_cast<T>(probs.size());
}

template <typename T>
T bce_loss(std::span<const T> probs, std::span<const T> labels, double eps = kProbabilityEps) {
  nn::Matrix<T> p(1, static_cast<Eigen::Index>(probs.size()));
  nn::Matrix<T> y(1, static_cast<Eigen::Index>(labels.size()));
  std::copy(probs.begin(), probs.end(), p.data());
  std::copy(labels.begin(), labels.end(), y.data());
  return bce_loss<T>(p, y, eps);
}

template <typename T>
struct HeadGradients {
  T loss = 0;
  nn::Matrix<T> dW;
  nn::Matrix<T> db;
  nn::Matrix<T> dH;  // gradient w.r.t. each input embedding
};

/// Loss and analytic gradients of mean BCE over sigmoid(H W^T + b).
/// With the sigmoid folded in, dL/dz = (p - y) / (n * out_dim).
template <typename T>
HeadGradients<T> head_loss_gradients(const ClassifierHead<T>& head, const nn::Matrix<T>& embeddings,
                                     const nn::Matrix<T>& labels) {
  nn::Matrix<T> logits = embeddings * head.W().transpose();
  logits.rowwise() += head.b().row(0);
  const nn::Matrix<T> probs = logits.unaryExpr([](T z) { return nn::sigmoid(z); });
  HeadGradients<T> g;
  g.loss = bce_loss<T>(probs, labels);
  const nn::Matrix<T> dz = (probs - labels) / static_cast<T>(probs.size());
  g.dW = dz.transpose() * embeddings;
  g.db = dz.colwise().sum();
  g.dH = dz * head.W();
  return g;
}

/// Bottleneck adapter on the pooled embedding: h + up(gelu(down(h))).
template <typename T>
struct Adapter {
  nn::Linear<T> down;
  nn::Linear<T> up;

  struct Cache {
    nn::Matrix<T> input, pre, act;
  };

  Adapter() = default;
  Adapter(const std::string& name, Eigen::Index hidden_dim, Eigen::Index bottleneck_dim)
      : down(name + ".down", hidden_dim, bottleneck_dim), up(name + ".up", bottleneck_dim, hidden_dim) {}

  static Adapter fresh(const std::string& name, Eigen::Index hidden_dim, Eigen::Index bottleneck_dim, Rng& rng) {
    Adapter a(name, hidden_dim, bottleneck_dim);
    nn::fill_normal(a.down.weight.value, rng, 0.02);
    nn::fill_normal(a.up.weight.value, rng, 0.02);
    return a;
  }

  Eigen::Index bottleneck_dim() const { return down.out_dim(); }

  nn::Matrix<T> forward(const nn::Matrix<T>& h, Cache* cache = nullptr) const {
    nn::Matrix<T> pre = down.forward(h);
    nn::Matrix<T> act = nn::gelu<T>(pre);
    nn::Matrix<T> out = up.forward(act) + h;
    if (cache != nullptr) *cache = {h, std::move(pre), std::move(act)};
    return out;
  }

  nn::Matrix<T> backward(const Cache& cache, const nn::Matrix<T>& dy) {
    const nn::Matrix<T> d_act = up.backward(cache.act, dy);
    const nn::Matrix<T> d_pre = nn::gelu_backward<T>(cache.pre, d_act);
    return down.backward(cache.input, d_pre) + dy;
  }

  void collect(std::vector<nn::Param<T>*>& out) {
    down.collect(out);
    up.collect(out);
  }
};

}  // namespace reviewlens::classify
