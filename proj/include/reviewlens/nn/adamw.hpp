#pragma once

#include <cmath>
#include <vector>

#include "reviewlens/nn/layers.hpp"

namespace reviewlens::nn {

struct AdamWOptions {
  double learning_rate = 2e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay. Decay applies only to params flagged `decay`
/// (weight matrices and embeddings; biases and LayerNorm parameters are exempt).
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Param<T>*> params, AdamWOptions options)
      : params_(std::move(params)), options_(options) {
    moments_.reserve(params_.size());
    for (const Param<T>* p : params_) {
      moments_.push_back({Matrix<T>::Zero(p->value.rows(), p->value.cols()),
                          Matrix<T>::Zero(p->value.rows(), p->value.cols())});
    }
  }

  void zero_grad() {
    for (Param<T>* p : params_) p->zero_grad();
  }

  void step() {
    ++step_;
    const T lr = static_cast<T>(options_.learning_rate);
    const T b1 = static_cast<T>(options_.beta1);
    const T b2 = static_cast<T>(options_.beta2);
    const T eps = static_cast<T>(options_.eps);
    const T bias1 = T(1) - std::pow(b1, static_cast<T>(step_));
    const T bias2 = T(1) - std::pow(b2, static_cast<T>(step_));
    const T step_size = lr / bias1;
    const T bias2_sqrt = std::sqrt(bias2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param<T>& p = *params_[i];
      auto& [m, v] = moments_[i];
      if (p.decay && options_.weight_decay != 0.0) {
        p.value *= T(1) - lr * static_cast<T>(options_.weight_decay);
      }
      m = b1 * m + (T(1) - b1) * p.grad;
      v = b2 * v + (T(1) - b2) * p.grad.cwiseAbs2();
      p.value.array() -= step_size * m.array() / (v.array().sqrt() / bias2_sqrt + eps);
    }
  }

  long steps() const { return step_; }

 private:
  struct Moments {
    Matrix<T> first;
    Matrix<T> second;
  };

  std::vector<Param<T>*> params_;
  std::vector<Moments> moments_;
  AdamWOptions options_;
  long step_ = 0;
};

}  // namespace reviewlens::nn
