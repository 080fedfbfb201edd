#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "reviewlens/rng.hpp"

namespace reviewlens::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// A trainable tensor with its gradient accumulator. Biases and norms are 1 x n.
template <typename T>
struct Param {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool decay = true;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols, bool apply_decay)
      : name(std::move(n)),
        value(Matrix<T>::Zero(rows, cols)),
        grad(Matrix<T>::Zero(rows, cols)),
        decay(apply_decay) {}

  void zero_grad() { grad.setZero(); }
};

template <typename T>
void fill_normal(Matrix<T>& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * stddev);
}

/// y = x W^T + b with W stored (out x in), the layout used by torch checkpoints.
template <typename T>
struct Linear {
  Param<T> weight;
  Param<T> bias;

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out)
      : weight(name + ".weight", out, in, true), bias(name + ".bias", 1, out, false) {}

  Eigen::Index in_dim() const { return weight.value.cols(); }
  Eigen::Index out_dim() const { return weight.value.rows(); }

  Matrix<T> forward(const Matrix<T>& x) const {
    Matrix<T> y = x * weight.value.transpose();
    y.rowwise() += bias.value.row(0);
    return y;
  }

  // Accumulates parameter gradients and returns dL/dx.
  Matrix<T> backward(const Matrix<T>& x, const Matrix<T>& dy) {
    weight.grad.noalias() += dy.transpose() * x;
    bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value;
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <typename T>
struct LayerNorm {
  Param<T> gamma;
  Param<T> beta;
  T eps = T(1e-12);

  struct Cache {
    Matrix<T> normalized;
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index dim, T epsilon)
      : gamma(name + ".weight", 1, dim, false), beta(name + ".bias", 1, dim, false), eps(epsilon) {
    gamma.value.setOnes();
  }

  Matrix<T> forward(const Matrix<T>& x, Cache* cache) const {
    const Eigen::Index d = x.cols();
    Matrix<T> xhat(x.rows(), d);
    Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const T mean = x.row(r).mean();
      const auto centered = (x.row(r).array() - mean).matrix();
      const T var = centered.squaredNorm() / static_cast<T>(d);
      inv_std(r) = T(1) / std::sqrt(var + eps);
      xhat.row(r) = centered * inv_std(r);
    }
    Matrix<T> y = (xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
    y.rowwise() += beta.value.row(0);
    if (cache != nullptr) {
      cache->normalized = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Matrix<T> backward(const Cache& cache, const Matrix<T>& dy) {
    const Matrix<T>& xhat = cache.normalized;
    gamma.grad.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();
    const Matrix<T> dxhat = (dy.array().rowwise() * gamma.value.row(0).array()).matrix();
    const T d = static_cast<T>(dy.cols());
    Matrix<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const T mean_dxhat = dxhat.row(r).mean();
      const T mean_dxhat_xhat = dxhat.row(r).dot(xhat.row(r)) / d;
      dx.row(r) = ((dxhat.row(r).array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat) *
                   cache.inv_std(r))
                      .matrix();
    }
    return dx;
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// Exact (erf) GELU as used by BERT checkpoints.
template <typename T>
Matrix<T> gelu(const Matrix<T>& x) {
  return x.unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); });
}

template <typename T>
Matrix<T> gelu_backward(const Matrix<T>& x, const Matrix<T>& dy) {
  const auto grad = x.unaryExpr([](T v) {
    const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T(-0.5) * v * v) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return cdf + v * pdf;
  });
  return (dy.array() * grad.array()).matrix();
}

template <typename T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

// Row-wise softmax, stable against large logits.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& s) {
  Matrix<T> p(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const T m = s.row(r).maxCoeff();
    p.row(r) = (s.row(r).array() - m).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace reviewlens::nn
