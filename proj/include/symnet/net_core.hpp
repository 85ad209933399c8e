#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "symnet/error.hpp"
#include "symnet/matrix.hpp"

namespace symnet {

enum class Mode { Train, Eval };

template <typename T>
struct DenseLayer {
  Matrix<T> W;  // out_dim x in_dim
  Matrix<T> b;  // 1 x out_dim

  DenseLayer() = default;
  DenseLayer(Matrix<T> weight, Matrix<T> bias) : W(std::move(weight)), b(std::move(bias)) {
    if (b.rows() != 1 || b.cols() != W.rows()) {
      fail(ErrorCode::ShapeMismatch, "bias " + shape_string(b) + " does not match weight " +
                                         shape_string(W));
    }
  }
  std::size_t in_dim() const { return W.cols(); }
  std::size_t out_dim() const { return W.rows(); }
};

template <typename T>
struct BatchNormState {
  Matrix<T> gamma;
  Matrix<T> beta;
  Matrix<T> running_mean;
  Matrix<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  explicit BatchNormState(std::size_t dim = 0)
      : gamma(1, dim, T(1)), beta(1, dim, T(0)), running_mean(1, dim, T(0)),
        running_var(1, dim, T(1)) {}
  std::size_t dim() const { return gamma.cols(); }
};

// ---------------------------------------------------------------------------
// Kernels shared by the plain API and the autodiff graph.

namespace kernels {

// y = x W^T + b, one row at a time so a row's result is independent of the batch.
template <typename T>
Matrix<T> affine(const Matrix<T>& x, const Matrix<T>& W, const Matrix<T>& b) {
  if (x.cols() != W.cols() || b.cols() != W.rows() || b.rows() != 1) {
    fail(ErrorCode::ShapeMismatch, "affine: input " + shape_string(x) + ", weight " +
                                       shape_string(W) + ", bias " + shape_string(b));
  }
  const std::size_t in = W.cols(), out = W.rows();
  const Matrix<T> Wt = W.transposed();
  Matrix<T> y(x.rows(), out);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    T* yr = y.row(i).data();
    std::copy(b.data(), b.data() + out, yr);
    const T* xr = x.row(i).data();
    for (std::size_t k = 0; k < in; ++k) axpy(xr[k], Wt.row(k).data(), yr, out);
  }
  return y;
}

template <typename T>
inline T sigmoid(T v) {
  if (v >= T(0)) {
    const T e = std::exp(-v);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
void softmax_row(std::span<const T> in, std::span<T> out) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : in) mx = std::max(mx, v);
  T sum = T(0);
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
}

template <typename T>
T log_sum_exp(std::span<const T> in) {
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : in) mx = std::max(mx, v);
  T sum = T(0);
  for (T v : in) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Plain (non-recording) forward operations.

template <typename T>
Matrix<T> affine_forward(const Matrix<T>& x, const DenseLayer<T>& layer) {
  return kernels::affine(x, layer.W, layer.b);
}

template <typename T>
Matrix<T> batchnorm_forward(const Matrix<T>& x, BatchNormState<T>& state, Mode mode) {
  if (x.cols() != state.dim()) {
    fail(ErrorCode::ShapeMismatch, "batchnorm: input " + shape_string(x) + " for dim " +
                                       std::to_string(state.dim()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  Matrix<T> y(n, d);
  if (mode == Mode::Eval) {
    for (std::size_t j = 0; j < d; ++j) {
      const T inv = T(1) / std::sqrt(state.running_var[j] + state.eps);
      for (std::size_t i = 0; i < n; ++i)
        y(i, j) = state.gamma[j] * (x(i, j) - state.running_mean[j]) * inv + state.beta[j];
    }
    return y;
  }
  if (n < 2) fail(ErrorCode::DegenerateBatch, "batchnorm train mode needs at least 2 rows");
  for (std::size_t j = 0; j < d; ++j) {
    T mean = T(0);
    for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
    mean /= T(n);
    T var = T(0);
    for (std::size_t i = 0; i < n; ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= T(n);
    const T inv = T(1) / std::sqrt(var + state.eps);
    for (std::size_t i = 0; i < n; ++i)
      y(i, j) = state.gamma[j] * (x(i, j) - mean) * inv + state.beta[j];
    state.running_mean[j] = (T(1) - state.momentum) * state.running_mean[j] + state.momentum * mean;
    state.running_var[j] = (T(1) - state.momentum) * state.running_var[j] + state.momentum * var;
  }
  return y;
}

template <typename T>
Matrix<T> relu(Matrix<T> x) {
  for (auto& v : x.values()) v = v > T(0) ? v : T(0);
  return x;
}

template <typename T>
Matrix<T> sigmoid(Matrix<T> x) {
  for (auto& v : x.values()) v = kernels::sigmoid(v);
  return x;
}

// Row-wise, max-shifted.
template <typename T>
Matrix<T> softmax(const Matrix<T>& x) {
  Matrix<T> y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) kernels::softmax_row<T>(x.row(i), y.row(i));
  return y;
}

template <typename T>
std::vector<T> softmax(const std::vector<T>& x) {
  std::vector<T> y(x.size());
  kernels::softmax_row<T>(std::span<const T>(x), std::span<T>(y));
  return y;
}

template <typename T>
T l2_distance(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) {
    fail(ErrorCode::ShapeMismatch, "l2_distance: dims " + std::to_string(u.size()) + " vs " +
                                       std::to_string(v.size()));
  }
  T acc = T(0);
  for (std::size_t i = 0; i < u.size(); ++i) acc += (u[i] - v[i]) * (u[i] - v[i]);
  return std::sqrt(acc);
}

template <typename T>
T l2_distance(const std::vector<T>& u, const std::vector<T>& v) {
  return l2_distance<T>(std::span<const T>(u), std::span<const T>(v));
}

// ---------------------------------------------------------------------------
// Parameters.

template <typename T>
struct ParameterEntry {
  Matrix<T> value;
  std::uint32_t rank = 2;  // 1 for biases and normalization vectors
  bool trainable = true;
};

// Named tensors in sorted (deterministic) order. Batch-norm running statistics
// live here as non-trainable buffers so checkpoints capture them.
template <typename T>
class ParameterStore {
 public:
  using Map = std::map<std::string, ParameterEntry<T>, std::less<>>;

  void add(const std::string& name, Matrix<T> value, std::uint32_t rank, bool trainable = true) {
    if (entries_.contains(name)) fail(ErrorCode::InvariantViolation, "duplicate parameter " + name);
    entries_.emplace(name, ParameterEntry<T>{std::move(value), rank, trainable});
  }

  bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

  ParameterEntry<T>& entry(std::string_view name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail(ErrorCode::UnregisteredParameter, std::string(name));
    return it->second;
  }
  const ParameterEntry<T>& entry(std::string_view name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail(ErrorCode::UnregisteredParameter, std::string(name));
    return it->second;
  }

  Matrix<T>& at(std::string_view name) { return entry(name).value; }
  const Matrix<T>& at(std::string_view name) const { return entry(name).value; }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_)
      if (e.trainable) out.push_back(name);
    return out;
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_)
      if (e.trainable) n += e.value.size();
    return n;
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [name, e] : entries_) out.add(name, e.value.template cast<U>(), e.rank, e.trainable);
    return out;
  }

  DenseLayer<T> dense(const std::string& prefix) const {
    return DenseLayer<T>(at(prefix + ".W"), at(prefix + ".b"));
  }

  BatchNormState<T> batchnorm(const std::string& prefix) const {
    BatchNormState<T> s;
    s.gamma = at(prefix + ".gamma");
    s.beta = at(prefix + ".beta");
    s.running_mean = at(prefix + ".running_mean");
    s.running_var = at(prefix + ".running_var");
    return s;
  }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    auto it = b.entries_.begin();
    for (const auto& [name, e] : a.entries_) {
      if (name != it->first || e.rank != it->second.rank || e.trainable != it->second.trainable ||
          !(e.value == it->second.value))
        return false;
      ++it;
    }
    return true;
  }

 private:
  Map entries_;
};

template <typename T>
using GradientMap = std::map<std::string, Matrix<T>, std::less<>>;

// Glorot-uniform weights, zero bias.
template <typename T, typename Rng>
void add_dense(ParameterStore<T>& store, const std::string& prefix, std::size_t in_dim,
               std::size_t out_dim, Rng& rng) {
  const double limit = std::sqrt(6.0 / double(in_dim + out_dim));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix<T> W(out_dim, in_dim);
  for (auto& v : W.values()) v = static_cast<T>(dist(rng));
  store.add(prefix + ".W", std::move(W), 2);
  store.add(prefix + ".b", Matrix<T>(1, out_dim), 1);
}

template <typename T>
void add_batchnorm(ParameterStore<T>& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".gamma", Matrix<T>(1, dim, T(1)), 1);
  store.add(prefix + ".beta", Matrix<T>(1, dim, T(0)), 1);
  store.add(prefix + ".running_mean", Matrix<T>(1, dim, T(0)), 1, false);
  store.add(prefix + ".running_var", Matrix<T>(1, dim, T(1)), 1, false);
}

// Plain SGD: p <- p - lr * g for every trainable parameter.
template <typename T>
void sgd_step(ParameterStore<T>& store, const GradientMap<T>& grads, T lr) {
  std::size_t matched = 0;
  for (auto& [name, e] : store) {
    if (!e.trainable) continue;
    auto it = grads.find(name);
    if (it == grads.end()) fail(ErrorCode::KeyMismatch, "no gradient for " + name);
    if (!it->second.same_shape(e.value)) {
      fail(ErrorCode::KeyMismatch, "gradient shape for " + name + " is " + shape_string(it->second));
    }
    ++matched;
    T* p = e.value.data();
    const T* g = it->second.data();
    for (std::size_t i = 0; i < e.value.size(); ++i) p[i] -= lr * g[i];
  }
  if (matched != grads.size()) fail(ErrorCode::KeyMismatch, "gradient map has unknown keys");
}

}  // namespace symnet
