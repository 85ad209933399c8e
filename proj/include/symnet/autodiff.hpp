#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "symnet/error.hpp"
#include "symnet/matrix.hpp"
#include "symnet/net_core.hpp"

namespace symnet {

struct Var {
  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kInvalid;
  bool valid() const noexcept { return id != kInvalid; }
};

// Tape of matrix-valued nodes with reverse-mode differentiation.
//
// Every op records its value eagerly. When the graph is built with
// `record = false` no backward closures are stored, which is what evaluation
// uses. A graph refers to itself from its closures, so it is neither copyable
// nor movable.
template <typename T>
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  // Smallest |input| seen by any relu so far: how close this evaluation
  // point is to a kink.
  T relu_margin() const { return relu_margin_; }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  const Matrix<T>& value(Var v) const { return nodes_.at(v.id).value; }
  T scalar(Var v) const {
    const auto& m = value(v);
    if (m.size() != 1) fail(ErrorCode::ShapeMismatch, "scalar() on " + shape_string(m));
    return m[0];
  }
  const Matrix<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  Var constant(Matrix<T> value) { return push(std::move(value), false, {}); }

  // Leaf bound to a named store entry. Repeated requests share one node so
  // gradients accumulate in a single place.
  Var parameter(ParameterStore<T>& store, const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return it->second;
    auto& e = store.entry(name);
    Var v = push(e.value, record_ && e.trainable, {});
    param_nodes_.emplace(name, v);
    return v;
  }

  // y = x W^T + b
  Var affine(Var x, Var W, Var b) {
    Matrix<T> y = kernels::affine(value(x), value(W), value(b));
    return push(std::move(y), needs(x, W, b), [this, x, W, b](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      const Matrix<T>& Wv = value(W);
      const std::size_t out = Wv.rows(), in = Wv.cols();
      if (needs(x)) {
        Matrix<T>& gx = acc(x);
        for (std::size_t i = 0; i < gy.rows(); ++i)
          for (std::size_t o = 0; o < out; ++o) axpy(gy(i, o), Wv.row(o).data(), gx.row(i).data(), in);
      }
      if (needs(W)) {
        Matrix<T>& gW = acc(W);
        const Matrix<T>& xv = value(x);
        for (std::size_t i = 0; i < gy.rows(); ++i)
          for (std::size_t o = 0; o < out; ++o) axpy(gy(i, o), xv.row(i).data(), gW.row(o).data(), in);
      }
      if (needs(b)) {
        Matrix<T>& gb = acc(b);
        for (std::size_t i = 0; i < gy.rows(); ++i) axpy(T(1), gy.row(i).data(), gb.data(), out);
      }
    });
  }

  Var add(Var a, Var b) { return binary_same_shape(a, b, T(1), T(1)); }
  Var sub(Var a, Var b) { return binary_same_shape(a, b, T(1), T(-1)); }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Matrix<T> y = value(a);
    const auto& bv = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    return push(std::move(y), needs(a, b), [this, a, b](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      if (needs(a)) {
        auto& ga = acc(a);
        const auto& bv = value(b);
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
      }
      if (needs(b)) {
        auto& gb = acc(b);
        const auto& av = value(a);
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
      }
    });
  }

  Var scale(Var a, T s) {
    Matrix<T> y = value(a);
    for (auto& v : y.values()) v *= s;
    return push(std::move(y), needs(a), [this, a, s](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      auto& ga = acc(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += s * gy[i];
    });
  }

  Var add_scalar(Var a, T s) {
    Matrix<T> y = value(a);
    for (auto& v : y.values()) v += s;
    return push(std::move(y), needs(a), [this, a](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      auto& ga = acc(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    });
  }

  // Elementwise map with a caller-supplied derivative df(x, y).
  Var unary(Var a, std::function<T(T)> f, std::function<T(T, T)> df) {
    Matrix<T> y = value(a);
    for (auto& v : y.values()) v = f(v);
    return push(std::move(y), needs(a), [this, a, df = std::move(df)](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      const Matrix<T>& yv = nodes_[self].value;
      const Matrix<T>& xv = value(a);
      auto& ga = acc(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * df(xv[i], yv[i]);
    });
  }

  Var relu(Var a) {
    for (T v : value(a).values()) relu_margin_ = std::min(relu_margin_, std::abs(v));
    return unary(a, [](T v) { return v > T(0) ? v : T(0); },
                 [](T x, T) { return x > T(0) ? T(1) : T(0); });
  }

  Var sigmoid(Var a) {
    return unary(a, [](T v) { return kernels::sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
  }

  Var softmax_rows(Var a) {
    const auto& av = value(a);
    Matrix<T> y(av.rows(), av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) kernels::softmax_row<T>(av.row(i), y.row(i));
    return push(std::move(y), needs(a), [this, a](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      const Matrix<T>& yv = nodes_[self].value;
      auto& ga = acc(a);
      for (std::size_t i = 0; i < yv.rows(); ++i) {
        const T s = dot(gy.row(i).data(), yv.row(i).data(), yv.cols());
        for (std::size_t j = 0; j < yv.cols(); ++j) ga(i, j) += yv(i, j) * (gy(i, j) - s);
      }
    });
  }

  Var concat_cols(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.rows() != bv.rows()) {
      fail(ErrorCode::ShapeMismatch, "concat_cols " + shape_string(av) + " + " + shape_string(bv));
    }
    const std::size_t ca = av.cols(), cb = bv.cols();
    Matrix<T> y(av.rows(), ca + cb);
    for (std::size_t i = 0; i < av.rows(); ++i) {
      std::copy(av.row(i).begin(), av.row(i).end(), y.row(i).begin());
      std::copy(bv.row(i).begin(), bv.row(i).end(), y.row(i).begin() + ca);
    }
    return push(std::move(y), needs(a, b), [this, a, b, ca, cb](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      if (needs(a)) {
        auto& ga = acc(a);
        for (std::size_t i = 0; i < gy.rows(); ++i) axpy(T(1), gy.row(i).data(), ga.row(i).data(), ca);
      }
      if (needs(b)) {
        auto& gb = acc(b);
        for (std::size_t i = 0; i < gy.rows(); ++i)
          axpy(T(1), gy.row(i).data() + ca, gb.row(i).data(), cb);
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat_rows of nothing");
    const std::size_t cols = value(parts.front()).cols();
    std::size_t rows = 0;
    bool grad = false;
    for (Var p : parts) {
      if (value(p).cols() != cols) fail(ErrorCode::ShapeMismatch, "concat_rows column mismatch");
      rows += value(p).rows();
      grad = grad || needs(p);
    }
    Matrix<T> y(rows, cols);
    std::size_t offset = 0;
    for (Var p : parts) {
      const auto& pv = value(p);
      std::copy(pv.values().begin(), pv.values().end(), y.data() + offset);
      offset += pv.size();
    }
    return push(std::move(y), grad, [this, parts](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      std::size_t offset = 0;
      for (Var p : parts) {
        const std::size_t n = value(p).size();
        if (needs(p)) axpy(T(1), gy.data() + offset, acc(p).data(), n);
        offset += n;
      }
    });
  }

  Var gather_rows(Var a, std::vector<std::size_t> index) {
    const auto& av = value(a);
    Matrix<T> y(index.size(), av.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= av.rows()) fail(ErrorCode::ShapeMismatch, "gather_rows index out of range");
      std::copy(av.row(index[i]).begin(), av.row(index[i]).end(), y.row(i).begin());
    }
    return push(std::move(y), needs(a), [this, a, index = std::move(index)](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      auto& ga = acc(a);
      for (std::size_t i = 0; i < index.size(); ++i)
        axpy(T(1), gy.row(i).data(), ga.row(index[i]).data(), gy.cols());
    });
  }

  // Per-column batch normalization. Train mode uses the batch mean and
  // population variance and updates the running statistics in place.
  Var batchnorm(Var x, Var gamma, Var beta, Matrix<T>& running_mean, Matrix<T>& running_var,
                Mode mode, T eps, T momentum) {
    const auto& xv = value(x);
    const auto& gv = value(gamma);
    const auto& bv = value(beta);
    const std::size_t n = xv.rows(), d = xv.cols();
    if (gv.cols() != d || bv.cols() != d || running_mean.cols() != d || running_var.cols() != d) {
      fail(ErrorCode::ShapeMismatch, "batchnorm: input " + shape_string(xv) + " for dim " +
                                         std::to_string(gv.cols()));
    }
    Matrix<T> xhat(n, d);
    Matrix<T> inv_std(1, d);
    if (mode == Mode::Eval) {
      for (std::size_t j = 0; j < d; ++j) {
        inv_std[j] = T(1) / std::sqrt(running_var[j] + eps);
        for (std::size_t i = 0; i < n; ++i) xhat(i, j) = (xv(i, j) - running_mean[j]) * inv_std[j];
      }
    } else {
      if (n < 2) fail(ErrorCode::DegenerateBatch, "batchnorm train mode needs at least 2 rows");
      for (std::size_t j = 0; j < d; ++j) {
        T mean = T(0);
        for (std::size_t i = 0; i < n; ++i) mean += xv(i, j);
        mean /= T(n);
        T var = T(0);
        for (std::size_t i = 0; i < n; ++i) var += (xv(i, j) - mean) * (xv(i, j) - mean);
        var /= T(n);
        inv_std[j] = T(1) / std::sqrt(var + eps);
        for (std::size_t i = 0; i < n; ++i) xhat(i, j) = (xv(i, j) - mean) * inv_std[j];
        running_mean[j] = (T(1) - momentum) * running_mean[j] + momentum * mean;
        running_var[j] = (T(1) - momentum) * running_var[j] + momentum * var;
      }
    }
    Matrix<T> y(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) y(i, j) = gv[j] * xhat(i, j) + bv[j];
    const bool train = mode == Mode::Train;
    return push(std::move(y), needs(x, gamma, beta),
                [this, x, gamma, beta, train, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](std::uint32_t self) {
                  const Matrix<T>& gy = nodes_[self].grad;
                  const std::size_t n = gy.rows(), d = gy.cols();
                  Matrix<T> sum_gy(1, d), sum_gy_xhat(1, d);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) {
                      sum_gy[j] += gy(i, j);
                      sum_gy_xhat[j] += gy(i, j) * xhat(i, j);
                    }
                  if (needs(gamma)) axpy(T(1), sum_gy_xhat.data(), acc(gamma).data(), d);
                  if (needs(beta)) axpy(T(1), sum_gy.data(), acc(beta).data(), d);
                  if (!needs(x)) return;
                  const auto& gv = value(gamma);
                  auto& gx = acc(x);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < d; ++j) {
                      if (train) {
                        gx(i, j) += gv[j] * inv_std[j] / T(n) *
                                    (T(n) * gy(i, j) - sum_gy[j] - xhat(i, j) * sum_gy_xhat[j]);
                      } else {
                        gx(i, j) += gv[j] * inv_std[j] * gy(i, j);
                      }
                    }
                });
  }

  // Row-wise reductions producing an (rows x 1) column.
  Var row_l2(Var a) {
    const auto& av = value(a);
    Matrix<T> y(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i)
      y[i] = std::sqrt(dot(av.row(i).data(), av.row(i).data(), av.cols()));
    return push(std::move(y), needs(a), [this, a](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      const Matrix<T>& yv = nodes_[self].value;
      const auto& av = value(a);
      auto& ga = acc(a);
      for (std::size_t i = 0; i < av.rows(); ++i) {
        if (yv[i] == T(0)) continue;
        axpy(gy[i] / yv[i], av.row(i).data(), ga.row(i).data(), av.cols());
      }
    });
  }

  Var row_sq_norm(Var a) {
    const auto& av = value(a);
    Matrix<T> y(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) y[i] = dot(av.row(i).data(), av.row(i).data(), av.cols());
    return push(std::move(y), needs(a), [this, a](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      const auto& av = value(a);
      auto& ga = acc(a);
      for (std::size_t i = 0; i < av.rows(); ++i)
        axpy(T(2) * gy[i], av.row(i).data(), ga.row(i).data(), av.cols());
    });
  }

  Var row_l1(Var a) {
    const auto& av = value(a);
    Matrix<T> y(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) {
      T s = T(0);
      for (T v : av.row(i)) s += std::abs(v);
      y[i] = s;
    }
    return push(std::move(y), needs(a), [this, a](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      const auto& av = value(a);
      auto& ga = acc(a);
      for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) {
          const T v = av(i, j);
          ga(i, j) += gy[i] * (v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)));
        }
    });
  }

  // 1 - cos(a_i, b_i) per row.
  Var row_cos_distance(Var a, Var b) {
    check_same(a, b, "row_cos_distance");
    const auto& av = value(a);
    const auto& bv = value(b);
    const std::size_t n = av.rows(), d = av.cols();
    Matrix<T> y(n, 1);
    Matrix<T> stats(n, 3);  // |a|, |b|, cos
    for (std::size_t i = 0; i < n; ++i) {
      const T na = std::sqrt(dot(av.row(i).data(), av.row(i).data(), d));
      const T nb = std::sqrt(dot(bv.row(i).data(), bv.row(i).data(), d));
      const T denom = std::max(na * nb, kCosEps);
      const T c = dot(av.row(i).data(), bv.row(i).data(), d) / denom;
      stats(i, 0) = na;
      stats(i, 1) = nb;
      stats(i, 2) = c;
      y[i] = T(1) - c;
    }
    return push(std::move(y), needs(a, b), [this, a, b, stats = std::move(stats)](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      const auto& av = value(a);
      const auto& bv = value(b);
      const std::size_t d = av.cols();
      for (std::size_t i = 0; i < av.rows(); ++i) {
        const T na = stats(i, 0), nb = stats(i, 1), c = stats(i, 2);
        if (na * nb < kCosEps) continue;
        const T k = -gy[i];
        if (needs(a)) {
          auto& ga = acc(a);
          for (std::size_t j = 0; j < d; ++j)
            ga(i, j) += k * (bv(i, j) / (na * nb) - c * av(i, j) / (na * na));
        }
        if (needs(b)) {
          auto& gb = acc(b);
          for (std::size_t j = 0; j < d; ++j)
            gb(i, j) += k * (av(i, j) / (na * nb) - c * bv(i, j) / (nb * nb));
        }
      }
    });
  }

  // Softmax cross-entropy per row, (rows x 1).
  Var cross_entropy(Var logits, std::vector<std::size_t> labels) {
    const auto& lv = value(logits);
    if (labels.size() != lv.rows()) fail(ErrorCode::ShapeMismatch, "cross_entropy label count");
    Matrix<T> y(lv.rows(), 1);
    for (std::size_t i = 0; i < lv.rows(); ++i) {
      if (labels[i] >= lv.cols()) {
        fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(labels[i]) + " for " +
                                             std::to_string(lv.cols()) + " classes");
      }
      y[i] = kernels::log_sum_exp<T>(lv.row(i)) - lv(i, labels[i]);
    }
    return push(std::move(y), needs(logits),
                [this, logits, labels = std::move(labels)](std::uint32_t self) {
                  const Matrix<T>& gy = nodes_[self].grad;
                  const auto& lv = value(logits);
                  auto& gl = acc(logits);
                  std::vector<T> p(lv.cols());
                  for (std::size_t i = 0; i < lv.rows(); ++i) {
                    kernels::softmax_row<T>(lv.row(i), std::span<T>(p));
                    p[labels[i]] -= T(1);
                    axpy(gy[i], p.data(), gl.row(i).data(), p.size());
                  }
                });
  }

  Var sum(Var a) {
    T s = T(0);
    for (T v : value(a).values()) s += v;
    return push(Matrix<T>(1, 1, s), needs(a), [this, a](std::uint32_t self) {
      const T g = nodes_[self].grad[0];
      for (auto& v : acc(a).values()) v += g;
    });
  }

  Var mean(Var a) {
    const std::size_t n = value(a).size();
    if (n == 0) fail(ErrorCode::ShapeMismatch, "mean of empty tensor");
    return scale(sum(a), T(1) / T(n));
  }

  void backward(Var loss) {
    if (!record_) fail(ErrorCode::InvariantViolation, "backward on a non-recording graph");
    if (value(loss).size() != 1) {
      fail(ErrorCode::ShapeMismatch, "backward needs a scalar loss, got " + shape_string(value(loss)));
    }
    for (auto& n : nodes_) n.grad = Matrix<T>();
    if (!nodes_[loss.id].needs_grad) return;
    acc(loss)[0] = T(1);
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward(id);
    }
  }

  // Gradients for every trainable entry of `store`; entries the loss does not
  // touch get zero blocks.
  GradientMap<T> gradients(const ParameterStore<T>& store) const {
    GradientMap<T> out;
    for (const auto& [name, e] : store) {
      if (!e.trainable) continue;
      Matrix<T> g(e.value.rows(), e.value.cols());
      if (auto it = param_nodes_.find(name); it != param_nodes_.end()) {
        const Matrix<T>& ng = nodes_[it->second.id].grad;
        if (!ng.empty()) g = ng;
      }
      if (!g.all_finite()) fail(ErrorCode::NonFiniteGradient, "gradient of " + name);
      out.emplace(name, std::move(g));
    }
    for (const auto& [name, v] : param_nodes_) {
      if (!store.contains(name)) fail(ErrorCode::UnregisteredParameter, name);
    }
    return out;
  }

 private:
  static constexpr T kCosEps = T(1e-12);

  using BackwardFn = std::function<void(std::uint32_t)>;
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var push(Matrix<T> value, bool needs_grad, BackwardFn fn) {
    if (nodes_.size() >= Var::kInvalid) fail(ErrorCode::InvariantViolation, "graph too large");
    Node n;
    n.value = std::move(value);
    n.needs_grad = record_ && needs_grad;
    if (n.needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  template <typename... Vs>
  bool needs(Vs... vs) const {
    return (nodes_[vs.id].needs_grad || ...);
  }

  Matrix<T>& acc(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Matrix<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void check_same(Var a, Var b, const char* op) const {
    if (!value(a).same_shape(value(b))) {
      fail(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_string(value(a)) + " vs " +
                                         shape_string(value(b)));
    }
  }

  Var binary_same_shape(Var a, Var b, T ka, T kb) {
    check_same(a, b, "elementwise");
    Matrix<T> y = value(a);
    const auto& bv = value(b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = ka * y[i] + kb * bv[i];
    return push(std::move(y), needs(a, b), [this, a, b, ka, kb](std::uint32_t self) {
      const Matrix<T>& gy = nodes_[self].grad;
      if (needs(a)) axpy(ka, gy.data(), acc(a).data(), gy.size());
      if (needs(b)) axpy(kb, gy.data(), acc(b).data(), gy.size());
    });
  }

  bool record_;
  T relu_margin_ = std::numeric_limits<T>::infinity();
  std::vector<Node> nodes_;
  std::unordered_map<std::string, Var> param_nodes_;
};

}  // namespace symnet
