#pragma once

// Layer primitives with hand-written backward passes. Everything is templated
// on the scalar so training runs in float while gradient checks run in
// double. Backward functions accumulate into parameter gradients and
// overwrite input gradients.

#include "topodiff/errors.hpp"
#include "topodiff/kernels.hpp"
#include "topodiff/matrix.hpp"

#include <cmath>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

namespace topodiff::nn {

namespace kp = kernels::parallel;

/// Named parameter tensors in registration order. Gradients and optimizer
/// moments use a ParamSet of identical layout.
template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    if (find(name) != npos) throw ConfigError("duplicate parameter '" + name + "'");
    names_.push_back(std::move(name));
    tensors_.emplace_back(rows, cols);
    return tensors_.size() - 1;
  }

  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return npos;
  }

  Matrix<T>& operator[](std::size_t i) { return tensors_[i]; }
  const Matrix<T>& operator[](std::size_t i) const { return tensors_[i]; }
  Matrix<T>& at(const std::string& name) { return tensors_.at(checked(name)); }
  const Matrix<T>& at(const std::string& name) const { return tensors_.at(checked(name)); }

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  ParamSet zeros_like() const {
    ParamSet out;
    out.names_ = names_;
    for (const auto& t : tensors_) out.tensors_.emplace_back(t.rows(), t.cols());
    return out;
  }

  void zero() {
    for (auto& t : tensors_) t.fill(T(0));
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      out.add(names_[i], tensors_[i].rows(), tensors_[i].cols());
      out[i] = tensors_[i].template cast<U>();
    }
    return out;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::size_t checked(const std::string& name) const {
    const std::size_t i = find(name);
    if (i == npos) throw ConfigError("unknown parameter '" + name + "'");
    return i;
  }

  std::vector<std::string> names_;
  std::vector<Matrix<T>> tensors_;
};

template <typename T, typename Rng>
void init_normal(Matrix<T>& m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : m.storage()) v = static_cast<T>(dist(rng));
}

template <typename T, typename Rng>
void init_xavier(Matrix<T>& m, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-a, a);
  for (auto& v : m.storage()) v = static_cast<T>(dist(rng));
}

// --- linear ---------------------------------------------------------------

/// y = x * w + b, b a 1 x out row (optional).
template <typename T>
void linear_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>* b, Matrix<T>& y) {
  if (x.cols() != w.rows()) throw ConfigError("linear: input width mismatch");
  y.resize(x.rows(), w.cols());
  if (b)
    for (std::size_t r = 0; r < y.rows(); ++r) std::copy(b->data(), b->data() + b->cols(), y.row(r).begin());
  kp::gemm_nn(x.data(), w.data(), y.data(), x.rows(), x.cols(), w.cols(), b != nullptr);
}

template <typename T>
void linear_backward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& dy, Matrix<T>& dw,
                     std::type_identity_t<Matrix<T>>* db, std::type_identity_t<Matrix<T>>* dx) {
  kp::gemm_tn(x.data(), dy.data(), dw.data(), x.cols(), x.rows(), dy.cols(), true);
  if (db)
    for (std::size_t r = 0; r < dy.rows(); ++r)
      for (std::size_t c = 0; c < dy.cols(); ++c) (*db)(0, c) += dy(r, c);
  if (dx) {
    dx->resize(x.rows(), x.cols());
    kp::gemm_nt(dy.data(), w.data(), dx->data(), dy.rows(), dy.cols(), w.rows(), false);
  }
}

// --- layer norm -------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct LayerNormCache {
  Matrix<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
void layernorm_forward(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta,
                       Matrix<T>& y, LayerNormCache<T>& cache) {
  const std::size_t n = x.cols();
  y.resize(x.rows(), n);
  cache.xhat.resize(x.rows(), n);
  cache.rstd.assign(x.rows(), T(0));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* xr = x.row(r).data();
    T mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += xr[c];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(n);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    cache.rstd[r] = rstd;
    for (std::size_t c = 0; c < n; ++c) {
      const T h = (xr[c] - mean) * rstd;
      cache.xhat(r, c) = h;
      y(r, c) = h * gamma(0, c) + beta(0, c);
    }
  }
}

template <typename T>
void layernorm_backward(const Matrix<T>& dy, const Matrix<T>& gamma, const LayerNormCache<T>& cache,
                        Matrix<T>& dgamma, Matrix<T>& dbeta, Matrix<T>& dx) {
  const std::size_t n = dy.cols();
  dx.resize(dy.rows(), n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    T sum_g = 0, sum_gx = 0;
    for (std::size_t c = 0; c < n; ++c) {
      const T g = dy(r, c) * gamma(0, c);
      sum_g += g;
      sum_gx += g * cache.xhat(r, c);
      dgamma(0, c) += dy(r, c) * cache.xhat(r, c);
      dbeta(0, c) += dy(r, c);
    }
    const T inv_n = T(1) / static_cast<T>(n);
    for (std::size_t c = 0; c < n; ++c) {
      const T g = dy(r, c) * gamma(0, c);
      dx(r, c) = cache.rstd[r] * (g - inv_n * sum_g - cache.xhat(r, c) * inv_n * sum_gx);
    }
  }
}

// --- activations ------------------------------------------------------------

template <typename T>
T gelu(T x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  const T u = static_cast<T>(kC) * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  constexpr double kC = 0.7978845608028654;
  const T u = static_cast<T>(kC) * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(u);
  const T du = static_cast<T>(kC) * (T(1) + T(3 * 0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

template <typename T, typename F>
Matrix<T> map(const Matrix<T>& x, F f) {
  Matrix<T> y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = f(x.data()[i]);
  return y;
}

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) throw ConfigError("add: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

// --- transformer block ------------------------------------------------------

/// Parameter indices of one pre-norm attention + MLP block.
struct BlockIds {
  std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

template <typename T>
BlockIds register_block(ParamSet<T>& ps, const std::string& prefix, std::size_t width,
                        std::size_t hidden) {
  BlockIds id{};
  auto vec = [&](const char* n) { return ps.add(prefix + n, 1, width); };
  id.ln1_g = vec(".ln1.g");
  id.ln1_b = vec(".ln1.b");
  id.wq = ps.add(prefix + ".attn.wq", width, width);
  id.bq = vec(".attn.bq");
  id.wk = ps.add(prefix + ".attn.wk", width, width);
  id.bk = vec(".attn.bk");
  id.wv = ps.add(prefix + ".attn.wv", width, width);
  id.bv = vec(".attn.bv");
  id.wo = ps.add(prefix + ".attn.wo", width, width);
  id.bo = vec(".attn.bo");
  id.ln2_g = vec(".ln2.g");
  id.ln2_b = vec(".ln2.b");
  id.w1 = ps.add(prefix + ".mlp.w1", width, hidden);
  id.b1 = ps.add(prefix + ".mlp.b1", 1, hidden);
  id.w2 = ps.add(prefix + ".mlp.w2", hidden, width);
  id.b2 = vec(".mlp.b2");
  return id;
}

template <typename T>
struct BlockCache {
  Matrix<T> x, h1, q, k, v, attn, x1, h2, m1, g1;
  LayerNormCache<T> ln1, ln2;
  std::vector<T> probs;
};

/// y = x1 + MLP(LN2(x1)),  x1 = x + Attn(LN1(x)) with attention limited to spans.
template <typename T>
Matrix<T> block_forward(const ParamSet<T>& ps, const BlockIds& id, std::size_t heads,
                        const std::vector<kernels::Span>& spans, const Matrix<T>& x,
                        BlockCache<T>& c) {
  c.x = x;
  layernorm_forward(x, ps[id.ln1_g], ps[id.ln1_b], c.h1, c.ln1);
  linear_forward(c.h1, ps[id.wq], &ps[id.bq], c.q);
  linear_forward(c.h1, ps[id.wk], &ps[id.bk], c.k);
  linear_forward(c.h1, ps[id.wv], &ps[id.bv], c.v);
  c.attn.resize(x.rows(), x.cols());
  c.probs.assign(kernels::attention_prob_size(spans, heads), T(0));
  kp::attention_forward(c.q.data(), c.k.data(), c.v.data(), c.attn.data(), c.probs.data(), x.rows(),
                        x.cols(), heads, spans);
  linear_forward(c.attn, ps[id.wo], &ps[id.bo], c.x1);
  add_inplace(c.x1, x);
  layernorm_forward(c.x1, ps[id.ln2_g], ps[id.ln2_b], c.h2, c.ln2);
  linear_forward(c.h2, ps[id.w1], &ps[id.b1], c.m1);
  c.g1 = map(c.m1, [](T v) { return gelu(v); });
  Matrix<T> y;
  linear_forward(c.g1, ps[id.w2], &ps[id.b2], y);
  add_inplace(y, c.x1);
  return y;
}

template <typename T>
Matrix<T> block_backward(const ParamSet<T>& ps, ParamSet<T>& grads, const BlockIds& id,
                         std::size_t heads, const std::vector<kernels::Span>& spans,
                         const BlockCache<T>& c, const Matrix<T>& dy) {
  Matrix<T> dg1, dm1, dh2, dx1;
  linear_backward(c.g1, ps[id.w2], dy, grads[id.w2], &grads[id.b2], &dg1);
  dm1 = dg1;
  for (std::size_t i = 0; i < dm1.size(); ++i) dm1.data()[i] *= gelu_grad(c.m1.data()[i]);
  linear_backward(c.h2, ps[id.w1], dm1, grads[id.w1], &grads[id.b1], &dh2);
  layernorm_backward(dh2, ps[id.ln2_g], c.ln2, grads[id.ln2_g], grads[id.ln2_b], dx1);
  add_inplace(dx1, dy);

  Matrix<T> dattn, dq(c.q.rows(), c.q.cols()), dk(dq.rows(), dq.cols()), dv(dq.rows(), dq.cols());
  linear_backward(c.attn, ps[id.wo], dx1, grads[id.wo], &grads[id.bo], &dattn);
  kp::attention_backward(c.q.data(), c.k.data(), c.v.data(), c.probs.data(), dattn.data(), dq.data(),
                         dk.data(), dv.data(), c.x.rows(), c.x.cols(), heads, spans);
  Matrix<T> dh1, tmp;
  linear_backward(c.h1, ps[id.wq], dq, grads[id.wq], &grads[id.bq], &dh1);
  linear_backward(c.h1, ps[id.wk], dk, grads[id.wk], &grads[id.bk], &tmp);
  add_inplace(dh1, tmp);
  linear_backward(c.h1, ps[id.wv], dv, grads[id.wv], &grads[id.bv], &tmp);
  add_inplace(dh1, tmp);
  Matrix<T> dx;
  layernorm_backward(dh1, ps[id.ln1_g], c.ln1, grads[id.ln1_g], grads[id.ln1_b], dx);
  add_inplace(dx, dx1);
  return dx;
}

}  // namespace topodiff::nn
