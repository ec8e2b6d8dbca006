#pragma once

// Dense kernels used by the denoiser and the graph encoder.
//
// Two implementations live side by side: `serial` is the naive reference kept
// for testing and benchmarking, `parallel` is the OpenMP version the model
// runs. Both are deterministic; `parallel` partitions work by output row so
// the result does not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace topodiff::kernels {

/// Contiguous range of sequence rows that attend only to each other.
struct Span {
  std::size_t begin = 0;
  std::size_t length = 0;
};

/// Size of the probability buffer attention_forward fills for `spans`.
inline std::size_t attention_prob_size(const std::vector<Span>& spans, std::size_t heads) {
  std::size_t n = 0;
  for (const auto& s : spans) n += heads * s.length * s.length;
  return n;
}

namespace serial {

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] = s;
    }
}

// Multi-head scaled dot-product attention restricted to spans. q, k, v and
// out are S x width row-major with width = heads * head_dim. Rows outside
// every span get a zero output. probs receives softmax weights laid out
// span-major, then head, then query row.
template <typename T>
void attention_forward(const T* q, const T* k, const T* v, T* out, T* probs, std::size_t seq,
                       std::size_t width, std::size_t heads, const std::vector<Span>& spans) {
  const std::size_t dh = width / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  std::fill(out, out + seq * width, T(0));
  std::size_t off = 0;
  for (const auto& sp : spans) {
    const std::size_t len = sp.length;
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs + off + h * len * len;
      for (std::size_t i = 0; i < len; ++i) {
        const T* qi = q + (sp.begin + i) * width + h * dh;
        T mx = -INFINITY;
        for (std::size_t j = 0; j < len; ++j) {
          const T* kj = k + (sp.begin + j) * width + h * dh;
          T s = 0;
          for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
          p[i * len + j] = s * scale;
          mx = std::max(mx, p[i * len + j]);
        }
        T z = 0;
        for (std::size_t j = 0; j < len; ++j) {
          p[i * len + j] = std::exp(p[i * len + j] - mx);
          z += p[i * len + j];
        }
        for (std::size_t j = 0; j < len; ++j) p[i * len + j] /= z;
        T* oi = out + (sp.begin + i) * width + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          const T* vj = v + (sp.begin + j) * width + h * dh;
          for (std::size_t d = 0; d < dh; ++d) oi[d] += p[i * len + j] * vj[d];
        }
      }
    }
    off += heads * len * len;
  }
}

// Gradients of attention_forward. dq, dk, dv are overwritten.
template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq,
                        T* dk, T* dv, std::size_t seq, std::size_t width, std::size_t heads,
                        const std::vector<Span>& spans) {
  const std::size_t dh = width / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  std::fill(dq, dq + seq * width, T(0));
  std::fill(dk, dk + seq * width, T(0));
  std::fill(dv, dv + seq * width, T(0));
  std::size_t off = 0;
  std::vector<T> dp;
  for (const auto& sp : spans) {
    const std::size_t len = sp.length;
    dp.resize(len);
    for (std::size_t h = 0; h < heads; ++h) {
      const T* p = probs + off + h * len * len;
      for (std::size_t i = 0; i < len; ++i) {
        const T* doi = dout + (sp.begin + i) * width + h * dh;
        T dot = 0;
        for (std::size_t j = 0; j < len; ++j) {
          const T* vj = v + (sp.begin + j) * width + h * dh;
          T s = 0;
          for (std::size_t d = 0; d < dh; ++d) s += doi[d] * vj[d];
          dp[j] = s;
          dot += s * p[i * len + j];
        }
        const T* qi = q + (sp.begin + i) * width + h * dh;
        T* dqi = dq + (sp.begin + i) * width + h * dh;
        for (std::size_t j = 0; j < len; ++j) {
          const T ds = p[i * len + j] * (dp[j] - dot) * scale;
          const T* kj = k + (sp.begin + j) * width + h * dh;
          T* dkj = dk + (sp.begin + j) * width + h * dh;
          T* dvj = dv + (sp.begin + j) * width + h * dh;
          for (std::size_t d = 0; d < dh; ++d) {
            dqi[d] += ds * kj[d];
            dkj[d] += ds * qi[d];
            dvj[d] += p[i * len + j] * doi[d];
          }
        }
      }
    }
    off += heads * len * len;
  }
}

}  // namespace serial

namespace parallel {

inline constexpr std::size_t kMinParallelWork = 1 << 15;

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  const long mm = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kMinParallelWork)
  for (long ii = 0; ii < mm; ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    T* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// B is transposed once so the inner loop runs over contiguous output columns.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  const long mm = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kMinParallelWork)
  for (long ii = 0; ii < mm; ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    T* ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p * m + i];
      if (av == T(0)) continue;
      const T* bp = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

namespace detail {

struct AttnTask {
  std::size_t span;
  std::size_t head;
  std::size_t row;
  std::size_t prob_offset;
};

inline std::vector<AttnTask> attention_tasks(const std::vector<Span>& spans, std::size_t heads) {
  std::vector<AttnTask> tasks;
  std::size_t off = 0;
  for (std::size_t s = 0; s < spans.size(); ++s) {
    const std::size_t len = spans[s].length;
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < len; ++i) tasks.push_back({s, h, i, off + h * len * len});
    off += heads * len * len;
  }
  return tasks;
}

// seq x width -> width x seq, so per-head columns become contiguous rows.
template <typename T>
std::vector<T> transpose(const T* x, std::size_t seq, std::size_t width) {
  std::vector<T> t(seq * width);
  for (std::size_t r = 0; r < seq; ++r)
    for (std::size_t c = 0; c < width; ++c) t[c * seq + r] = x[r * width + c];
  return t;
}

}  // namespace detail

template <typename T>
void attention_forward(const T* q, const T* k, const T* v, T* out, T* probs, std::size_t seq,
                       std::size_t width, std::size_t heads, const std::vector<Span>& spans) {
  const std::size_t dh = width / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  std::fill(out, out + seq * width, T(0));
  const auto tasks = detail::attention_tasks(spans, heads);
  const auto kt = detail::transpose(k, seq, width);
  const long nt = static_cast<long>(tasks.size());
#pragma omp parallel for schedule(static)
  for (long ti = 0; ti < nt; ++ti) {
    const auto& task = tasks[static_cast<std::size_t>(ti)];
    const Span sp = spans[task.span];
    const std::size_t len = sp.length;
    const std::size_t hoff = task.head * dh;
    T* p = probs + task.prob_offset + task.row * len;
    const T* qi = q + (sp.begin + task.row) * width + hoff;
    std::fill(p, p + len, T(0));
    for (std::size_t d = 0; d < dh; ++d) {
      const T qd = qi[d];
      const T* kd = kt.data() + (hoff + d) * seq + sp.begin;
#pragma omp simd
      for (std::size_t j = 0; j < len; ++j) p[j] += qd * kd[j];
    }
    T mx = -INFINITY;
    for (std::size_t j = 0; j < len; ++j) {
      p[j] *= scale;
      mx = std::max(mx, p[j]);
    }
    T z = 0;
    for (std::size_t j = 0; j < len; ++j) {
      p[j] = std::exp(p[j] - mx);
      z += p[j];
    }
    const T inv = T(1) / z;
    for (std::size_t j = 0; j < len; ++j) p[j] *= inv;
    T* oi = out + (sp.begin + task.row) * width + hoff;
    for (std::size_t j = 0; j < len; ++j) {
      const T pj = p[j];
      const T* vj = v + (sp.begin + j) * width + hoff;
#pragma omp simd
      for (std::size_t d = 0; d < dh; ++d) oi[d] += pj * vj[d];
    }
  }
}

// Two row-parallel passes: the first produces dQ and the score gradients,
// the second gathers dK and dV by key row, so no two threads write the same
// row.
template <typename T>
void attention_backward(const T* q, const T* k, const T* v, const T* probs, const T* dout, T* dq,
                        T* dk, T* dv, std::size_t seq, std::size_t width, std::size_t heads,
                        const std::vector<Span>& spans) {
  const std::size_t dh = width / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  std::fill(dq, dq + seq * width, T(0));
  std::fill(dk, dk + seq * width, T(0));
  std::fill(dv, dv + seq * width, T(0));
  const auto tasks = detail::attention_tasks(spans, heads);
  const long nt = static_cast<long>(tasks.size());
  std::vector<T> dscore(attention_prob_size(spans, heads));
  const auto kt = detail::transpose(k, seq, width);
  const auto vt = detail::transpose(v, seq, width);

#pragma omp parallel for schedule(static)
  for (long ti = 0; ti < nt; ++ti) {
    const auto& task = tasks[static_cast<std::size_t>(ti)];
    const Span sp = spans[task.span];
    const std::size_t len = sp.length;
    const std::size_t hoff = task.head * dh;
    const T* p = probs + task.prob_offset + task.row * len;
    T* ds = dscore.data() + task.prob_offset + task.row * len;
    const T* doi = dout + (sp.begin + task.row) * width + hoff;
    for (std::size_t d = 0; d < dh; ++d) {
      const T od = doi[d];
      const T* vd = vt.data() + (hoff + d) * seq + sp.begin;
#pragma omp simd
      for (std::size_t j = 0; j < len; ++j) ds[j] += od * vd[j];
    }
    T dot = 0;
    for (std::size_t j = 0; j < len; ++j) dot += ds[j] * p[j];
    for (std::size_t j = 0; j < len; ++j) ds[j] = p[j] * (ds[j] - dot) * scale;
    T* dqi = dq + (sp.begin + task.row) * width + hoff;
    for (std::size_t d = 0; d < dh; ++d) {
      const T* kd = kt.data() + (hoff + d) * seq + sp.begin;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (std::size_t j = 0; j < len; ++j) s += ds[j] * kd[j];
      dqi[d] = s;
    }
  }

  // Same task list, reinterpreted: task.row is now the key row j.
#pragma omp parallel for schedule(static)
  for (long ti = 0; ti < nt; ++ti) {
    const auto& task = tasks[static_cast<std::size_t>(ti)];
    const Span sp = spans[task.span];
    const std::size_t len = sp.length;
    const std::size_t hoff = task.head * dh;
    const std::size_t j = task.row;
    T* dkj = dk + (sp.begin + j) * width + hoff;
    T* dvj = dv + (sp.begin + j) * width + hoff;
    for (std::size_t i = 0; i < len; ++i) {
      const T pij = probs[task.prob_offset + i * len + j];
      const T dsij = dscore[task.prob_offset + i * len + j];
      const T* qi = q + (sp.begin + i) * width + hoff;
      const T* doi = dout + (sp.begin + i) * width + hoff;
#pragma omp simd
      for (std::size_t d = 0; d < dh; ++d) {
        dkj[d] += dsij * qi[d];
        dvj[d] += pij * doi[d];
      }
    }
  }
}

}  // namespace parallel

}  // namespace topodiff::kernels
