#pragma once

#include "topodiff/matrix.hpp"
#include "topodiff/montage.hpp"
#include "topodiff/nn.hpp"
#include "topodiff/signalio.hpp"

#include <cstddef>
#include <vector>

namespace topodiff::relgraph {

/// Cosine relation matrix of one temporal group.
struct Relation {
  MatrixD a;                     // C_LR x C_LR
  std::vector<bool> zero_norm;   // rows whose channel vector is all zeros
};

/// Dense, pruned and normalized adjacency of one temporal group.
struct RelationGraph {
  std::size_t group = 0;
  MatrixD a_raw;
  MatrixD a_directed;  // per-row top-k selection before symmetrization
  MatrixD a_pruned;
  MatrixD a_norm;
  std::size_t k = 0;        // effective k after clamping to n_s
  bool k_clamped = false;
};

/// Cosine similarity between the rows of a C x P block.
template <typename T>
Relation relation_matrix(const T* rows, std::size_t channels, std::size_t length);

template <typename T>
Relation relation_matrix(const Matrix<T>& group_data) {
  return relation_matrix(group_data.data(), group_data.rows(), group_data.cols());
}

/// Spatial mask, absolute weights, per-row top-k (ties to the smaller
/// column), then symmetrization by elementwise max. Fills a_norm too.
RelationGraph build_graph(const MatrixD& a_raw, const montage::NeighborTable& knn, std::size_t k);

/// D^-1/2 (A + I) D^-1/2.
MatrixD normalize(const MatrixD& a_pruned);

/// One graph per temporal group of the visible patches.
std::vector<RelationGraph> build_graphs(const signalio::PatchTensor<float>& visible,
                                        const montage::NeighborTable& knn, std::size_t k);

/// Largest |eigenvalue| estimate of a symmetric matrix by power iteration.
double spectral_radius(const MatrixD& a, int iterations = 500);

// --- residual GCN -------------------------------------------------------------

/// Weights of the relation encoder. Held by reference so the same code runs
/// on standalone parameters and on slices of the denoiser's ParamSet.
template <typename T>
struct GnnWeights {
  const Matrix<T>& w_in;  // P x D
  const Matrix<T>& b_in;  // 1 x D
  const Matrix<T>& w1;    // D x D
  const Matrix<T>& b1;
  const Matrix<T>& w2;
  const Matrix<T>& b2;
};

template <typename T>
struct GnnGrads {
  Matrix<T>& w_in;
  Matrix<T>& b_in;
  Matrix<T>& w1;
  Matrix<T>& b1;
  Matrix<T>& w2;
  Matrix<T>& b2;
};

/// Standalone parameter bundle.
template <typename T>
struct GnnParams {
  Matrix<T> w_in, b_in, w1, b1, w2, b2;

  GnnParams() = default;
  GnnParams(std::size_t patch, std::size_t width)
      : w_in(patch, width), b_in(1, width), w1(width, width), b1(1, width), w2(width, width),
        b2(1, width) {}

  GnnWeights<T> view() const { return {w_in, b_in, w1, b1, w2, b2}; }
  GnnGrads<T> grad_view() { return {w_in, b_in, w1, b1, w2, b2}; }
};

template <typename T>
struct GnnCache {
  Matrix<T> a, x, xhat, m1, x1, m2;
};

/// X^ = X W_in + b_in;  X1 = tanh(A X^ W1 + b1);  X2 = A X1 W2 + b2;  Z = X^ + X2.
template <typename T>
Matrix<T> gnn_forward(const Matrix<T>& a_norm, const Matrix<T>& x, const GnnWeights<T>& w,
                      GnnCache<T>* cache = nullptr) {
  namespace kp = kernels::parallel;
  const std::size_t c = x.rows(), d = w.w_in.cols();
  if (a_norm.rows() != c || a_norm.cols() != c) throw ConfigError("gnn: adjacency shape mismatch");
  Matrix<T> xhat, m1(c, d), u1, m2(c, d), z;
  nn::linear_forward(x, w.w_in, &w.b_in, xhat);
  kp::gemm_nn(a_norm.data(), xhat.data(), m1.data(), c, c, d, false);
  nn::linear_forward(m1, w.w1, &w.b1, u1);
  Matrix<T> x1 = nn::map(u1, [](T v) { return std::tanh(v); });
  kp::gemm_nn(a_norm.data(), x1.data(), m2.data(), c, c, d, false);
  nn::linear_forward(m2, w.w2, &w.b2, z);
  nn::add_inplace(z, xhat);
  if (cache) {
    cache->a = a_norm;
    cache->x = x;
    cache->xhat = std::move(xhat);
    cache->m1 = std::move(m1);
    cache->x1 = std::move(x1);
    cache->m2 = std::move(m2);
  }
  return z;
}

/// Accumulates weight gradients; returns dL/dX.
template <typename T>
Matrix<T> gnn_backward(const GnnCache<T>& cache, const GnnWeights<T>& w, const Matrix<T>& dz,
                       GnnGrads<T> g) {
  namespace kp = kernels::parallel;
  const std::size_t c = cache.x.rows(), d = w.w_in.cols();
  Matrix<T> dm2, dx1(c, d), dm1, dxhat(c, d), dx;
  nn::linear_backward(cache.m2, w.w2, dz, g.w2, &g.b2, &dm2);
  kp::gemm_tn(cache.a.data(), dm2.data(), dx1.data(), c, c, d, false);
  for (std::size_t i = 0; i < dx1.size(); ++i) {
    const T y = cache.x1.data()[i];
    dx1.data()[i] *= T(1) - y * y;
  }
  nn::linear_backward(cache.m1, w.w1, dx1, g.w1, &g.b1, &dm1);
  kp::gemm_tn(cache.a.data(), dm1.data(), dxhat.data(), c, c, d, false);
  nn::add_inplace(dxhat, dz);
  nn::linear_backward(cache.x, w.w_in, dxhat, g.w_in, &g.b_in, &dx);
  return dx;
}

}  // namespace topodiff::relgraph
