#include "topodiff/relgraph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace topodiff::relgraph {

template <typename T>
Relation relation_matrix(const T* rows, std::size_t channels, std::size_t length) {
  Relation rel;
  rel.a.resize(channels, channels);
  rel.zero_norm.assign(channels, false);
  std::vector<double> norm(channels);
  for (std::size_t i = 0; i < channels; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < length; ++p) {
      const double v = rows[i * length + p];
      s += v * v;
    }
    norm[i] = std::sqrt(s);
    rel.zero_norm[i] = norm[i] == 0.0;
  }
  for (std::size_t i = 0; i < channels; ++i)
    for (std::size_t j = i; j < channels; ++j) {
      double v = 0.0;
      if (!rel.zero_norm[i] && !rel.zero_norm[j]) {
        double dot = 0.0;
        for (std::size_t p = 0; p < length; ++p)
          dot += static_cast<double>(rows[i * length + p]) * static_cast<double>(rows[j * length + p]);
        v = i == j ? 1.0 : std::clamp(dot / (norm[i] * norm[j]), -1.0, 1.0);
      }
      rel.a(i, j) = rel.a(j, i) = v;
    }
  return rel;
}

template Relation relation_matrix(const float*, std::size_t, std::size_t);
template Relation relation_matrix(const double*, std::size_t, std::size_t);

MatrixD normalize(const MatrixD& a_pruned) {
  const std::size_t n = a_pruned.rows();
  MatrixD hat = a_pruned;
  for (std::size_t i = 0; i < n; ++i) hat(i, i) += 1.0;
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += hat(i, j);
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  MatrixD out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = inv_sqrt[i] * hat(i, j) * inv_sqrt[j];
  return out;
}

RelationGraph build_graph(const MatrixD& a_raw, const montage::NeighborTable& knn, std::size_t k) {
  const std::size_t n = a_raw.rows();
  if (knn.size() != n) throw ConfigError("neighbour table does not match the relation matrix");
  if (k == 0) throw ConfigError("top-k must be at least 1");
  RelationGraph g;
  g.a_raw = a_raw;
  g.a_directed.resize(n, n);
  g.a_pruned.resize(n, n);
  const std::size_t n_s = knn.empty() ? 0 : knn.front().size();
  g.k = std::min(k, n_s);
  g.k_clamped = k > n_s;

  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::size_t j : knn[i])
      if (j != i) cand.emplace_back(std::abs(a_raw(i, j)), j);
    std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t e = 0; e < std::min(g.k, cand.size()); ++e)
      g.a_directed(i, cand[e].second) = cand[e].first;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      g.a_pruned(i, j) = std::max(g.a_directed(i, j), g.a_directed(j, i));
  g.a_norm = normalize(g.a_pruned);
  return g;
}

std::vector<RelationGraph> build_graphs(const signalio::PatchTensor<float>& visible,
                                        const montage::NeighborTable& knn, std::size_t k) {
  std::vector<RelationGraph> graphs;
  std::vector<float> block(visible.channels * visible.patch);
  for (std::size_t g = 0; g < visible.groups; ++g) {
    for (std::size_t c = 0; c < visible.channels; ++c)
      std::copy_n(visible.patch_ptr(c, g), visible.patch, block.begin() + static_cast<long>(c * visible.patch));
    const Relation rel = relation_matrix(block.data(), visible.channels, visible.patch);
    RelationGraph graph = build_graph(rel.a, knn, k);
    graph.group = g;
    graphs.push_back(std::move(graph));
  }
  return graphs;
}

double spectral_radius(const MatrixD& a, int iterations) {
  const std::size_t n = a.rows();
  std::vector<double> v(n), w(n);
  // Deterministic non-degenerate start.
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i % 7);
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += v[i] * v[i];
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (auto& x : v) x /= norm;
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a(i, j) * v[j];
      w[i] = s;
    }
    double rq = 0.0;
    for (std::size_t i = 0; i < n; ++i) rq += v[i] * w[i];
    lambda = rq;
    v.swap(w);
  }
  return std::abs(lambda);
}

}  // namespace topodiff::relgraph
