#pragma once

// Diffusion transformer denoiser.
//
// Sequence layout for one sample:
//   [ topo tokens (n_topo) | cond tokens (C_LR * T_p) | noisy tokens (C_unseen * T_p) ]
// EEG tokens are channel-major: row c*T_p + g holds patch g of channel c.
// Every layer runs a token block (attention over the whole sequence) and a
// temporal block (attention among the T_p tokens of one channel; topo tokens
// pass through untouched).

#include "topodiff/errors.hpp"
#include "topodiff/kernels.hpp"
#include "topodiff/montage.hpp"
#include "topodiff/nn.hpp"
#include "topodiff/relgraph.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace topodiff::dit {

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t width = 800;
  std::size_t patch = 50;
  std::size_t heads = 8;
  std::size_t mlp_ratio = 4;
  std::size_t time_dim = 128;
  std::size_t groups = 16;  // T_p
  std::size_t topo_grid = 2;  // h = w
  std::size_t topo_dim = 4;   // d
  bool use_topo = true;
  bool use_graph = true;
  std::vector<std::size_t> visible_hr;  // HR row of each visible channel
  std::vector<std::size_t> unseen_hr;   // HR row of each unseen channel

  std::size_t c_lr() const { return visible_hr.size(); }
  std::size_t c_unseen() const { return unseen_hr.size(); }
  std::size_t c_hr() const { return c_lr() + c_unseen(); }
  std::size_t samples() const { return groups * patch; }
  std::size_t n_topo() const { return use_topo ? groups * topo_grid * topo_grid : 0; }
  std::size_t n_cond() const { return c_lr() * groups; }
  std::size_t n_noisy() const { return c_unseen() * groups; }
  std::size_t seq_len() const { return n_topo() + n_cond() + n_noisy(); }

  void validate() const {
    if (heads == 0 || width % heads != 0) throw ConfigError("width must be divisible by heads");
    if (layers == 0 || patch == 0 || groups == 0) throw ConfigError("layers, patch and groups must be positive");
    if (time_dim == 0 || time_dim % 2 != 0) throw ConfigError("time_dim must be even");
    if (visible_hr.empty() || unseen_hr.empty()) throw ConfigError("model needs visible and unseen channels");
  }
};

/// Per-sample inputs. Pointers are required only when the matching switch
/// is on.
template <typename T>
struct DenoiserInput {
  const Matrix<T>* cond_tokens = nullptr;        // (C_LR*T_p) x P visible patches
  const std::vector<Matrix<T>>* graphs = nullptr;  // T_p normalized adjacencies
  const Matrix<T>* topo_features = nullptr;      // (T_p*h*w) x d
  const Matrix<T>* noisy = nullptr;              // C_unseen x T
  double t = 0.0;
};

template <typename T>
struct ForwardCache {
  Matrix<T> noisy_tokens;
  Matrix<T> time_feat, time_pre, time_act, time_emb;
  std::vector<relgraph::GnnCache<T>> gnn;
  std::vector<nn::BlockCache<T>> token, temporal;
  nn::LayerNormCache<T> ln_f;
  Matrix<T> eeg_final, eeg_norm;
};

/// 128-dim (by default) sinusoidal features of t, frequencies
/// exp(-ln(1e4) i / half) applied to 1000 t; cosines first.
template <typename T>
Matrix<T> time_features(double t, std::size_t dim) {
  Matrix<T> f(1, dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = 1000.0 * t * freq;
    f(0, i) = static_cast<T>(std::cos(arg));
    f(0, half + i) = static_cast<T>(std::sin(arg));
  }
  return f;
}

template <typename T>
class Denoiser {
 public:
  explicit Denoiser(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    register_params();
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamSet<T>& params() { return ps_; }
  const nn::ParamSet<T>& params() const { return ps_; }

  /// Xavier weights, zero biases, unit norm gains, zero output head.
  /// `slot_xy` (one planar position per HR channel) seeds the positional
  /// table with geometry-aware sinusoids when given.
  void init(std::uint64_t seed, const std::vector<montage::Vec2>* slot_xy = nullptr) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < ps_.size(); ++i) {
      const std::string& n = ps_.name(i);
      Matrix<T>& m = ps_[i];
      if (n.ends_with(".g")) {
        m.fill(T(1));
      } else if (n == "pos") {
        nn::init_normal(m, 0.02, rng);
      } else if (n.starts_with("head.")) {
        m.fill(T(0));
      } else if (m.rows() > 1) {
        nn::init_xavier(m, rng);
      } else {
        m.fill(T(0));
      }
    }
    if (slot_xy) add_geometry_positions(*slot_xy);
  }

  /// Sequence before the first block: token rows plus slot positions plus
  /// the time embedding.
  Matrix<T> assemble_sequence(const DenoiserInput<T>& in, ForwardCache<T>* cache = nullptr) const {
    check_input(in);
    const std::size_t d = cfg_.width, tp = cfg_.groups;
    const std::size_t n_topo = cfg_.n_topo(), n_cond = cfg_.n_cond();
    Matrix<T> seq(cfg_.seq_len(), d);
    Matrix<T> block;

    if (cfg_.use_topo) {
      nn::linear_forward(*in.topo_features, ps_[id_.topo_w], &ps_[id_.topo_b], block);
      copy_rows(block, seq, 0);
    }

    if (cfg_.use_graph) {
      if (cache) cache->gnn.resize(tp);
      Matrix<T> xg(cfg_.c_lr(), cfg_.patch);
      for (std::size_t g = 0; g < tp; ++g) {
        for (std::size_t c = 0; c < cfg_.c_lr(); ++c) {
          const auto src = in.cond_tokens->row(c * tp + g);
          std::copy(src.begin(), src.end(), xg.row(c).begin());
        }
        const Matrix<T> z = relgraph::gnn_forward((*in.graphs)[g], xg, gnn_weights(),
                                                  cache ? &cache->gnn[g] : nullptr);
        for (std::size_t c = 0; c < cfg_.c_lr(); ++c)
          std::copy(z.row(c).begin(), z.row(c).end(), seq.row(n_topo + c * tp + g).begin());
      }
    } else {
      nn::linear_forward(*in.cond_tokens, ps_[id_.gnn_w_in], &ps_[id_.gnn_b_in], block);
      copy_rows(block, seq, n_topo);
    }

    Matrix<T> noisy_tokens(cfg_.n_noisy(), cfg_.patch);
    std::copy(in.noisy->data(), in.noisy->data() + in.noisy->size(), noisy_tokens.data());
    nn::linear_forward(noisy_tokens, ps_[id_.noisy_w], &ps_[id_.noisy_b], block);
    copy_rows(block, seq, n_topo + n_cond);

    const Matrix<T>& pos = ps_[id_.pos];
    for (std::size_t r = 0; r < seq.rows(); ++r) {
      const auto p = pos.row(slot_of(r));
      auto s = seq.row(r);
      for (std::size_t k = 0; k < d; ++k) s[k] += p[k];
    }

    Matrix<T> tf = time_features<T>(in.t, cfg_.time_dim), pre, emb;
    nn::linear_forward(tf, ps_[id_.time_w1], &ps_[id_.time_b1], pre);
    Matrix<T> act = nn::map(pre, [](T v) { return nn::silu(v); });
    nn::linear_forward(act, ps_[id_.time_w2], &ps_[id_.time_b2], emb);
    for (std::size_t r = 0; r < seq.rows(); ++r) {
      auto s = seq.row(r);
      for (std::size_t k = 0; k < d; ++k) s[k] += emb(0, k);
    }

    if (cache) {
      cache->noisy_tokens = std::move(noisy_tokens);
      cache->time_feat = std::move(tf);
      cache->time_pre = std::move(pre);
      cache->time_act = std::move(act);
      cache->time_emb = std::move(emb);
    }
    return seq;
  }

  /// Clean-signal prediction for all C_HR channels (HR row order).
  Matrix<T> forward(const DenoiserInput<T>& in, ForwardCache<T>* cache = nullptr) const {
    ForwardCache<T> local;
    ForwardCache<T>& c = cache ? *cache : local;
    Matrix<T> x = assemble_sequence(in, &c);
    c.token.resize(cfg_.layers);
    c.temporal.resize(cfg_.layers);
    const std::size_t n_topo = cfg_.n_topo();
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      x = nn::block_forward(ps_, id_.token[l], cfg_.heads, token_spans(), x, c.token[l]);
      Matrix<T> eeg = rows_from(x, n_topo);
      eeg = nn::block_forward(ps_, id_.temporal[l], cfg_.heads, temporal_spans(), eeg, c.temporal[l]);
      copy_rows(eeg, x, n_topo);
      if (!all_finite(x))
        throw NumericalError("non-finite activation after denoiser layer " + std::to_string(l));
    }
    c.eeg_final = rows_from(x, n_topo);
    nn::layernorm_forward(c.eeg_final, ps_[id_.head_g], ps_[id_.head_ln_b], c.eeg_norm, c.ln_f);
    Matrix<T> out_tokens;
    nn::linear_forward(c.eeg_norm, ps_[id_.head_w], &ps_[id_.head_b], out_tokens);
    return tokens_to_signal(out_tokens);
  }

  /// Accumulates parameter gradients for dL/d(x_pred).
  void backward(const ForwardCache<T>& c, const Matrix<T>& dpred, const DenoiserInput<T>& in,
                nn::ParamSet<T>& grads) const {
    const std::size_t n_topo = cfg_.n_topo(), tp = cfg_.groups, d = cfg_.width;
    const Matrix<T> dtokens = signal_to_tokens(dpred);
    Matrix<T> dnorm, deeg;
    nn::linear_backward(c.eeg_norm, ps_[id_.head_w], dtokens, grads[id_.head_w], &grads[id_.head_b], &dnorm);
    nn::layernorm_backward(dnorm, ps_[id_.head_g], c.ln_f, grads[id_.head_g], grads[id_.head_ln_b], deeg);

    Matrix<T> dx(cfg_.seq_len(), d);
    copy_rows(deeg, dx, n_topo);
    for (std::size_t l = cfg_.layers; l-- > 0;) {
      Matrix<T> de = rows_from(dx, n_topo);
      de = nn::block_backward(ps_, grads, id_.temporal[l], cfg_.heads, temporal_spans(), c.temporal[l], de);
      copy_rows(de, dx, n_topo);
      dx = nn::block_backward(ps_, grads, id_.token[l], cfg_.heads, token_spans(), c.token[l], dx);
    }

    // Time embedding receives the column sums.
    Matrix<T> demb(1, d);
    for (std::size_t r = 0; r < dx.rows(); ++r)
      for (std::size_t k = 0; k < d; ++k) demb(0, k) += dx(r, k);
    Matrix<T> dact;
    nn::linear_backward(c.time_act, ps_[id_.time_w2], demb, grads[id_.time_w2], &grads[id_.time_b2], &dact);
    for (std::size_t k = 0; k < dact.cols(); ++k) dact(0, k) *= nn::silu_grad(c.time_pre(0, k));
    nn::linear_backward(c.time_feat, ps_[id_.time_w1], dact, grads[id_.time_w1], &grads[id_.time_b1], nullptr);

    Matrix<T>& dpos = grads[id_.pos];
    for (std::size_t r = 0; r < dx.rows(); ++r) {
      auto p = dpos.row(slot_of(r));
      const auto s = dx.row(r);
      for (std::size_t k = 0; k < d; ++k) p[k] += s[k];
    }

    if (cfg_.use_topo) {
      const Matrix<T> dtopo = rows_range(dx, 0, n_topo);
      nn::linear_backward(*in.topo_features, ps_[id_.topo_w], dtopo, grads[id_.topo_w], &grads[id_.topo_b], nullptr);
    }

    const Matrix<T> dcond = rows_range(dx, n_topo, cfg_.n_cond());
    if (cfg_.use_graph) {
      Matrix<T> dz(cfg_.c_lr(), d);
      for (std::size_t g = 0; g < tp; ++g) {
        for (std::size_t ch = 0; ch < cfg_.c_lr(); ++ch) {
          const auto src = dcond.row(ch * tp + g);
          std::copy(src.begin(), src.end(), dz.row(ch).begin());
        }
        relgraph::gnn_backward(c.gnn[g], gnn_weights(), dz, gnn_grads(grads));
      }
    } else {
      nn::linear_backward(*in.cond_tokens, ps_[id_.gnn_w_in], dcond, grads[id_.gnn_w_in], &grads[id_.gnn_b_in], nullptr);
    }

    const Matrix<T> dnoisy = rows_range(dx, n_topo + cfg_.n_cond(), cfg_.n_noisy());
    nn::linear_backward(c.noisy_tokens, ps_[id_.noisy_w], dnoisy, grads[id_.noisy_w], &grads[id_.noisy_b], nullptr);
  }

  std::vector<kernels::Span> token_spans() const { return {{0, cfg_.seq_len()}}; }

  /// One span per channel over the EEG rows (topo rows excluded).
  std::vector<kernels::Span> temporal_spans() const {
    std::vector<kernels::Span> spans;
    for (std::size_t c = 0; c < cfg_.c_hr(); ++c) spans.push_back({c * cfg_.groups, cfg_.groups});
    return spans;
  }

  /// Positional-table row used by sequence row r.
  std::size_t slot_of(std::size_t r) const {
    const std::size_t n_topo = cfg_.n_topo(), n_cond = cfg_.n_cond(), tp = cfg_.groups;
    if (r < n_topo) return r;
    if (r < n_topo + n_cond) {
      const std::size_t e = r - n_topo;
      return n_topo + cfg_.visible_hr[e / tp] * tp + e % tp;
    }
    const std::size_t e = r - n_topo - n_cond;
    return n_topo + cfg_.unseen_hr[e / tp] * tp + e % tp;
  }

  relgraph::GnnWeights<T> gnn_weights() const {
    return {ps_[id_.gnn_w_in], ps_[id_.gnn_b_in], ps_[id_.gnn_w1],
            ps_[id_.gnn_b1],   ps_[id_.gnn_w2],   ps_[id_.gnn_b2]};
  }

 private:
  struct Ids {
    std::size_t topo_w = 0, topo_b = 0;
    std::size_t gnn_w_in = 0, gnn_b_in = 0, gnn_w1 = 0, gnn_b1 = 0, gnn_w2 = 0, gnn_b2 = 0;
    std::size_t noisy_w = 0, noisy_b = 0, pos = 0;
    std::size_t time_w1 = 0, time_b1 = 0, time_w2 = 0, time_b2 = 0;
    std::vector<nn::BlockIds> token, temporal;
    std::size_t head_g = 0, head_ln_b = 0, head_w = 0, head_b = 0;
  };

  void register_params() {
    const std::size_t d = cfg_.width, p = cfg_.patch;
    if (cfg_.use_topo) {
      id_.topo_w = ps_.add("topo.proj.w", cfg_.topo_dim, d);
      id_.topo_b = ps_.add("topo.proj.b", 1, d);
    }
    id_.gnn_w_in = ps_.add("gnn.w_in", p, d);
    id_.gnn_b_in = ps_.add("gnn.b_in", 1, d);
    if (cfg_.use_graph) {
      id_.gnn_w1 = ps_.add("gnn.w1", d, d);
      id_.gnn_b1 = ps_.add("gnn.b1", 1, d);
      id_.gnn_w2 = ps_.add("gnn.w2", d, d);
      id_.gnn_b2 = ps_.add("gnn.b2", 1, d);
    }
    id_.noisy_w = ps_.add("noisy.embed.w", p, d);
    id_.noisy_b = ps_.add("noisy.embed.b", 1, d);
    id_.pos = ps_.add("pos", cfg_.n_topo() + cfg_.c_hr() * cfg_.groups, d);
    id_.time_w1 = ps_.add("time.w1", cfg_.time_dim, d);
    id_.time_b1 = ps_.add("time.b1", 1, d);
    id_.time_w2 = ps_.add("time.w2", d, d);
    id_.time_b2 = ps_.add("time.b2", 1, d);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string pre = "blocks." + std::to_string(l);
      id_.token.push_back(nn::register_block(ps_, pre + ".token", d, d * cfg_.mlp_ratio));
      id_.temporal.push_back(nn::register_block(ps_, pre + ".temporal", d, d * cfg_.mlp_ratio));
    }
    id_.head_g = ps_.add("head.ln.g", 1, d);
    id_.head_ln_b = ps_.add("head.ln.b", 1, d);
    id_.head_w = ps_.add("head.w", d, p);
    id_.head_b = ps_.add("head.b", 1, p);
  }

  void add_geometry_positions(const std::vector<montage::Vec2>& slot_xy) {
    if (slot_xy.size() != cfg_.c_hr()) throw ConfigError("need one planar position per HR channel");
    Matrix<T>& pos = ps_[id_.pos];
    const std::size_t d = cfg_.width, q = d / 4, n_topo = cfg_.n_topo(), tp = cfg_.groups;
    auto fill = [&](std::size_t slot, double x, double y, double g) {
      auto row = pos.row(slot);
      for (std::size_t k = 0; k < q / 2; ++k) {
        const double f = 3.14159265358979 * static_cast<double>(k + 1) / 2.0;
        row[2 * k] += static_cast<T>(std::sin(f * x));
        row[2 * k + 1] += static_cast<T>(std::cos(f * x));
        row[q + 2 * k] += static_cast<T>(std::sin(f * y));
        row[q + 2 * k + 1] += static_cast<T>(std::cos(f * y));
      }
      const std::size_t half = (d - 2 * q) / 2;
      for (std::size_t k = 0; k < half; ++k) {
        const double f = std::exp(-std::log(100.0) * static_cast<double>(k) / static_cast<double>(half));
        row[2 * q + k] += static_cast<T>(std::sin(g * f));
        row[2 * q + half + k] += static_cast<T>(std::cos(g * f));
      }
    };
    const std::size_t cells = cfg_.topo_grid * cfg_.topo_grid;
    for (std::size_t r = 0; r < n_topo; ++r) {
      const std::size_t cell = r % cells, grid = cfg_.topo_grid;
      const double x = -1.0 + (2.0 * static_cast<double>(cell % grid) + 1.0) / static_cast<double>(grid);
      const double y = 1.0 - (2.0 * static_cast<double>(cell / grid) + 1.0) / static_cast<double>(grid);
      fill(r, x, y, static_cast<double>(r / cells));
    }
    for (std::size_t ch = 0; ch < cfg_.c_hr(); ++ch)
      for (std::size_t g = 0; g < tp; ++g)
        fill(n_topo + ch * tp + g, slot_xy[ch][0], slot_xy[ch][1], static_cast<double>(g));
  }

  void check_input(const DenoiserInput<T>& in) const {
    const std::size_t tp = cfg_.groups;
    if (!in.cond_tokens || in.cond_tokens->rows() != cfg_.n_cond() || in.cond_tokens->cols() != cfg_.patch)
      throw ConfigError("conditioning tokens must be (C_LR*T_p) x P");
    if (!in.noisy || in.noisy->rows() != cfg_.c_unseen() || in.noisy->cols() != cfg_.samples())
      throw ConfigError("noisy input must be C_unseen x T");
    if (cfg_.use_graph && (!in.graphs || in.graphs->size() != tp))
      throw ConfigError("graph conditioning needs one adjacency per temporal group");
    if (cfg_.use_topo &&
        (!in.topo_features || in.topo_features->rows() != cfg_.n_topo() ||
         in.topo_features->cols() != cfg_.topo_dim))
      throw ConfigError("topo features must be (T_p*h*w) x d");
    if (!(in.t >= 0.0 && in.t < 1.0)) throw ConfigError("diffusion time must lie in [0, 1)");
  }

  relgraph::GnnGrads<T> gnn_grads(nn::ParamSet<T>& g) const {
    return {g[id_.gnn_w_in], g[id_.gnn_b_in], g[id_.gnn_w1], g[id_.gnn_b1], g[id_.gnn_w2], g[id_.gnn_b2]};
  }

  static void copy_rows(const Matrix<T>& src, Matrix<T>& dst, std::size_t row0) {
    std::copy(src.data(), src.data() + src.size(), dst.data() + row0 * dst.cols());
  }

  static Matrix<T> rows_range(const Matrix<T>& m, std::size_t row0, std::size_t n) {
    Matrix<T> out(n, m.cols());
    std::copy(m.data() + row0 * m.cols(), m.data() + (row0 + n) * m.cols(), out.data());
    return out;
  }

  static Matrix<T> rows_from(const Matrix<T>& m, std::size_t row0) {
    return rows_range(m, row0, m.rows() - row0);
  }

  // EEG token rows (cond then noisy) -> C_HR x T in HR order.
  Matrix<T> tokens_to_signal(const Matrix<T>& tokens) const {
    const std::size_t tp = cfg_.groups, p = cfg_.patch;
    Matrix<T> out(cfg_.c_hr(), cfg_.samples());
    for (std::size_t ch = 0; ch < cfg_.c_hr(); ++ch) {
      const std::size_t hr = ch < cfg_.c_lr() ? cfg_.visible_hr[ch] : cfg_.unseen_hr[ch - cfg_.c_lr()];
      std::copy(tokens.data() + ch * tp * p, tokens.data() + (ch + 1) * tp * p, out.row(hr).begin());
    }
    return out;
  }

  Matrix<T> signal_to_tokens(const Matrix<T>& signal) const {
    const std::size_t tp = cfg_.groups, p = cfg_.patch;
    Matrix<T> out(cfg_.c_hr() * tp, p);
    for (std::size_t ch = 0; ch < cfg_.c_hr(); ++ch) {
      const std::size_t hr = ch < cfg_.c_lr() ? cfg_.visible_hr[ch] : cfg_.unseen_hr[ch - cfg_.c_lr()];
      std::copy(signal.row(hr).begin(), signal.row(hr).end(), out.data() + ch * tp * p);
    }
    return out;
  }

  ModelConfig cfg_;
  nn::ParamSet<T> ps_;
  Ids id_;
};

}  // namespace topodiff::dit
