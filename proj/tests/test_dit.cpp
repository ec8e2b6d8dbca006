#include "doctest.h"

#include "topodiff/dit.hpp"
#include "topodiff/errors.hpp"
#include "topodiff/relgraph.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace topodiff;
using namespace topodiff::dit;

namespace {

ModelConfig tiny(bool topo = true, bool graph = true) {
  ModelConfig c;
  c.layers = 2;
  c.width = 8;
  c.patch = 4;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.time_dim = 8;
  c.groups = 3;
  c.topo_grid = 2;
  c.topo_dim = 4;
  c.use_topo = topo;
  c.use_graph = graph;
  c.visible_hr = {0, 2};
  c.unseen_hr = {1, 3, 4};
  return c;
}

template <typename T>
Matrix<T> randm(std::size_t r, std::size_t c, std::mt19937& rng, double s = 1.0) {
  std::normal_distribution<double> d(0.0, s);
  Matrix<T> m(r, c);
  for (auto& v : m.storage()) v = static_cast<T>(d(rng));
  return m;
}

template <typename T>
struct Inputs {
  Matrix<T> cond, topo, noisy;
  std::vector<Matrix<T>> graphs;
  DenoiserInput<T> view(double t) const {
    DenoiserInput<T> in;
    in.cond_tokens = &cond;
    in.topo_features = &topo;
    in.noisy = &noisy;
    in.graphs = &graphs;
    in.t = t;
    return in;
  }
};

Inputs<double> make_inputs(const ModelConfig& c, std::mt19937& rng) {
  Inputs<double> in;
  in.cond = randm<double>(c.n_cond(), c.patch, rng);
  in.topo = randm<double>(c.groups * c.topo_grid * c.topo_grid, c.topo_dim, rng);
  in.noisy = randm<double>(c.c_unseen(), c.samples(), rng);
  for (std::size_t g = 0; g < c.groups; ++g) {
    MatrixD a(c.c_lr(), c.c_lr());
    a(0, 1) = a(1, 0) = 0.3 + 0.2 * static_cast<double>(g);
    in.graphs.push_back(relgraph::normalize(a));
  }
  return in;
}

template <typename T>
Inputs<T> cast_inputs(const Inputs<double>& in) {
  Inputs<T> out{in.cond.cast<T>(), in.topo.cast<T>(), in.noisy.cast<T>(), {}};
  for (const auto& g : in.graphs) out.graphs.push_back(g.cast<T>());
  return out;
}

// Every tensor random; gains near one so layer norms stay well scaled.
void randomize(nn::ParamSet<double>& ps, std::mt19937& rng) {
  std::normal_distribution<double> d(0.0, 0.4);
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (auto& v : ps[i].storage()) v = (ps.name(i).ends_with(".g") ? 1.0 : 0.0) + d(rng);
}

double dot(const MatrixD& a, const MatrixD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

}  // namespace

TEST_CASE("sequence geometry of the SEED 2x preset") {
  ModelConfig c;
  c.patch = 50;
  c.groups = 16;
  for (std::size_t i = 0; i < 62; ++i) (i < 32 ? c.visible_hr : c.unseen_hr).push_back(i);
  REQUIRE(c.c_lr() == 32);
  REQUIRE(c.c_unseen() == 30);
  CHECK(c.n_topo() == 64);
  CHECK(c.n_cond() == 512);
  CHECK(c.n_noisy() == 480);
  CHECK(c.seq_len() == 1056);
  c.use_topo = false;
  CHECK(c.seq_len() == 992);
}

TEST_CASE("switches change parameters and sequence length") {
  const Denoiser<double> full(tiny()), no_topo(tiny(false, true)), plain(tiny(false, false));
  CHECK(full.config().seq_len() == 12 + 6 + 9);
  CHECK(no_topo.config().seq_len() == 15);
  CHECK(full.params().find("topo.proj.w") != nn::ParamSet<double>::npos);
  CHECK(no_topo.params().find("topo.proj.w") == nn::ParamSet<double>::npos);
  CHECK(no_topo.params().find("gnn.w1") != nn::ParamSet<double>::npos);
  CHECK(plain.params().find("gnn.w1") == nn::ParamSet<double>::npos);
  CHECK(plain.params().find("gnn.w_in") != nn::ParamSet<double>::npos);
  CHECK(full.params().at("pos").rows() == 12 + 5 * 3);
}

TEST_CASE("zero inputs give the broadcast time embedding") {
  std::mt19937 rng(1);
  Denoiser<double> m(tiny());
  m.init(11);
  m.params().at("pos").fill(0.0);
  const auto c = m.config();
  Inputs<double> in = make_inputs(c, rng);
  in.cond.fill(0.0);
  in.topo.fill(0.0);
  in.noisy.fill(0.0);
  const double t = 0.37;
  const auto seq = m.assemble_sequence(in.view(t));

  const auto& ps = m.params();
  const auto tf = time_features<double>(t, c.time_dim);
  std::vector<double> hidden(c.width), emb(c.width);
  for (std::size_t j = 0; j < c.width; ++j) {
    double s = ps.at("time.b1")(0, j);
    for (std::size_t i = 0; i < c.time_dim; ++i) s += tf(0, i) * ps.at("time.w1")(i, j);
    hidden[j] = s / (1.0 + std::exp(-s));
  }
  for (std::size_t j = 0; j < c.width; ++j) {
    double s = ps.at("time.b2")(0, j);
    for (std::size_t i = 0; i < c.width; ++i) s += hidden[i] * ps.at("time.w2")(i, j);
    emb[j] = s;
  }
  for (std::size_t r = 0; r < seq.rows(); ++r)
    for (std::size_t j = 0; j < c.width; ++j) CHECK(seq(r, j) == doctest::Approx(emb[j]).epsilon(1e-12));
}

TEST_CASE("time features put cosines first") {
  const auto f = time_features<double>(0.0, 6);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(f(0, i) == 1.0);
    CHECK(f(0, 3 + i) == 0.0);
  }
  const auto g = time_features<double>(0.5, 4);
  CHECK(g(0, 0) == doctest::Approx(std::cos(500.0)));
  CHECK(g(0, 3) == doctest::Approx(std::sin(500.0 * 0.01)));
}

TEST_CASE("every token depends on t") {
  std::mt19937 rng(2);
  Denoiser<double> m(tiny());
  m.init(3);
  const auto in = make_inputs(m.config(), rng);
  const auto a = m.assemble_sequence(in.view(0.1)), b = m.assemble_sequence(in.view(0.6));
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double diff = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) diff += std::fabs(a(r, j) - b(r, j));
    CHECK(diff > 0.0);
  }
}

TEST_CASE("input validation") {
  std::mt19937 rng(3);
  Denoiser<double> m(tiny());
  m.init(1);
  auto in = make_inputs(m.config(), rng);
  CHECK_THROWS_AS(m.forward(in.view(1.0)), ConfigError);
  CHECK_THROWS_AS(m.forward(in.view(-0.1)), ConfigError);
  auto bad = in;
  bad.noisy = MatrixD(3, 11);
  CHECK_THROWS_AS(m.forward(bad.view(0.2)), ConfigError);
  bad = in;
  bad.graphs.pop_back();
  CHECK_THROWS_AS(m.forward(bad.view(0.2)), ConfigError);
  ModelConfig c = tiny();
  c.heads = 3;
  CHECK_THROWS_AS(Denoiser<double>{c}, ConfigError);
}

TEST_CASE("fresh model predicts zeros and the head bias is broadcast") {
  std::mt19937 rng(4);
  Denoiser<double> m(tiny());
  m.init(5);
  const auto in = make_inputs(m.config(), rng);
  const auto out = m.forward(in.view(0.3));
  CHECK(out.rows() == 5);
  CHECK(out.cols() == 12);
  for (double v : out.storage()) CHECK(v == 0.0);

  m.params().zero();
  const std::vector<double> beta = {0.5, -1.0, 2.0, 0.25};
  for (std::size_t i = 0; i < 4; ++i) m.params().at("head.b")(0, i) = beta[i];
  const auto y = m.forward(in.view(0.8));
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t s = 0; s < y.cols(); ++s) CHECK(y(r, s) == beta[s % 4]);
}

TEST_CASE("forward is deterministic") {
  std::mt19937 rng(5);
  Denoiser<double> m(tiny());
  m.init(7);
  randomize(m.params(), rng);
  const auto in = make_inputs(m.config(), rng);
  CHECK(m.forward(in.view(0.4)) == m.forward(in.view(0.4)));
  Denoiser<double> m2(tiny());
  m2.init(7);
  Denoiser<double> m3(tiny());
  m3.init(7);
  CHECK(m2.forward(in.view(0.4)) == m3.forward(in.view(0.4)));
  for (std::size_t i = 0; i < m2.params().size(); ++i) CHECK(m2.params()[i] == m3.params()[i]);
}

TEST_CASE("denoiser gradients match central differences") {
  for (auto [topo, graph] : {std::pair{true, true}, std::pair{false, false}}) {
    std::mt19937 rng(6);
    Denoiser<double> m(tiny(topo, graph));
    m.init(9);
    randomize(m.params(), rng);
    const auto in = make_inputs(m.config(), rng);
    const auto r = randm<double>(5, 12, rng);
    const double t = 0.45;
    ForwardCache<double> cache;
    m.forward(in.view(t), &cache);
    auto grads = m.params().zeros_like();
    m.backward(cache, r, in.view(t), grads);

    std::uniform_int_distribution<std::size_t> pick(0, 1 << 20);
    std::size_t checked = 0;
    for (std::size_t p = 0; p < m.params().size(); ++p) {
      auto& w = m.params()[p];
      for (int probe = 0; probe < 3; ++probe) {
        const std::size_t i = pick(rng) % w.size();
        const double h = 1e-5, keep = w.data()[i];
        w.data()[i] = keep + h;
        const double lp = dot(m.forward(in.view(t)), r);
        w.data()[i] = keep - h;
        const double lm = dot(m.forward(in.view(t)), r);
        w.data()[i] = keep;
        const double fd = (lp - lm) / (2 * h), an = grads[p].data()[i];
        INFO(m.params().name(p), "[", i, "] fd=", fd, " analytic=", an);
        CHECK(std::fabs(fd - an) <= 1e-4 * std::max(1.0, std::fabs(fd)));
        ++checked;
      }
    }
    CHECK(checked == 3 * m.params().size());
  }
}

TEST_CASE("single and double precision agree") {
  std::mt19937 rng(7);
  Denoiser<double> md(tiny());
  md.init(13);
  randomize(md.params(), rng);
  Denoiser<float> mf(tiny());
  mf.params() = md.params().cast<float>();
  const auto in = make_inputs(md.config(), rng);
  const auto inf = cast_inputs<float>(in);
  const auto yd = md.forward(in.view(0.25));
  const auto yf = mf.forward(inf.view(0.25)).cast<double>();
  double scale = 0.0;
  for (double v : yd.storage()) scale = std::max(scale, std::fabs(v));
  CHECK(max_abs_diff(yd, yf) <= 1e-3 * scale);
}

TEST_CASE("token block is permutation-equivariant") {
  std::mt19937 rng(8);
  nn::ParamSet<double> ps;
  const auto id = nn::register_block(ps, "b", 8, 16);
  randomize(ps, rng);
  const std::size_t s = 11;
  const auto x = randm<double>(s, 8, rng);
  std::vector<std::size_t> perm(s);
  for (std::size_t i = 0; i < s; ++i) perm[i] = (i * 4 + 3) % s;
  MatrixD xp(s, 8);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < 8; ++j) xp(i, j) = x(perm[i], j);
  nn::BlockCache<double> c1, c2;
  const auto y = nn::block_forward(ps, id, 2, {{0, s}}, x, c1);
  const auto yp = nn::block_forward(ps, id, 2, {{0, s}}, xp, c2);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(std::fabs(yp(i, j) - y(perm[i], j)) <= 1e-6);
}

TEST_CASE("channels with identical rows get identical temporal outputs") {
  std::mt19937 rng(9);
  nn::ParamSet<double> ps;
  const auto id = nn::register_block(ps, "b", 8, 16);
  randomize(ps, rng);
  const std::size_t tp = 4;
  auto x = randm<double>(3 * tp, 8, rng);
  for (std::size_t g = 0; g < tp; ++g)
    for (std::size_t j = 0; j < 8; ++j) x(2 * tp + g, j) = x(g, j);
  nn::BlockCache<double> c;
  const auto y = nn::block_forward(ps, id, 2, {{0, tp}, {tp, tp}, {2 * tp, tp}}, x, c);
  for (std::size_t g = 0; g < tp; ++g)
    for (std::size_t j = 0; j < 8; ++j) CHECK(y(2 * tp + g, j) == y(g, j));

  // One token per set: attention returns its own value projection.
  nn::BlockCache<double> c1;
  const auto x1 = randm<double>(3, 8, rng);
  nn::block_forward(ps, id, 2, {{0, 1}, {1, 1}, {2, 1}}, x1, c1);
  for (std::size_t i = 0; i < c1.attn.size(); ++i) CHECK(c1.attn.data()[i] == doctest::Approx(c1.v.data()[i]));
}

TEST_CASE("non-finite activations name the layer") {
  std::mt19937 rng(10);
  Denoiser<double> m(tiny());
  m.init(1);
  const auto in = make_inputs(m.config(), rng);
  m.params().at("blocks.1.temporal.mlp.b2")(0, 3) = std::numeric_limits<double>::quiet_NaN();
  try {
    m.forward(in.view(0.5));
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}
