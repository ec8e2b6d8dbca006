#include "doctest.h"

#include "topodiff/checkpoint.hpp"
#include "topodiff/config.hpp"
#include "topodiff/errors.hpp"
#include "topodiff/optim.hpp"
#include "topodiff/pipeline.hpp"
#include "topodiff/synth.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <cstring>
#include <sstream>

using namespace topodiff;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("topodiff_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

config::TrainConfig tiny_config() {
  return config::parse(R"(
dataset = synth
factor = 2
layers = 2
width = 64
heads = 4
mlp_ratio = 2
patch = 25
time_dim = 32
lr = 0.002
epochs = 20
batch_size = 2
sample_steps = 5
val_steps = 5
val_segments = 8
synth_train_subjects = 8
synth_val_subjects = 1
synth_test_subjects = 1
synth_segments_per_subject = 16
synth_window_s = 1
seed = 3
)");
}

// Synthetic data shared by the pipeline cases.
const fs::path& tiny_data() {
  static const fs::path dir = [] {
    const auto d = scratch("data");
    const auto cfg = tiny_config();
    synth::write_dataset(d.string(), "synth32", "synth", synth::SynthParams::from(cfg),
                         {cfg.synth_train_subjects, cfg.synth_val_subjects, cfg.synth_test_subjects,
                          cfg.synth_segments_per_subject},
                         cfg.seed);
    return d;
  }();
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TOPODIFF_CLI) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

// --- optimizer ------------------------------------------------------------------

TEST_CASE("adamw leaves parameters alone without gradient or decay") {
  nn::ParamSet<double> ps;
  ps[ps.add("w", 2, 3)].fill(0.7);
  auto g = ps.zeros_like();
  auto st = optim::AdamWState<double>::like(ps);
  CHECK(optim::adamw_step(ps, g, st, {1e-2, 0.9, 0.999, 1e-8, 0.0}));
  for (double v : ps[0].storage()) CHECK(v == 0.7);
  CHECK(st.step == 1);
}

TEST_CASE("adamw descends on w^2") {
  nn::ParamSet<double> ps;
  ps[ps.add("w", 1, 1)](0, 0) = 1.0;
  auto g = ps.zeros_like();
  g[0](0, 0) = 2.0;
  auto st = optim::AdamWState<double>::like(ps);
  optim::adamw_step(ps, g, st, {});
  CHECK(std::fabs(ps[0](0, 0)) < 1.0);
}

TEST_CASE("adamw matches a scalar reference over ten steps") {
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
  nn::ParamSet<double> ps;
  ps.add("w", 1, 2);
  ps[0](0, 0) = 1.5;
  ps[0](0, 1) = -0.4;
  auto st = optim::AdamWState<double>::like(ps);
  double w[2] = {1.5, -0.4}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int step = 1; step <= 10; ++step) {
    auto g = ps.zeros_like();
    for (int i = 0; i < 2; ++i) g[0](0, i) = 3.0 * ps[0](0, i) * ps[0](0, i) - 1.0;  // d/dw (w^3 - w)
    REQUIRE(optim::adamw_step(ps, g, st, {lr, b1, b2, eps, wd}));
    for (int i = 0; i < 2; ++i) {
      const double gi = 3.0 * w[i] * w[i] - 1.0;
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const double mh = m[i] / (1 - std::pow(b1, step)), vh = v[i] / (1 - std::pow(b2, step));
      w[i] = w[i] - lr * wd * w[i] - lr * mh / (std::sqrt(vh) + eps);
    }
    for (int i = 0; i < 2; ++i) CHECK(std::fabs(ps[0](0, i) - w[i]) <= 1e-10);
  }
}

TEST_CASE("adamw skips non-finite gradients") {
  nn::ParamSet<float> ps;
  ps[ps.add("a", 1, 2)].fill(1.0f);
  auto g = ps.zeros_like();
  g[0](0, 1) = std::numeric_limits<float>::quiet_NaN();
  auto st = optim::AdamWState<float>::like(ps);
  CHECK_FALSE(optim::adamw_step(ps, g, st, {}));
  CHECK(st.step == 0);
  CHECK(ps[0](0, 0) == 1.0f);
  CHECK(st.m[0](0, 0) == 0.0f);
}

TEST_CASE("cosine schedule and clipping") {
  CHECK(optim::cosine_lr(0, 100, 5e-4) == 5e-4);
  CHECK(optim::cosine_lr(100, 100, 5e-4) == doctest::Approx(0.0));
  CHECK(optim::cosine_lr(50, 100, 5e-4) == doctest::Approx(2.5e-4));
  CHECK(optim::cosine_lr(25, 100, 1.0) == doctest::Approx((1 + std::sqrt(0.5)) / 2));

  nn::ParamSet<double> g;
  g.add("a", 1, 2);
  g[0](0, 0) = 3.0;
  g[0](0, 1) = 4.0;
  CHECK(optim::clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g[0](0, 0) == doctest::Approx(0.6));
  CHECK(optim::clip_grad_norm(g, 10.0) == doctest::Approx(1.0));
  CHECK(g[0](0, 1) == doctest::Approx(0.8));
}

// --- configuration -------------------------------------------------------------

TEST_CASE("config parsing") {
  const auto d = config::TrainConfig{};
  CHECK(d.lr == 5e-4);
  CHECK(d.weight_decay == 0.01);
  CHECK(d.epochs == 300);
  CHECK(d.layers == 4);
  CHECK(d.width == 800);
  CHECK(d.n_s == 12);
  CHECK(d.effective_k() == 4);

  const auto c = config::parse("# comment\n\nfactor = 4\n  topo = off\ngraph=false\nlr = 1e-3\n");
  CHECK(c.factor == 4);
  CHECK(c.effective_k() == 6);
  CHECK_FALSE(c.topo);
  CHECK_FALSE(c.graph);
  CHECK(c.lr == 1e-3);

  CHECK_THROWS_AS(config::parse("colour = blue\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("layers = two\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("topo = maybe\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("just text\n"), ConfigError);
  CHECK_THROWS_AS(config::load("/nonexistent/file.conf"), ConfigError);

  auto e = c;
  config::apply(e, "velocity", "literal");
  config::apply(e, "seed", "99");
  const auto back = config::from_echo(config::echo(e));
  CHECK(config::echo(back) == config::echo(e));
  CHECK(back.velocity == diffusion::VelocityForm::kLiteral);
  CHECK(config::echo(config::parse(config::to_text(e))) == config::echo(e));
  for (const auto& k : config::documented_keys()) CHECK(config::echo(d).count(k.key) == 1);
}

// --- checkpoint -----------------------------------------------------------------

TEST_CASE("checkpoint round trip is bit-exact") {
  dit::ModelConfig mc;
  mc.layers = 1;
  mc.width = 8;
  mc.patch = 4;
  mc.heads = 2;
  mc.mlp_ratio = 2;
  mc.time_dim = 8;
  mc.groups = 2;
  mc.topo_dim = 4;
  mc.visible_hr = {0, 1};
  mc.unseen_hr = {2};
  dit::Denoiser<float> m(mc);
  m.init(5);
  std::mt19937 rng(1);
  std::normal_distribution<float> nd(0.0f, 0.3f);
  for (std::size_t i = 0; i < m.params().size(); ++i)
    for (auto& v : m.params()[i].storage()) v += nd(rng);

  checkpoint::ModelCheckpoint ck;
  ck.config = {{"a", "1"}, {"b", "two words"}};
  ck.step = 123456789012ull;
  ck.rng_state = "state text";
  checkpoint::put_params(ck, m.params(), "param/");
  const auto dir = scratch("ckpt");
  const std::string path = (dir / "m.tdck").string();
  checkpoint::save(path, ck);
  const auto back = checkpoint::load(path);
  CHECK(back.config == ck.config);
  CHECK(back.step == ck.step);
  CHECK(back.rng_state == ck.rng_state);
  REQUIRE(back.tensors.size() == ck.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    CHECK(back.tensors[i].name == ck.tensors[i].name);
    CHECK(back.tensors[i].dims == ck.tensors[i].dims);
    CHECK(std::memcmp(back.tensors[i].values.data(), ck.tensors[i].values.data(),
                      ck.tensors[i].values.size() * sizeof(float)) == 0);
  }

  dit::Denoiser<float> m2(mc);
  checkpoint::get_params(back, m2.params(), "param/");
  MatrixF cond(4, 4), topo(8, 4), noisy(1, 8);
  for (auto* x : {&cond, &topo, &noisy})
    for (auto& v : x->storage()) v = nd(rng);
  std::vector<MatrixF> graphs(2, relgraph::normalize(MatrixD(2, 2)).cast<float>());
  dit::DenoiserInput<float> in{&cond, &graphs, &topo, &noisy, 0.3};
  CHECK(m.forward(in) == m2.forward(in));

  // damaged files
  const std::string bytes = slurp(path);
  std::ofstream(dir / "short.tdck", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(checkpoint::load((dir / "short.tdck").string()), DataError);
  std::ofstream(dir / "magic.tdck", std::ios::binary) << "XXXX" << bytes.substr(4);
  CHECK_THROWS_AS(checkpoint::load((dir / "magic.tdck").string()), DataError);
  CHECK_THROWS_AS(checkpoint::load((dir / "missing.tdck").string()), DataError);

  mc.width = 16;
  mc.heads = 4;
  dit::Denoiser<float> wrong(mc);
  CHECK_THROWS_AS(checkpoint::get_params(back, wrong.params(), "param/"), DataError);
}

// --- synthetic data ----------------------------------------------------------

TEST_CASE("single noiseless source gives a rank-1 signal") {
  const auto layout = montage::load_layout("synth32");
  synth::SynthParams p;
  p.sources = 1;
  p.noise = 0.0;
  std::mt19937_64 rng(4);
  const MatrixD x = synth::make_signal(layout, p, rng);
  REQUIRE(x.rows() == 32);
  // Every row is a multiple of the row with the largest energy.
  std::size_t ref = 0;
  double best = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double e = 0.0;
    for (double v : x.row(r)) e += v * v;
    if (e > best) best = e, ref = r;
  }
  double worst = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) dot += x(r, c) * x(ref, c);
    const double a = dot / best;
    for (std::size_t c = 0; c < x.cols(); ++c) worst = std::max(worst, std::fabs(x(r, c) - a * x(ref, c)));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("synthetic datasets are reproducible and split by subject") {
  const auto cfg = tiny_config();
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  const synth::SplitSizes sizes{2, 1, 1, 3};
  synth::write_dataset(a.string(), "synth32", "synth", synth::SynthParams::from(cfg), sizes, 11);
  synth::write_dataset(b.string(), "synth32", "synth", synth::SynthParams::from(cfg), sizes, 11);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  const auto man = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(man["train"].size() == 6);
  CHECK(man["val"].size() == 3);
  CHECK(man["test"].size() == 3);
  std::set<int> train_subjects, test_subjects;
  for (const auto& e : man["train"]) {
    train_subjects.insert(e["subject"].get<int>());
    CHECK(slurp(a / e["file"].get<std::string>()) == slurp(b / e["file"].get<std::string>()));
  }
  for (const auto& e : man["test"]) test_subjects.insert(e["subject"].get<int>());
  for (int s : test_subjects) CHECK(train_subjects.count(s) == 0);
  const auto seg = signalio::read_segment((a / man["train"][0]["file"].get<std::string>()).string());
  CHECK(seg.labels.size() == 32);
  CHECK(seg.samples() == 100);
}

// --- pipeline --------------------------------------------------------------------

TEST_CASE("baselines on synthetic data") {
  const auto cfg = tiny_config();
  pipeline::EvalOptions opt;
  opt.mode = pipeline::EvalMode::kCopy;
  const auto copy = pipeline::evaluate(cfg, tiny_data().string(), opt);
  CHECK(copy.nmse < 1.0);
  CHECK(copy.nmse > 0.0);
  CHECK(copy.n_segments == 16);
  opt.mode = pipeline::EvalMode::kZero;
  CHECK(pipeline::evaluate(cfg, tiny_data().string(), opt).nmse == 1.0);
  opt.mode = pipeline::EvalMode::kOracle;
  const auto oracle = pipeline::evaluate(cfg, tiny_data().string(), opt);
  CHECK(oracle.nmse == 0.0);
  CHECK(oracle.pcc == doctest::Approx(1.0));

  auto other = cfg;
  other.dataset = "tusz";
  CHECK_THROWS_AS(pipeline::evaluate(other, tiny_data().string(), opt), DataError);
}

TEST_CASE("copy baseline uses the nearest visible electrode") {
  const auto layout = montage::load_layout("synth32");
  const auto task = montage::subsample(layout, "synth", 2);
  MatrixF truth(32, 3);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 3; ++c) truth(r, c) = static_cast<float>(100 * r + c);
  const auto out = pipeline::copy_nearest(truth, layout, task);
  for (std::size_t v : task.visible) CHECK(out(v, 1) == truth(v, 1));
  for (std::size_t u : task.unseen) {
    std::size_t best = task.visible[0];
    for (std::size_t v : task.visible)
      if (montage::chord_distance(layout.pos3d[u], layout.pos3d[v]) <
          montage::chord_distance(layout.pos3d[u], layout.pos3d[best]))
        best = v;
    CHECK(out(u, 2) == truth(best, 2));
  }
}

TEST_CASE("tiny model trains, evaluates deterministically and resumes") {
  const auto cfg = tiny_config();
  const auto out = scratch("train");
  const auto r = pipeline::train(cfg, tiny_data().string(), (out / "full").string());
  REQUIRE(r.curve.size() == 20);
  INFO("final val nmse ", r.curve.back().val_nmse, " loss ", r.curve.back().train_loss);
  CHECK(r.curve.back().val_nmse < 1.0);
  CHECK(r.curve.back().train_loss < r.curve.front().train_loss);
  for (const auto& e : r.curve) CHECK(std::fabs(e.val_snr_db + 10.0 * std::log10(e.val_nmse)) <= 1e-9);
  CHECK(fs::exists(out / "full" / "curve.csv"));

  pipeline::EvalOptions opt;
  opt.checkpoint = r.checkpoint;
  const auto a = metrics::to_json(pipeline::evaluate(cfg, tiny_data().string(), opt));
  const auto b = metrics::to_json(pipeline::evaluate(cfg, tiny_data().string(), opt));
  CHECK(a == b);
  opt.seed = 12345;
  CHECK(metrics::to_json(pipeline::evaluate(cfg, tiny_data().string(), opt)) != a);

  // Interrupted after 3 epochs, resumed to 6, against 6 straight epochs.
  auto short_cfg = cfg;
  short_cfg.epochs = 6;
  const auto straight = pipeline::train(short_cfg, tiny_data().string(), (out / "straight").string());
  pipeline::TrainOptions stop;
  stop.stop_after_epoch = 3;
  const auto part = pipeline::train(short_cfg, tiny_data().string(), (out / "resumed").string(), stop);
  REQUIRE(part.curve.size() == 3);
  pipeline::TrainOptions cont;
  cont.resume = part.checkpoint;
  const auto resumed = pipeline::train(short_cfg, tiny_data().string(), (out / "resumed").string(), cont);
  REQUIRE(resumed.curve.size() == 6);
  for (std::size_t e = 0; e < 6; ++e) {
    CHECK(std::fabs(resumed.curve[e].train_loss - straight.curve[e].train_loss) <= 1e-6);
    CHECK(resumed.curve[e].val_nmse == doctest::Approx(straight.curve[e].val_nmse).epsilon(1e-6));
  }
  CHECK(slurp(out / "straight" / "checkpoint.tdck") == slurp(out / "resumed" / "checkpoint.tdck"));

  auto changed = short_cfg;
  changed.width = 32;
  CHECK_THROWS_AS(pipeline::train(changed, tiny_data().string(), (out / "bad").string(), cont), ConfigError);

  // checkpoint round trip through load_model reproduces the sampler output
  const auto lm = pipeline::load_model(r.checkpoint);
  CHECK(lm.epoch == 20);
  CHECK(lm.layout_name == "synth32");
}

TEST_CASE("divergence aborts training") {
  auto cfg = tiny_config();
  cfg.epochs = 2;
  cfg.lr = 1e4;
  cfg.grad_clip = 0;
  cfg.divergence_factor = 1.5;
  const auto out = scratch("diverge");
  CHECK_THROWS_AS(pipeline::train(cfg, tiny_data().string(), out.string()), NumericalError);
}

// --- command line ------------------------------------------------------------------

TEST_CASE("cli exit codes") {
  const auto dir = scratch("cli");
  const std::string data = tiny_data().string();
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("bogus") == 2);
  CHECK(run_cli("eval --data " + data + " --mode copy --set colour=blue") == 2);
  CHECK(run_cli("eval --data " + data + " --mode copy --set factor=3") == 2);
  CHECK(run_cli("eval --data " + data + " --mode copy --set dataset=seed") == 3);
  CHECK(run_cli("eval --data /nonexistent --mode copy") == 3);
  CHECK(run_cli("eval --data " + data + " --mode copy --set dataset=synth --out " + (dir / "copy.json").string()) ==
        0);
  const auto j = nlohmann::json::parse(slurp(dir / "copy.json"));
  CHECK(j["nmse"].get<double>() < 1.0);
  CHECK(run_cli("train --data " + data + " --out " + (dir / "t").string() +
                " --set epochs=1 --set synth_segments_per_subject=2 --set lr=1e4 --set grad_clip=0"
                " --set divergence_factor=1.01 --set batch_size=1") == 4);
  CHECK(run_cli("synth --out " + (dir / "s").string() +
                " --set synth_train_subjects=1 --set synth_val_subjects=1 --set synth_test_subjects=1"
                " --set synth_segments_per_subject=1") == 0);
  CHECK(fs::exists(dir / "s" / "manifest.json"));
}
