#include "topodiff/synth.hpp"

#include "topodiff/diffusion.hpp"
#include "topodiff/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace topodiff::synth {

namespace fs = std::filesystem;

SynthParams SynthParams::from(const config::TrainConfig& cfg) {
  SynthParams p;
  p.sources = cfg.synth_sources;
  p.noise = cfg.synth_noise;
  p.rate = cfg.synth_rate;
  p.window_s = cfg.synth_window_s;
  p.amplitude_uv = cfg.synth_amplitude_uv;
  p.bump_width = cfg.synth_bump_width;
  return p;
}

MatrixD make_signal(const montage::ElectrodeLayout& layout, const SynthParams& p, std::mt19937_64& rng) {
  if (p.sources == 0) throw ConfigError("synthetic data needs at least one source");
  const auto n = static_cast<std::size_t>(std::llround(p.rate * p.window_s));
  if (n == 0) throw ConfigError("synthetic window is empty");
  constexpr double kTwoPi = 6.283185307179586;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, layout.size() - 1);

  std::vector<double> sig(layout.size() * n, 0.0);
  const double rho = std::exp(-1.0 / (p.envelope_tau_s * p.rate));
  const double innov = std::sqrt(1.0 - rho * rho);
  for (std::size_t k = 0; k < p.sources; ++k) {
    // Centre: an electrode position nudged off the grid.
    montage::Vec3 c = layout.pos3d[pick(rng)];
    for (double& v : c) v += 0.2 * normal(rng);
    const double norm = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
    for (double& v : c) v /= norm;

    const double amp = p.amplitude_uv * (0.5 + unit(rng));
    const double freq = 1.0 + (p.max_freq_hz - 1.0) * unit(rng);
    const double phase = kTwoPi * unit(rng);
    std::vector<double> a(n);
    double e = normal(rng);
    for (std::size_t i = 0; i < n; ++i) {
      e = rho * e + innov * normal(rng);
      a[i] = amp * (1.0 + 0.5 * e) * std::sin(kTwoPi * freq * static_cast<double>(i) / p.rate + phase);
    }
    for (std::size_t ch = 0; ch < layout.size(); ++ch) {
      const auto& q = layout.pos3d[ch];
      const double dot = std::clamp(q[0] * c[0] + q[1] * c[1] + q[2] * c[2], -1.0, 1.0);
      const double ang = std::acos(dot);
      const double g = std::exp(-ang * ang / (2.0 * p.bump_width * p.bump_width));
      double* row = sig.data() + ch * n;
      for (std::size_t i = 0; i < n; ++i) row[i] += g * a[i];
    }
  }

  MatrixD out(layout.size(), n);
  const double sigma = p.noise * p.amplitude_uv;
  for (std::size_t ch = 0; ch < layout.size(); ++ch)
    for (std::size_t i = 0; i < n; ++i) {
      out(ch, i) = sig[ch * n + i];
      if (sigma > 0.0) out(ch, i) += sigma * normal(rng);
    }
  return out;
}

signalio::EegSegment make_segment(const montage::ElectrodeLayout& layout, const SynthParams& p,
                                  std::mt19937_64& rng) {
  const MatrixD sig = make_signal(layout, p, rng);
  signalio::EegSegment seg;
  seg.rate = static_cast<float>(p.rate);
  seg.labels = layout.labels;
  seg.data.resize(sig.rows(), sig.cols());
  for (std::size_t i = 0; i < sig.size(); ++i)
    seg.data.data()[i] = std::clamp(static_cast<float>(sig.data()[i]), -p.clamp_uv, p.clamp_uv);
  return seg;
}

void write_dataset(const std::string& out_dir, const std::string& layout_name, const std::string& dataset,
                   const SynthParams& p, const SplitSizes& sizes, std::uint64_t seed) {
  const montage::ElectrodeLayout layout = montage::load_layout(layout_name);
  nlohmann::ordered_json manifest;
  manifest["dataset"] = dataset;
  manifest["layout"] = layout_name;
  manifest["rate"] = p.rate;
  manifest["seed"] = seed;

  std::size_t subject = 0;
  auto emit = [&](const char* split, std::size_t n_subjects) {
    fs::create_directories(fs::path(out_dir) / split);
    nlohmann::ordered_json files = nlohmann::ordered_json::array();
    for (std::size_t s = 0; s < n_subjects; ++s, ++subject) {
      std::mt19937_64 rng = diffusion::make_stream(seed, 0x5eed0000ull + subject);
      for (std::size_t i = 0; i < sizes.segments_per_subject; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "s%03zu_%04zu.eegs", subject, i);
        const std::string rel = std::string(split) + "/" + name;
        signalio::write_segment((fs::path(out_dir) / rel).string(), make_segment(layout, p, rng));
        files.push_back({{"file", rel}, {"subject", subject}});
      }
    }
    manifest[split] = files;
  };
  emit("train", sizes.train_subjects);
  emit("val", sizes.val_subjects);
  emit("test", sizes.test_subjects);

  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw DataError("cannot write manifest under '" + out_dir + "'");
  out << manifest.dump(2) << "\n";
}

}  // namespace topodiff::synth
