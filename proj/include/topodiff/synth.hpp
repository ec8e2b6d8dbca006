#pragma once

// Desk-scale stand-in data: K latent sources, each a Gaussian bump on the
// scalp sphere driving an AR(1)-modulated sinusoid, plus white noise.

#include "topodiff/config.hpp"
#include "topodiff/montage.hpp"
#include "topodiff/signalio.hpp"

#include <cstdint>
#include <random>
#include <string>

namespace topodiff::synth {

struct SynthParams {
  std::size_t sources = 4;
  double noise = 0.1;          // relative to amplitude_uv
  double rate = 100.0;
  double window_s = 2.0;
  double amplitude_uv = 20.0;
  double bump_width = 0.6;     // radians
  double max_freq_hz = 30.0;   // carrier ceiling; modulation adds a few Hz
  double envelope_tau_s = 0.25;
  float clamp_uv = 200.0f;

  static SynthParams from(const config::TrainConfig& cfg);
};

/// Noisy source mixture in double precision, rows in layout order.
MatrixD make_signal(const montage::ElectrodeLayout& layout, const SynthParams& p, std::mt19937_64& rng);

/// One segment (float, clamped) over every electrode of `layout`, rows in layout order.
signalio::EegSegment make_segment(const montage::ElectrodeLayout& layout, const SynthParams& p,
                                  std::mt19937_64& rng);

struct SplitSizes {
  std::size_t train_subjects = 20, val_subjects = 2, test_subjects = 4, segments_per_subject = 100;
};

/// Writes train/val/test segment files and manifest.json under `out_dir`.
/// Each subject draws from its own stream, so the split is by subject.
void write_dataset(const std::string& out_dir, const std::string& layout_name, const std::string& dataset,
                   const SynthParams& p, const SplitSizes& sizes, std::uint64_t seed);

}  // namespace topodiff::synth
