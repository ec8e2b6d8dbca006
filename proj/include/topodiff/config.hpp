#pragma once

// Flat `key = value` configuration. Blank lines and lines starting with '#'
// are ignored; unknown keys and malformed values raise ConfigError.

#include "topodiff/diffusion.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace topodiff::config {

struct KeyDoc {
  const char* key;
  const char* default_value;
  const char* help;
};

/// Every accepted key with its default, in documentation order.
const std::vector<KeyDoc>& documented_keys();

struct TrainConfig {
  // data
  std::string dataset = "synth";
  int factor = 2;
  std::string topo_features = "builtin";  // or a directory of per-segment sidecars
  // model
  std::size_t layers = 4;
  std::size_t width = 800;
  std::size_t heads = 8;
  std::size_t mlp_ratio = 4;
  std::size_t patch = 50;
  std::size_t time_dim = 128;
  bool topo = true;
  bool graph = true;
  std::size_t topo_grid = 2;
  std::size_t topo_image = 32;
  bool geometry_pos = true;
  // graph
  std::size_t n_s = 12;
  std::size_t k = 0;  // 0: 4 for the 2x factor, 6 otherwise
  // optimization
  double lr = 5e-4;
  double weight_decay = 0.01;
  std::size_t epochs = 300;
  std::size_t batch_size = 16;
  std::size_t warmup_steps = 0;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  // sampling and logging
  std::size_t sample_steps = 50;
  std::size_t val_steps = 10;
  std::size_t val_segments = 32;
  std::size_t checkpoint_every = 1;
  diffusion::VelocityForm velocity = diffusion::VelocityForm::kPathTangent;
  double divergence_factor = 1e3;
  // synthetic data
  std::size_t synth_train_subjects = 20;
  std::size_t synth_val_subjects = 2;
  std::size_t synth_test_subjects = 4;
  std::size_t synth_segments_per_subject = 100;
  std::size_t synth_sources = 4;
  double synth_noise = 0.1;
  double synth_rate = 100.0;
  double synth_window_s = 2.0;
  double synth_amplitude_uv = 20.0;
  double synth_bump_width = 0.6;

  std::size_t effective_k() const { return k != 0 ? k : (factor == 2 ? 4 : 6); }
};

/// Parses `key = value` text; `origin` names the source in error messages.
TrainConfig parse(const std::string& text, const std::string& origin = "config");
TrainConfig load(const std::string& path);

/// Applies a single `key=value` override.
void apply(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Every key with its current value (the checkpoint config echo).
std::map<std::string, std::string> echo(const TrainConfig& cfg);

/// Inverse of echo; keys absent from `kv` keep their defaults.
TrainConfig from_echo(const std::map<std::string, std::string>& kv);

std::string to_text(const TrainConfig& cfg);

}  // namespace topodiff::config
