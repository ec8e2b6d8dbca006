#include "topodiff/config.hpp"

#include "topodiff/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace topodiff::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("bad value '" + value + "' for '" + key + "': expected " + what);
}

template <typename U>
U parse_uint(const std::string& key, const std::string& v) {
  U out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad(key, v, "a number");
    return d;
  } catch (const std::logic_error&) {
    bad(key, v, "a number");
  }
}

bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  bad(key, v, "on/off");
}

std::string fmt(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  return os.str();
}

struct Field {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define TD_SIZE(name)                                                                  \
  {#name, {[](TrainConfig& c, const std::string& v) { c.name = parse_uint<std::size_t>(#name, v); }, \
           [](const TrainConfig& c) { return std::to_string(c.name); }}}
#define TD_DOUBLE(name)                                                              \
  {#name, {[](TrainConfig& c, const std::string& v) { c.name = parse_double(#name, v); }, \
           [](const TrainConfig& c) { return fmt(c.name); }}}
#define TD_SWITCH(name)                                                              \
  {#name, {[](TrainConfig& c, const std::string& v) { c.name = parse_switch(#name, v); }, \
           [](const TrainConfig& c) { return std::string(c.name ? "on" : "off"); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = {
      {"dataset", {[](TrainConfig& c, const std::string& v) { c.dataset = v; },
                   [](const TrainConfig& c) { return c.dataset; }}},
      {"factor", {[](TrainConfig& c, const std::string& v) {
                    const int x = parse_uint<int>("factor", v);
                    if (x != 2 && x != 4 && x != 8) bad("factor", v, "2, 4 or 8");
                    c.factor = x;
                  },
                  [](const TrainConfig& c) { return std::to_string(c.factor); }}},
      {"topo_features", {[](TrainConfig& c, const std::string& v) { c.topo_features = v; },
                         [](const TrainConfig& c) { return c.topo_features; }}},
      TD_SIZE(layers), TD_SIZE(width), TD_SIZE(heads), TD_SIZE(mlp_ratio), TD_SIZE(patch),
      TD_SIZE(time_dim), TD_SWITCH(topo), TD_SWITCH(graph), TD_SIZE(topo_grid), TD_SIZE(topo_image),
      TD_SWITCH(geometry_pos), TD_SIZE(n_s), TD_SIZE(k), TD_DOUBLE(lr), TD_DOUBLE(weight_decay),
      TD_SIZE(epochs), TD_SIZE(batch_size), TD_SIZE(warmup_steps), TD_DOUBLE(grad_clip),
      {"seed", {[](TrainConfig& c, const std::string& v) { c.seed = parse_uint<std::uint64_t>("seed", v); },
                [](const TrainConfig& c) { return std::to_string(c.seed); }}},
      TD_SIZE(sample_steps), TD_SIZE(val_steps), TD_SIZE(val_segments), TD_SIZE(checkpoint_every),
      {"velocity", {[](TrainConfig& c, const std::string& v) { c.velocity = diffusion::parse_velocity_form(v); },
                    [](const TrainConfig& c) {
                      return std::string(c.velocity == diffusion::VelocityForm::kLiteral ? "literal" : "tangent");
                    }}},
      TD_DOUBLE(divergence_factor), TD_SIZE(synth_train_subjects), TD_SIZE(synth_val_subjects),
      TD_SIZE(synth_test_subjects), TD_SIZE(synth_segments_per_subject), TD_SIZE(synth_sources),
      TD_DOUBLE(synth_noise), TD_DOUBLE(synth_rate), TD_DOUBLE(synth_window_s),
      TD_DOUBLE(synth_amplitude_uv), TD_DOUBLE(synth_bump_width),
  };
  return f;
}

#undef TD_SIZE
#undef TD_DOUBLE
#undef TD_SWITCH

void check(const TrainConfig& c) {
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (c.epochs == 0) throw ConfigError("epochs must be positive");
  if (c.sample_steps == 0 || c.val_steps == 0) throw ConfigError("sampler steps must be positive");
  if (!(c.lr > 0.0)) throw ConfigError("lr must be positive");
  if (c.weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (c.synth_sources == 0) throw ConfigError("synth_sources must be at least 1");
  if (c.synth_noise < 0.0) throw ConfigError("synth_noise must be non-negative");
  if (c.topo_grid == 0 || c.topo_image < 16) throw ConfigError("topo_grid must be positive and topo_image >= 16");
}

}  // namespace

const std::vector<KeyDoc>& documented_keys() {
  static const std::vector<KeyDoc> docs = {
      {"dataset", "synth", "seed | seediv | physionet | tusz | synth"},
      {"factor", "2", "super-resolution factor: 2, 4 or 8"},
      {"topo_features", "builtin", "builtin, or a directory holding <segment>.topf sidecars"},
      {"layers", "4", "transformer layers (each a token block and a temporal block)"},
      {"width", "800", "hidden width D"},
      {"heads", "8", "attention heads; must divide width"},
      {"mlp_ratio", "4", "MLP hidden width as a multiple of D"},
      {"patch", "50", "samples per patch P"},
      {"time_dim", "128", "sinusoidal time-feature size"},
      {"topo", "on", "topographic tokens"},
      {"graph", "on", "relation-graph encoder (off: linear patch embedding)"},
      {"topo_grid", "2", "topo feature grid h = w"},
      {"topo_image", "32", "topomap raster size H = W"},
      {"geometry_pos", "on", "seed positional slots with electrode-position sinusoids"},
      {"n_s", "12", "spatial neighbours per visible channel"},
      {"k", "0", "top-k relation edges per row; 0 picks 4 at 2x and 6 otherwise"},
      {"lr", "0.0005", "AdamW learning rate"},
      {"weight_decay", "0.01", "decoupled weight decay"},
      {"epochs", "300", "training epochs"},
      {"batch_size", "16", "segments per optimizer step"},
      {"warmup_steps", "0", "linear warm-up steps before the cosine decay"},
      {"grad_clip", "1", "global gradient-norm clip; 0 disables"},
      {"seed", "0", "master seed"},
      {"sample_steps", "50", "Euler steps at evaluation"},
      {"val_steps", "10", "Euler steps for the per-epoch validation score"},
      {"val_segments", "32", "validation segments scored per epoch; 0 disables"},
      {"checkpoint_every", "1", "epochs between checkpoints"},
      {"velocity", "tangent", "tangent: (x_pred - z)/(1 - t); literal: (x_pred - z)/t"},
      {"divergence_factor", "1000", "abort when the epoch loss exceeds this multiple of the first"},
      {"synth_train_subjects", "20", "synthetic training subjects"},
      {"synth_val_subjects", "2", "synthetic validation subjects"},
      {"synth_test_subjects", "4", "synthetic test subjects"},
      {"synth_segments_per_subject", "100", "segments generated per subject"},
      {"synth_sources", "4", "latent sources K per segment"},
      {"synth_noise", "0.1", "white-noise level relative to the source amplitude"},
      {"synth_rate", "100", "synthetic sampling rate in Hz"},
      {"synth_window_s", "2", "synthetic segment length in seconds"},
      {"synth_amplitude_uv", "20", "source amplitude in microvolts"},
      {"synth_bump_width", "0.6", "angular width of the spatial bumps in radians"},
  };
  return docs;
}

void apply(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, value);
}

TrainConfig parse(const std::string& text, const std::string& origin) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      apply(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  check(cfg);
  return cfg;
}

TrainConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::map<std::string, std::string> echo(const TrainConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [k, f] : fields()) out[k] = f.get(cfg);
  return out;
}

TrainConfig from_echo(const std::map<std::string, std::string>& kv) {
  TrainConfig cfg;
  for (const auto& [k, v] : kv)
    if (fields().count(k)) apply(cfg, k, v);
  check(cfg);
  return cfg;
}

std::string to_text(const TrainConfig& cfg) {
  std::string out;
  const auto kv = echo(cfg);
  for (const auto& d : documented_keys()) out += std::string(d.key) + " = " + kv.at(d.key) + "\n";
  return out;
}

}  // namespace topodiff::config
