// topodiff command-line front end.

#include "topodiff/config.hpp"
#include "topodiff/errors.hpp"
#include "topodiff/pipeline.hpp"
#include "topodiff/signalio.hpp"
#include "topodiff/synth.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace topodiff;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool out_required) {
  app->add_option("--config", c.config_path, "key = value config file");
  app->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
  app->add_option("--seed", c.seed, "seed override");
  auto* o = app->add_option("--out", c.out, "output path");
  if (out_required) o->required();
}

config::TrainConfig resolve(const Common& c) {
  config::TrainConfig cfg = c.config_path.empty() ? config::TrainConfig{} : config::load(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config::apply(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << "\n";
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"topodiff: EEG spatial super-resolution toolkit"};
  app.require_subcommand(1);

  Common synth_c, prep_c, train_c, eval_c, sample_c, topo_c, graph_c, ablate_c;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, synth_c, true);

  auto* prep = app.add_subcommand("prepare", "CSV recording -> preprocessed segments");
  add_common(prep, prep_c, true);
  std::string prep_input;
  float prep_rate = 0.0f;
  signalio::PreprocessConfig pre;
  prep->add_option("--input", prep_input, "CSV file (label,v0,v1,...)")->required();
  prep->add_option("--rate", prep_rate, "sampling rate of the CSV in Hz")->required();
  prep->add_option("--target-rate", pre.target_rate, "output rate in Hz");
  prep->add_option("--window", pre.window_s, "segment length in seconds");
  prep->add_option("--lowpass", pre.lowpass_hz, "low-pass cutoff in Hz");
  prep->add_flag("--highpass", pre.highpass, "enable the 0.5 Hz high-pass");

  auto* train = app.add_subcommand("train", "train a denoiser");
  add_common(train, train_c, true);
  std::string train_data, resume;
  std::size_t stop_after = 0;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--stop-after", stop_after, "stop after this many epochs in total");

  auto* eval = app.add_subcommand("eval", "score a checkpoint or a baseline on a split");
  add_common(eval, eval_c, false);
  std::string eval_data, eval_ckpt, eval_mode = "model", eval_split = "test", topo_dir;
  std::size_t eval_steps = 0, eval_max = 0;
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint");
  eval->add_option("--mode", eval_mode, "model | oracle | copy | zero");
  eval->add_option("--split", eval_split, "test | val | train");
  eval->add_option("--steps", eval_steps, "sampler steps (default from the config)");
  eval->add_option("--max-segments", eval_max, "score only the first N segments");
  eval->add_option("--emit-topomaps", topo_dir, "write truth vs generated topomaps here");

  auto* sample = app.add_subcommand("sample", "fill the unseen channels of one segment");
  add_common(sample, sample_c, true);
  std::string sample_ckpt, sample_in;
  std::size_t sample_steps = 0;
  sample->add_option("--checkpoint", sample_ckpt, "trained checkpoint")->required();
  sample->add_option("--input", sample_in, "segment file with the visible channels")->required();
  sample->add_option("--steps", sample_steps, "sampler steps");

  auto* topo = app.add_subcommand("topo-render", "render visible-channel topomaps of a segment");
  add_common(topo, topo_c, true);
  std::string topo_in;
  std::size_t topo_size = 64;
  topo->add_option("--input", topo_in, "segment file")->required();
  topo->add_option("--size", topo_size, "image size in pixels");

  auto* graph = app.add_subcommand("graph-dump", "dump the relation graphs of a segment as JSON");
  add_common(graph, graph_c, false);
  std::string graph_in;
  graph->add_option("--input", graph_in, "segment file")->required();

  auto* ablate = app.add_subcommand("ablate", "train and score baseline, +topo and +topo+graph");
  add_common(ablate, ablate_c, true);
  std::string ablate_data;
  ablate->add_option("--data", ablate_data, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) {
      const auto cfg = resolve(synth_c);
      synth::SplitSizes sizes{cfg.synth_train_subjects, cfg.synth_val_subjects, cfg.synth_test_subjects,
                              cfg.synth_segments_per_subject};
      synth::write_dataset(synth_c.out, montage::layout_for_dataset(cfg.dataset), cfg.dataset,
                           synth::SynthParams::from(cfg), sizes, cfg.seed);
      std::cout << "wrote " << synth_c.out << "/manifest.json\n";
    } else if (*prep) {
      const auto files = pipeline::prepare_csv(prep_input, prep_rate, prep_c.out, pre);
      std::cout << "wrote " << files.size() << " segments to " << prep_c.out << "\n";
    } else if (*train) {
      const auto cfg = resolve(train_c);
      const auto r = pipeline::train(cfg, train_data, train_c.out, {resume, stop_after, &std::cerr});
      std::cout << r.checkpoint << "\n";
    } else if (*eval) {
      const auto cfg = resolve(eval_c);
      pipeline::EvalOptions opt;
      opt.mode = pipeline::parse_eval_mode(eval_mode);
      opt.checkpoint = eval_ckpt;
      opt.steps = eval_steps;
      opt.seed = eval_c.seed;
      opt.split = eval_split;
      opt.max_segments = eval_max;
      opt.topomap_dir = topo_dir;
      write_text(eval_c.out, metrics::to_json(pipeline::evaluate(cfg, eval_data, opt)));
    } else if (*sample) {
      const auto lm = pipeline::load_model(sample_ckpt);
      const auto seg = signalio::read_segment(sample_in);
      signalio::write_segment(sample_c.out,
                              pipeline::sample_segment(lm, seg, sample_steps, sample_c.seed.value_or(lm.cfg.seed)));
    } else if (*topo) {
      const auto cfg = resolve(topo_c);
      for (const auto& p : pipeline::topo_render(signalio::read_segment(topo_in), cfg, topo_c.out, topo_size))
        std::cout << p << "\n";
    } else if (*graph) {
      const auto cfg = resolve(graph_c);
      write_text(graph_c.out, pipeline::graph_dump_json(signalio::read_segment(graph_in), cfg));
    } else if (*ablate) {
      const auto cfg = resolve(ablate_c);
      pipeline::ablate(cfg, ablate_data, ablate_c.out, &std::cerr);
      std::cout << ablate_c.out << "/ablation.json\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}
