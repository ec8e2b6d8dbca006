#pragma once

// Orchestration: dataset manifests, standardization, per-segment
// conditioning precompute, the training loop, evaluation and the ablation
// driver.

#include "topodiff/config.hpp"
#include "topodiff/dit.hpp"
#include "topodiff/metrics.hpp"
#include "topodiff/montage.hpp"
#include "topodiff/signalio.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace topodiff::pipeline {

struct Dataset {
  std::string root;
  std::string dataset;
  std::string layout_name;
  montage::ElectrodeLayout layout;
  montage::SrTask task;
  float rate = 0.0f;
  std::size_t samples = 0;  // T, read from the first segment
  std::vector<std::string> train, val, test;  // absolute paths
};

/// Reads `<dir>/manifest.json`; the task comes from the config's factor.
Dataset open_dataset(const std::string& dir, const config::TrainConfig& cfg);

/// Segment rows reordered into layout order (every layout label required).
MatrixF load_hr(const std::string& path, const Dataset& ds);

struct Standardizer {
  std::vector<float> mean, stddev;  // per HR channel, layout order

  static Standardizer fit(const std::vector<MatrixF>& segments);
  MatrixF forward(const MatrixF& hr) const;
  /// Undo standardization of rows `hr_rows` of the HR matrix.
  MatrixF inverse_rows(const MatrixF& z, const std::vector<std::size_t>& hr_rows) const;
};

/// Conditioning for one segment, all in standardized units.
struct Prepared {
  MatrixF x;                    // C_HR x T target
  MatrixF cond;                 // (C_LR*T_p) x P visible tokens, task.visible order
  std::vector<MatrixF> graphs;  // T_p normalized adjacencies
  MatrixF topo;                 // (T_p*h*w) x d
};

/// Everything needed to turn raw HR segments into model inputs.
class Conditioner {
 public:
  Conditioner(const config::TrainConfig& cfg, const Dataset& ds, Standardizer norm);

  Prepared prepare(const MatrixF& hr_raw, const std::string& source_path = "") const;
  std::vector<Prepared> prepare_all(const std::vector<MatrixF>& hr_raw,
                                    const std::vector<std::string>& paths) const;

  dit::ModelConfig model_config() const;
  const Standardizer& standardizer() const { return norm_; }
  std::size_t groups() const { return groups_; }
  std::size_t topo_dim() const { return topo_dim_; }

 private:
  config::TrainConfig cfg_;
  const Dataset* ds_;
  Standardizer norm_;
  montage::NeighborTable knn_;
  std::size_t groups_ = 0;
  std::size_t topo_dim_ = 0;
};

dit::DenoiserInput<float> model_input(const Prepared& p, const MatrixF* noisy, double t);

/// Sampled unseen rows (standardized) for one prepared segment.
MatrixF generate(const dit::Denoiser<float>& model, const Prepared& p, std::size_t steps,
                 diffusion::VelocityForm form, std::uint64_t seed, std::uint64_t stream);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_nmse = 0.0;
  double val_snr_db = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  std::size_t skipped_steps = 0;
};

struct TrainOptions {
  std::string resume;              // checkpoint to continue from
  std::size_t stop_after_epoch = 0;  // 0: run to cfg.epochs
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::string checkpoint;
  std::vector<EpochLog> curve;
};

/// Writes `<out>/checkpoint.tdck`, `<out>/curve.csv` and `<out>/config.txt`.
TrainResult train(const config::TrainConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                  const TrainOptions& opt = {});

struct LoadedModel {
  config::TrainConfig cfg;
  Standardizer norm;
  std::size_t samples = 0;
  std::string layout_name;
  std::unique_ptr<dit::Denoiser<float>> model;
  std::uint64_t step = 0;
  std::size_t epoch = 0;
};

LoadedModel load_model(const std::string& checkpoint_path);

enum class EvalMode { kModel, kOracle, kCopy, kZero };
EvalMode parse_eval_mode(const std::string& s);

struct EvalOptions {
  EvalMode mode = EvalMode::kModel;
  std::string checkpoint;        // required for kModel
  std::size_t steps = 0;         // 0: cfg.sample_steps
  std::optional<std::uint64_t> seed;
  std::string split = "test";
  std::size_t max_segments = 0;  // 0: all
  std::string topomap_dir;       // empty: no images
  std::size_t topomap_segments = 2;
};

/// `cfg` supplies dataset/factor for the baselines; in model mode the
/// checkpoint's echoed config is used and checked against the data.
metrics::FidelityReport evaluate(const config::TrainConfig& cfg, const std::string& data_dir,
                                 const EvalOptions& opt);

/// Unseen rows of `truth` filled from the nearest visible electrode.
MatrixF copy_nearest(const MatrixF& truth, const montage::ElectrodeLayout& layout, const montage::SrTask& task);

/// Fills the unseen channels of a segment holding (at least) the visible
/// ones; returns a segment with every layout channel.
signalio::EegSegment sample_segment(const LoadedModel& lm, const signalio::EegSegment& input,
                                    std::size_t steps, std::uint64_t seed);

struct ArmResult {
  std::string name;
  bool topo = false, graph = false;
  metrics::FidelityReport report;
  std::vector<EpochLog> curve;
};

/// Trains and evaluates {baseline, +topo, +topo+graph}; writes
/// `<out>/ablation.json` and per-arm directories.
std::vector<ArmResult> ablate(const config::TrainConfig& cfg, const std::string& data_dir,
                              const std::string& out_dir, std::ostream* log = nullptr);

/// JSON edge lists of every group graph of one segment.
std::string graph_dump_json(const signalio::EegSegment& seg, const config::TrainConfig& cfg);

/// PNG topomaps (one per group) of the visible channels of a segment, plus
/// the built-in feature sidecar. Returns written paths.
std::vector<std::string> topo_render(const signalio::EegSegment& seg, const config::TrainConfig& cfg,
                                     const std::string& out_dir, std::size_t image_size);

/// CSV recording -> preprocessed fixed-length segment files.
std::vector<std::string> prepare_csv(const std::string& csv_path, float rate, const std::string& out_dir,
                                     const signalio::PreprocessConfig& pre);

}  // namespace topodiff::pipeline
