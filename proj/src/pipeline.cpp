#include "topodiff/pipeline.hpp"

#include "topodiff/checkpoint.hpp"
#include "topodiff/diffusion.hpp"
#include "topodiff/errors.hpp"
#include "topodiff/optim.hpp"
#include "topodiff/relgraph.hpp"
#include "topodiff/topomap.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace topodiff::pipeline {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Stream-id namespaces so training, validation and evaluation draws never
// overlap for a given seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 1ull << 40;
constexpr std::uint64_t kTrainStream = 2ull << 40;
constexpr std::uint64_t kValStream = 3ull << 40;
constexpr std::uint64_t kEvalStream = 4ull << 40;

std::string join(const std::vector<std::string>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? std::string(1, sep) : "") + v[i];
  return out;
}

std::string label_list(const montage::ElectrodeLayout& layout, const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  for (auto i : idx) out.push_back(layout.labels[i]);
  return join(out, ',');
}

void log_line(std::ostream* log, const std::string& s) {
  if (log) *log << s << std::endl;
}

std::vector<std::string> split_files(const ordered_json& manifest, const char* split, const fs::path& root) {
  std::vector<std::string> out;
  if (!manifest.contains(split)) return out;
  for (const auto& e : manifest[split]) out.push_back((root / e.at("file").get<std::string>()).string());
  return out;
}

/// HR matrix in layout order from any segment holding the needed labels.
/// Missing rows are allowed only when `allow_missing` lists them.
MatrixF to_layout_order(const signalio::EegSegment& seg, const montage::ElectrodeLayout& layout,
                        const std::vector<std::size_t>& required, const std::string& origin) {
  MatrixF hr(layout.size(), seg.samples());
  std::vector<bool> found(layout.size(), false);
  for (std::size_t r = 0; r < seg.channels(); ++r) {
    const std::size_t i = layout.find(seg.labels[r]);
    if (i == montage::ElectrodeLayout::npos) continue;
    std::copy(seg.data.row(r).begin(), seg.data.row(r).end(), hr.row(i).begin());
    found[i] = true;
  }
  for (auto i : required)
    if (!found[i]) throw DataError(origin + ": missing channel " + layout.labels[i]);
  return hr;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void write_curve(const std::string& path, const std::vector<EpochLog>& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "epoch,train_loss,val_nmse,val_snr_db,lr,seconds,skipped_steps\n";
  char buf[256];
  for (const auto& e : curve) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.3f,%zu\n", e.epoch, e.train_loss, e.val_nmse,
                  e.val_snr_db, e.lr, e.seconds, e.skipped_steps);
    out << buf;
  }
}

std::vector<EpochLog> read_curve(const std::string& path) {
  std::vector<EpochLog> curve;
  std::ifstream in(path);
  std::string line;
  if (!in || !std::getline(in, line)) return curve;
  while (std::getline(in, line)) {
    EpochLog e;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf,%zu", &e.epoch, &e.train_loss, &e.val_nmse,
                    &e.val_snr_db, &e.lr, &e.seconds, &e.skipped_steps) == 7)
      curve.push_back(e);
  }
  return curve;
}

/// Keys that fix the parameter layout; a resumed run must agree on them.
const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> k = {"dataset", "factor",  "layers",    "width",     "heads",
                                             "mlp_ratio", "patch", "time_dim",  "topo",      "graph",
                                             "topo_grid", "topo_features"};
  return k;
}

montage::SrTask full_task(const montage::ElectrodeLayout& layout) {
  return montage::make_task(layout, layout.labels, "full", 1);
}

void write_topomap_png(const std::string& path, const std::vector<double>& values,
                       const montage::ElectrodeLayout& layout, const montage::SrTask& task, std::size_t size,
                       std::size_t group) {
  const topomap::TopoImage img = topomap::render_topomap(values, layout, task, size, size, group);
  image_io::write_png(path, img.width, img.height, topomap::to_rgb8(img));
}

}  // namespace

// --- data -------------------------------------------------------------------

Dataset open_dataset(const std::string& dir, const config::TrainConfig& cfg) {
  const fs::path root(dir);
  std::ifstream in(root / "manifest.json");
  if (!in) throw DataError("no manifest.json under '" + dir + "'");
  ordered_json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir + "/manifest.json: " + e.what());
  }
  Dataset ds;
  ds.root = dir;
  try {
    ds.dataset = manifest.at("dataset").get<std::string>();
    ds.layout_name = manifest.at("layout").get<std::string>();
    ds.rate = manifest.at("rate").get<float>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir + "/manifest.json: " + e.what());
  }
  if (montage::normalize_label(ds.dataset) != montage::normalize_label(cfg.dataset))
    throw DataError("montage mismatch: data is '" + ds.dataset + "' but the config expects '" + cfg.dataset + "'");
  ds.layout = montage::load_layout(ds.layout_name);
  ds.task = montage::subsample(ds.layout, ds.dataset, cfg.factor);
  ds.train = split_files(manifest, "train", root);
  ds.val = split_files(manifest, "val", root);
  ds.test = split_files(manifest, "test", root);
  const std::string& probe = !ds.train.empty() ? ds.train.front() : !ds.test.empty() ? ds.test.front() : "";
  if (probe.empty()) throw DataError("manifest under '" + dir + "' lists no segments");
  ds.samples = signalio::read_segment(probe).samples();
  return ds;
}

MatrixF load_hr(const std::string& path, const Dataset& ds) {
  const signalio::EegSegment seg = signalio::read_segment(path);
  if (seg.samples() != ds.samples)
    throw DataError(path + ": " + std::to_string(seg.samples()) + " samples, expected " +
                    std::to_string(ds.samples));
  if (std::fabs(seg.rate - ds.rate) > 1e-3f) throw DataError(path + ": sampling rate differs from the manifest");
  return to_layout_order(seg, ds.layout, all_rows(ds.layout.size()), path);
}

Standardizer Standardizer::fit(const std::vector<MatrixF>& segments) {
  if (segments.empty()) throw DataError("cannot standardize an empty training set");
  const std::size_t c = segments.front().rows();
  Standardizer s;
  s.mean.assign(c, 0.0f);
  s.stddev.assign(c, 1.0f);
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<double> sums, sq;
    for (const auto& m : segments) {
      double a = 0.0;
      for (float v : m.row(ch)) a += v;
      sums.push_back(a);
    }
    const double n = static_cast<double>(segments.size() * segments.front().cols());
    const double mean = metrics::pairwise_sum(sums) / n;
    for (const auto& m : segments) {
      double a = 0.0;
      for (float v : m.row(ch)) a += (v - mean) * (v - mean);
      sq.push_back(a);
    }
    const double sd = std::sqrt(metrics::pairwise_sum(sq) / n);
    s.mean[ch] = static_cast<float>(mean);
    s.stddev[ch] = static_cast<float>(std::max(sd, 1e-6));
  }
  return s;
}

MatrixF Standardizer::forward(const MatrixF& hr) const {
  if (hr.rows() != mean.size()) throw DataError("standardizer channel count mismatch");
  MatrixF out(hr.rows(), hr.cols());
  for (std::size_t r = 0; r < hr.rows(); ++r)
    for (std::size_t c = 0; c < hr.cols(); ++c) out(r, c) = (hr(r, c) - mean[r]) / stddev[r];
  return out;
}

MatrixF Standardizer::inverse_rows(const MatrixF& z, const std::vector<std::size_t>& hr_rows) const {
  if (z.rows() != hr_rows.size()) throw DataError("standardizer row count mismatch");
  MatrixF out(z.rows(), z.cols());
  for (std::size_t r = 0; r < z.rows(); ++r)
    for (std::size_t c = 0; c < z.cols(); ++c) out(r, c) = z(r, c) * stddev[hr_rows[r]] + mean[hr_rows[r]];
  return out;
}

// --- conditioning -------------------------------------------------------------

Conditioner::Conditioner(const config::TrainConfig& cfg, const Dataset& ds, Standardizer norm)
    : cfg_(cfg), ds_(&ds), norm_(std::move(norm)) {
  if (cfg.patch == 0 || ds.samples % cfg.patch != 0)
    throw ConfigError("segment length " + std::to_string(ds.samples) + " is not a multiple of patch " +
                      std::to_string(cfg.patch));
  groups_ = ds.samples / cfg.patch;
  if (cfg.graph) knn_ = montage::spatial_knn(ds.task, ds.layout, cfg.n_s);
  topo_dim_ = topomap::kBuiltinFeatureDim;
  if (cfg.topo && cfg.topo_features != "builtin") {
    const std::string& probe = !ds.train.empty() ? ds.train.front() : ds.test.front();
    const auto f = topomap::load_external_features(
        (fs::path(cfg.topo_features) / (fs::path(probe).stem().string() + ".topf")).string(), groups_,
        cfg.topo_grid, cfg.topo_grid);
    topo_dim_ = f.d;
  }
}

dit::ModelConfig Conditioner::model_config() const {
  dit::ModelConfig mc;
  mc.layers = cfg_.layers;
  mc.width = cfg_.width;
  mc.patch = cfg_.patch;
  mc.heads = cfg_.heads;
  mc.mlp_ratio = cfg_.mlp_ratio;
  mc.time_dim = cfg_.time_dim;
  mc.groups = groups_;
  mc.topo_grid = cfg_.topo_grid;
  mc.topo_dim = topo_dim_;
  mc.use_topo = cfg_.topo;
  mc.use_graph = cfg_.graph;
  mc.visible_hr = ds_->task.visible;
  mc.unseen_hr = ds_->task.unseen;
  mc.validate();
  return mc;
}

Prepared Conditioner::prepare(const MatrixF& hr_raw, const std::string& source_path) const {
  Prepared p;
  p.x = norm_.forward(hr_raw);
  const MatrixF vis = signalio::select_rows(p.x, ds_->task.visible);
  const auto patches = signalio::patchify(vis, cfg_.patch);
  p.cond = signalio::flatten_tokens(patches);
  if (cfg_.graph) {
    for (const auto& g : relgraph::build_graphs(patches, knn_, cfg_.effective_k()))
      p.graphs.push_back(g.a_norm.cast<float>());
  }
  if (cfg_.topo) {
    if (cfg_.topo_features == "builtin") {
      p.topo = topomap::builtin_features(patches, ds_->layout, ds_->task, {cfg_.topo_image, cfg_.topo_grid}).data;
    } else {
      if (source_path.empty()) throw ConfigError("external topo features need the source segment path");
      p.topo = topomap::load_external_features(
                   (fs::path(cfg_.topo_features) / (fs::path(source_path).stem().string() + ".topf")).string(),
                   groups_, cfg_.topo_grid, cfg_.topo_grid, topo_dim_)
                   .data;
    }
  }
  return p;
}

std::vector<Prepared> Conditioner::prepare_all(const std::vector<MatrixF>& hr_raw,
                                               const std::vector<std::string>& paths) const {
  std::vector<Prepared> out(hr_raw.size());
  std::string error;
  int failed_kind = 0;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(hr_raw.size()); ++i) {
    try {
      out[i] = prepare(hr_raw[i], i < static_cast<long>(paths.size()) ? paths[i] : "");
    } catch (const std::exception& e) {
#pragma omp critical
      if (error.empty()) {
        error = e.what();
        failed_kind = dynamic_cast<const ConfigError*>(&e) ? 2 : 3;
      }
    }
  }
  if (!error.empty()) {
    if (failed_kind == 2) throw ConfigError(error);
    throw DataError(error);
  }
  return out;
}

dit::DenoiserInput<float> model_input(const Prepared& p, const MatrixF* noisy, double t) {
  dit::DenoiserInput<float> in;
  in.cond_tokens = &p.cond;
  in.graphs = p.graphs.empty() ? nullptr : &p.graphs;
  in.topo_features = p.topo.size() ? &p.topo : nullptr;
  in.noisy = noisy;
  in.t = t;
  return in;
}

MatrixF generate(const dit::Denoiser<float>& model, const Prepared& p, std::size_t steps,
                 diffusion::VelocityForm form, std::uint64_t seed, std::uint64_t stream) {
  const auto& mc = model.config();
  diffusion::DenoiseFn<float> fn = [&](const MatrixF& z, double t) {
    return signalio::select_rows(model.forward(model_input(p, &z, t)), mc.unseen_hr);
  };
  std::mt19937_64 rng = diffusion::make_stream(seed, stream);
  return diffusion::sample<float>(fn, mc.c_unseen(), mc.samples(), {steps, form}, rng);
}

// --- training -----------------------------------------------------------------

namespace {

checkpoint::ModelCheckpoint make_checkpoint(const config::TrainConfig& cfg, const Dataset& ds,
                                            const Conditioner& cond, const dit::Denoiser<float>& model,
                                            const optim::AdamWState<float>& adam, std::size_t epochs_done) {
  checkpoint::ModelCheckpoint ck;
  ck.config = config::echo(cfg);
  ck.config["meta.layout"] = ds.layout_name;
  ck.config["meta.samples"] = std::to_string(ds.samples);
  ck.config["meta.rate"] = std::to_string(ds.rate);
  ck.config["meta.topo_dim"] = std::to_string(cond.topo_dim());
  ck.config["meta.visible"] = label_list(ds.layout, ds.task.visible);
  ck.config["state.epoch"] = std::to_string(epochs_done);
  ck.step = adam.step;
  std::ostringstream rng;
  rng << diffusion::make_stream(cfg.seed, kShuffleStream + epochs_done);
  ck.rng_state = rng.str();
  checkpoint::put_params(ck, model.params(), "param/");
  checkpoint::put_params(ck, adam.m, "adam.m/");
  checkpoint::put_params(ck, adam.v, "adam.v/");
  const auto& norm = cond.standardizer();
  const auto c = static_cast<std::uint32_t>(norm.mean.size());
  ck.tensors.push_back({"norm.mean", {1, c}, norm.mean});
  ck.tensors.push_back({"norm.std", {1, c}, norm.stddev});
  return ck;
}

Standardizer read_standardizer(const checkpoint::ModelCheckpoint& ck) {
  Standardizer s;
  s.mean = ck.at("norm.mean").values;
  s.stddev = ck.at("norm.std").values;
  if (s.mean.size() != s.stddev.size()) throw DataError("checkpoint standardizer is inconsistent");
  return s;
}

metrics::FidelityReport score_split(const dit::Denoiser<float>& model, const Conditioner& cond, const Dataset& ds,
                                    const std::vector<Prepared>& prepared, const std::vector<MatrixF>& raw,
                                    std::size_t steps, diffusion::VelocityForm form, std::uint64_t seed,
                                    std::uint64_t stream0) {
  metrics::FidelityAccumulator acc([&] {
    std::vector<std::string> l;
    for (auto i : ds.task.unseen) l.push_back(ds.layout.labels[i]);
    return l;
  }());
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    const MatrixF z = generate(model, prepared[i], steps, form, seed, stream0 + i);
    const MatrixF un = cond.standardizer().inverse_rows(z, ds.task.unseen);
    MatrixF pred = raw[i];
    for (std::size_t r = 0; r < ds.task.unseen.size(); ++r)
      std::copy(un.row(r).begin(), un.row(r).end(), pred.row(ds.task.unseen[r]).begin());
    acc.add(pred, raw[i], ds.task.unseen);
  }
  return acc.report(ds.dataset, ds.task.factor);
}

}  // namespace

TrainResult train(const config::TrainConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                  const TrainOptions& opt) {
  using clock = std::chrono::steady_clock;
  const Dataset ds = open_dataset(data_dir, cfg);
  if (ds.train.empty()) throw DataError("no training segments under '" + data_dir + "'");
  fs::create_directories(out_dir);

  std::vector<MatrixF> train_raw;
  for (const auto& f : ds.train) train_raw.push_back(load_hr(f, ds));

  std::optional<checkpoint::ModelCheckpoint> resume;
  if (!opt.resume.empty()) {
    resume = checkpoint::load(opt.resume);
    const auto now = config::echo(cfg);
    for (const auto& k : model_keys())
      if (resume->config.at(k) != now.at(k))
        throw ConfigError("cannot resume: '" + k + "' is " + resume->config.at(k) + " in the checkpoint but " +
                          now.at(k) + " in the config");
  }
  Standardizer norm = resume ? read_standardizer(*resume) : Standardizer::fit(train_raw);
  const Conditioner cond(cfg, ds, norm);
  const std::vector<Prepared> train_set = cond.prepare_all(train_raw, ds.train);

  std::vector<MatrixF> val_raw;
  std::vector<std::string> val_files(ds.val.begin(), ds.val.begin() + static_cast<long>(std::min(
                                                                        cfg.val_segments, ds.val.size())));
  for (const auto& f : val_files) val_raw.push_back(load_hr(f, ds));
  const std::vector<Prepared> val_set = cond.prepare_all(val_raw, val_files);

  const dit::ModelConfig mc = cond.model_config();
  dit::Denoiser<float> model(mc);
  std::vector<montage::Vec2> slots;
  for (std::size_t i = 0; i < ds.layout.size(); ++i) slots.push_back(ds.layout.pos2d[i]);
  model.init(diffusion::make_stream(cfg.seed, kInitStream)(), cfg.geometry_pos ? &slots : nullptr);
  auto& params = model.params();
  auto grads = params.zeros_like();
  auto adam = optim::AdamWState<float>::like(params);

  std::size_t start_epoch = 0;
  std::vector<EpochLog> curve;
  if (resume) {
    checkpoint::get_params(*resume, params, "param/");
    checkpoint::get_params(*resume, adam.m, "adam.m/");
    checkpoint::get_params(*resume, adam.v, "adam.v/");
    adam.step = resume->step;
    start_epoch = std::stoul(resume->config.at("state.epoch"));
    curve = read_curve((fs::path(out_dir) / "curve.csv").string());
    curve.resize(std::min(curve.size(), start_epoch));
  }

  const std::size_t n = train_set.size(), batch = cfg.batch_size;
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::uint64_t total_steps = static_cast<std::uint64_t>(steps_per_epoch * cfg.epochs);
  const std::vector<std::size_t>& unseen = mc.unseen_hr;
  const std::string ck_path = (fs::path(out_dir) / "checkpoint.tdck").string();
  {
    std::ofstream out(fs::path(out_dir) / "config.txt");
    out << config::to_text(cfg);
  }

  char buf[512];
  std::snprintf(buf, sizeof(buf), "train: %zu segments, %zu val, seq %zu tokens, %zu params, %zu steps/epoch", n,
                val_set.size(), mc.seq_len(), params.scalar_count(), steps_per_epoch);
  log_line(opt.log, buf);

  double first_loss = std::numeric_limits<double>::quiet_NaN();
  std::size_t consecutive_skips = 0;
  const std::size_t last_epoch = opt.stop_after_epoch ? std::min(opt.stop_after_epoch, cfg.epochs) : cfg.epochs;
  for (std::size_t epoch = start_epoch; epoch < last_epoch; ++epoch) {
    const auto t0 = clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    {
      std::mt19937_64 rng = diffusion::make_stream(cfg.seed, kShuffleStream + epoch);
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    }
    EpochLog log;
    log.epoch = epoch + 1;
    std::vector<double> batch_losses;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = b * batch, hi = std::min(n, lo + batch);
      const float scale = 1.0f / static_cast<float>(hi - lo);
      grads.zero();
      double loss = 0.0;
      for (std::size_t pos = lo; pos < hi; ++pos) {
        const Prepared& p = train_set[order[pos]];
        std::mt19937_64 rng = diffusion::make_stream(cfg.seed, kTrainStream + epoch * n + pos);
        const double t = diffusion::sample_time(rng);
        const MatrixF eps = diffusion::standard_normal<float>(mc.c_unseen(), mc.samples(), rng);
        const MatrixF z = diffusion::noise_interpolate(signalio::select_rows(p.x, unseen), eps, t);
        const auto in = model_input(p, &z, t);
        dit::ForwardCache<float> cache;
        const MatrixF pred = model.forward(in, &cache);
        MatrixF dpred;
        loss += diffusion::masked_mse(pred, p.x, unseen, &dpred);
        for (auto& g : dpred.storage()) g *= scale;
        model.backward(cache, dpred, in, grads);
      }
      loss /= static_cast<double>(hi - lo);
      if (!std::isfinite(loss))
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                             std::to_string(b));
      if (std::isnan(first_loss)) first_loss = loss;
      if (loss > cfg.divergence_factor * first_loss) {
        std::snprintf(buf, sizeof(buf), "training diverged at epoch %zu batch %zu: loss %.6g vs initial %.6g",
                      epoch + 1, b, loss, first_loss);
        throw NumericalError(buf);
      }
      batch_losses.push_back(loss);

      const std::uint64_t step = adam.step;
      double lr = optim::cosine_lr(std::min<std::uint64_t>(step, total_steps), total_steps, cfg.lr);
      if (step < cfg.warmup_steps) lr = cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
      log.lr = lr;
      optim::clip_grad_norm(grads, cfg.grad_clip);
      if (!optim::adamw_step(params, grads, adam, {lr, 0.9, 0.999, 1e-8, cfg.weight_decay})) {
        ++log.skipped_steps;
        log_line(opt.log, "warning: non-finite gradient, step skipped (epoch " + std::to_string(epoch + 1) + ")");
        if (++consecutive_skips >= 20) throw NumericalError("20 consecutive non-finite gradients");
      } else {
        consecutive_skips = 0;
      }
    }
    log.train_loss = metrics::pairwise_sum(batch_losses) / static_cast<double>(batch_losses.size());
    if (!val_set.empty()) {
      const auto rep = score_split(model, cond, ds, val_set, val_raw, cfg.val_steps, cfg.velocity, cfg.seed,
                                   kValStream);
      log.val_nmse = rep.nmse;
      log.val_snr_db = rep.snr_db;
    } else {
      log.val_nmse = log.val_snr_db = std::numeric_limits<double>::quiet_NaN();
    }
    log.seconds = std::chrono::duration<double>(clock::now() - t0).count();
    curve.push_back(log);
    std::snprintf(buf, sizeof(buf), "epoch %zu/%zu  loss %.5f  val_nmse %.4f  val_snr %.3f dB  lr %.3g  %.1fs",
                  log.epoch, cfg.epochs, log.train_loss, log.val_nmse, log.val_snr_db, log.lr, log.seconds);
    log_line(opt.log, buf);
    write_curve((fs::path(out_dir) / "curve.csv").string(), curve);
    if ((epoch + 1) % std::max<std::size_t>(cfg.checkpoint_every, 1) == 0 || epoch + 1 == last_epoch)
      checkpoint::save(ck_path, make_checkpoint(cfg, ds, cond, model, adam, epoch + 1));
  }
  if (start_epoch >= last_epoch) checkpoint::save(ck_path, make_checkpoint(cfg, ds, cond, model, adam, last_epoch));
  return {ck_path, curve};
}

LoadedModel load_model(const std::string& checkpoint_path) {
  const checkpoint::ModelCheckpoint ck = checkpoint::load(checkpoint_path);
  LoadedModel lm;
  try {
    lm.cfg = config::from_echo(ck.config);
    lm.layout_name = ck.config.at("meta.layout");
    lm.samples = std::stoul(ck.config.at("meta.samples"));
    lm.epoch = std::stoul(ck.config.at("state.epoch"));
  } catch (const std::out_of_range&) {
    throw DataError(checkpoint_path + ": checkpoint lacks model metadata");
  }
  lm.step = ck.step;
  lm.norm = read_standardizer(ck);
  Dataset ds;
  ds.dataset = lm.cfg.dataset;
  ds.layout_name = lm.layout_name;
  ds.layout = montage::load_layout(lm.layout_name);
  ds.task = montage::subsample(ds.layout, ds.dataset, lm.cfg.factor);
  ds.samples = lm.samples;
  if (lm.norm.mean.size() != ds.layout.size()) throw DataError(checkpoint_path + ": standardizer size mismatch");
  if (ck.config.count("meta.visible") && ck.config.at("meta.visible") != label_list(ds.layout, ds.task.visible))
    throw DataError(checkpoint_path + ": visible channel set differs from the preset");
  config::TrainConfig probe_cfg = lm.cfg;
  probe_cfg.topo_features = "builtin";  // shape only; the real source is checked at prepare time
  const Conditioner cond(probe_cfg, ds, lm.norm);
  dit::ModelConfig mc = cond.model_config();
  mc.topo_dim = std::stoul(ck.config.at("meta.topo_dim"));
  lm.model = std::make_unique<dit::Denoiser<float>>(mc);
  checkpoint::get_params(ck, lm.model->params(), "param/");
  return lm;
}

// --- evaluation ---------------------------------------------------------------

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "model") return EvalMode::kModel;
  if (s == "oracle") return EvalMode::kOracle;
  if (s == "copy") return EvalMode::kCopy;
  if (s == "zero") return EvalMode::kZero;
  throw ConfigError("unknown eval mode '" + s + "' (model | oracle | copy | zero)");
}

MatrixF copy_nearest(const MatrixF& truth, const montage::ElectrodeLayout& layout, const montage::SrTask& task) {
  MatrixF pred = truth;
  for (auto u : task.unseen) {
    std::size_t best = task.visible.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (auto v : task.visible) {
      const double d = montage::chord_distance(layout.pos3d[u], layout.pos3d[v]);
      if (d < best_d || (d == best_d && montage::normalize_label(layout.labels[v]) <
                                            montage::normalize_label(layout.labels[best]))) {
        best_d = d;
        best = v;
      }
    }
    std::copy(truth.row(best).begin(), truth.row(best).end(), pred.row(u).begin());
  }
  return pred;
}

metrics::FidelityReport evaluate(const config::TrainConfig& cfg_in, const std::string& data_dir,
                                 const EvalOptions& opt) {
  std::optional<LoadedModel> lm;
  config::TrainConfig cfg = cfg_in;
  if (opt.mode == EvalMode::kModel) {
    if (opt.checkpoint.empty()) throw ConfigError("model evaluation needs --checkpoint");
    lm = load_model(opt.checkpoint);
    cfg = lm->cfg;
    cfg.topo_features = cfg_in.topo_features != "builtin" ? cfg_in.topo_features : lm->cfg.topo_features;
  }
  const Dataset ds = open_dataset(data_dir, cfg);
  if (lm) {
    if (ds.layout_name != lm->layout_name)
      throw DataError("montage mismatch: checkpoint layout '" + lm->layout_name + "', data layout '" +
                      ds.layout_name + "'");
    if (ds.samples != lm->samples)
      throw DataError("segment length mismatch: checkpoint " + std::to_string(lm->samples) + ", data " +
                      std::to_string(ds.samples));
  }
  const std::vector<std::string>* files = opt.split == "test"    ? &ds.test
                                          : opt.split == "val"   ? &ds.val
                                          : opt.split == "train" ? &ds.train
                                                                 : nullptr;
  if (!files) throw ConfigError("unknown split '" + opt.split + "'");
  if (files->empty()) throw DataError("split '" + opt.split + "' is empty");
  const std::size_t count = opt.max_segments ? std::min(opt.max_segments, files->size()) : files->size();
  const std::uint64_t seed = opt.seed.value_or(cfg.seed);
  const std::size_t steps = opt.steps ? opt.steps : cfg.sample_steps;

  std::optional<Conditioner> cond;
  if (lm) cond.emplace(cfg, ds, lm->norm);

  std::vector<std::string> unseen_labels;
  for (auto i : ds.task.unseen) unseen_labels.push_back(ds.layout.labels[i]);
  metrics::FidelityAccumulator acc(unseen_labels);
  if (!opt.topomap_dir.empty()) fs::create_directories(opt.topomap_dir);
  const montage::SrTask all = full_task(ds.layout);

  for (std::size_t i = 0; i < count; ++i) {
    const std::string& path = (*files)[i];
    const MatrixF truth = load_hr(path, ds);
    MatrixF pred;
    switch (opt.mode) {
      case EvalMode::kOracle:
        pred = truth;
        break;
      case EvalMode::kCopy:
        pred = copy_nearest(truth, ds.layout, ds.task);
        break;
      case EvalMode::kZero:
        pred = truth;
        for (auto u : ds.task.unseen) std::fill(pred.row(u).begin(), pred.row(u).end(), 0.0f);
        break;
      case EvalMode::kModel: {
        const Prepared p = cond->prepare(truth, path);
        const MatrixF z = generate(*lm->model, p, steps, cfg.velocity, seed, kEvalStream + i);
        const MatrixF un = lm->norm.inverse_rows(z, ds.task.unseen);
        pred = truth;
        for (std::size_t r = 0; r < ds.task.unseen.size(); ++r)
          std::copy(un.row(r).begin(), un.row(r).end(), pred.row(ds.task.unseen[r]).begin());
        break;
      }
    }
    acc.add(pred, truth, ds.task.unseen);

    if (!opt.topomap_dir.empty() && i < opt.topomap_segments) {
      const std::size_t patch = cfg.patch && ds.samples % cfg.patch == 0 ? cfg.patch : ds.samples;
      const MatrixF avg_t = topomap::temporal_average(signalio::patchify(truth, patch));
      const MatrixF avg_p = topomap::temporal_average(signalio::patchify(pred, patch));
      for (std::size_t g = 0; g < avg_t.cols(); ++g) {
        std::vector<double> vt(ds.layout.size()), vp(ds.layout.size());
        for (std::size_t c = 0; c < all.visible.size(); ++c) {
          vt[c] = avg_t(all.visible[c], g);
          vp[c] = avg_p(all.visible[c], g);
        }
        char name[64];
        std::snprintf(name, sizeof(name), "seg%03zu_g%02zu_truth.png", i, g);
        write_topomap_png((fs::path(opt.topomap_dir) / name).string(), vt, ds.layout, all, 64, g);
        std::snprintf(name, sizeof(name), "seg%03zu_g%02zu_generated.png", i, g);
        write_topomap_png((fs::path(opt.topomap_dir) / name).string(), vp, ds.layout, all, 64, g);
      }
    }
  }
  return acc.report(cfg.dataset, cfg.factor);
}

signalio::EegSegment sample_segment(const LoadedModel& lm, const signalio::EegSegment& input, std::size_t steps,
                                    std::uint64_t seed) {
  if (lm.cfg.topo && lm.cfg.topo_features != "builtin")
    throw ConfigError("sample supports built-in topo features only");
  Dataset ds;
  ds.dataset = lm.cfg.dataset;
  ds.layout_name = lm.layout_name;
  ds.layout = montage::load_layout(lm.layout_name);
  ds.task = montage::subsample(ds.layout, ds.dataset, lm.cfg.factor);
  ds.samples = lm.samples;
  if (input.samples() != lm.samples)
    throw DataError("input has " + std::to_string(input.samples()) + " samples, the model expects " +
                    std::to_string(lm.samples));
  MatrixF hr = to_layout_order(input, ds.layout, ds.task.visible, "input");
  const Conditioner cond(lm.cfg, ds, lm.norm);
  const Prepared p = cond.prepare(hr);
  const MatrixF z = generate(*lm.model, p, steps ? steps : lm.cfg.sample_steps, lm.cfg.velocity, seed, kEvalStream);
  const MatrixF un = lm.norm.inverse_rows(z, ds.task.unseen);
  for (std::size_t r = 0; r < ds.task.unseen.size(); ++r)
    std::copy(un.row(r).begin(), un.row(r).end(), hr.row(ds.task.unseen[r]).begin());
  signalio::EegSegment out;
  out.data = std::move(hr);
  out.rate = input.rate;
  out.labels = ds.layout.labels;
  return out;
}

// --- ablation -----------------------------------------------------------------

std::vector<ArmResult> ablate(const config::TrainConfig& cfg, const std::string& data_dir,
                              const std::string& out_dir, std::ostream* log) {
  struct Arm {
    const char* name;
    bool topo, graph;
  };
  const Arm arms[] = {{"baseline", false, false}, {"topo", true, false}, {"topo_graph", true, true}};
  fs::create_directories(out_dir);
  std::vector<ArmResult> results;
  for (const Arm& a : arms) {
    config::TrainConfig c = cfg;
    c.topo = a.topo;
    c.graph = a.graph;
    const std::string dir = (fs::path(out_dir) / a.name).string();
    log_line(log, std::string("== arm ") + a.name);
    const TrainResult tr = train(c, data_dir, dir, {"", 0, log});
    EvalOptions eo;
    eo.checkpoint = tr.checkpoint;
    ArmResult r{a.name, a.topo, a.graph, evaluate(c, data_dir, eo), tr.curve};
    std::ofstream(fs::path(dir) / "report.json") << metrics::to_json(r.report) << "\n";
    results.push_back(std::move(r));
  }
  EvalOptions copy_opt;
  copy_opt.mode = EvalMode::kCopy;
  const metrics::FidelityReport copy = evaluate(cfg, data_dir, copy_opt);

  ordered_json j;
  j["dataset"] = cfg.dataset;
  j["factor"] = cfg.factor;
  j["arms"] = ordered_json::array();
  std::size_t best = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    ordered_json curve = ordered_json::array();
    for (const auto& e : r.curve) curve.push_back({{"epoch", e.epoch}, {"val_snr_db", e.val_snr_db}});
    j["arms"].push_back({{"name", r.name},
                         {"topo", r.topo},
                         {"graph", r.graph},
                         {"nmse", r.report.nmse},
                         {"snr_db", std::min(r.report.snr_db, metrics::kSnrCapDb)},
                         {"pcc", r.report.pcc},
                         {"curve_csv", r.name + "/curve.csv"},
                         {"val_snr_curve", curve}});
    if (r.report.nmse < results[best].report.nmse) best = i;
  }
  j["copy_baseline"] = {{"nmse", copy.nmse}, {"snr_db", std::min(copy.snr_db, metrics::kSnrCapDb)}, {"pcc", copy.pcc}};
  j["best_arm"] = results[best].name;
  j["full_model_best"] = results[best].name == "topo_graph";
  std::ofstream(fs::path(out_dir) / "ablation.json") << j.dump(2) << "\n";
  return results;
}

// --- inspection tools -----------------------------------------------------------

namespace {

struct SegmentView {
  montage::ElectrodeLayout layout;
  montage::SrTask task;
  signalio::PatchTensor<float> visible;
};

SegmentView visible_view(const signalio::EegSegment& seg, const config::TrainConfig& cfg) {
  SegmentView v;
  v.layout = montage::load_layout(montage::layout_for_dataset(cfg.dataset));
  v.task = montage::subsample(v.layout, cfg.dataset, cfg.factor);
  if (cfg.patch == 0 || seg.samples() % cfg.patch != 0)
    throw ConfigError("segment length " + std::to_string(seg.samples()) + " is not a multiple of patch " +
                      std::to_string(cfg.patch));
  const MatrixF hr = to_layout_order(seg, v.layout, v.task.visible, "segment");
  v.visible = signalio::patchify(signalio::select_rows(hr, v.task.visible), cfg.patch);
  return v;
}

}  // namespace

std::string graph_dump_json(const signalio::EegSegment& seg, const config::TrainConfig& cfg) {
  const SegmentView v = visible_view(seg, cfg);
  const auto knn = montage::spatial_knn(v.task, v.layout, cfg.n_s);
  const auto graphs = relgraph::build_graphs(v.visible, knn, cfg.effective_k());
  ordered_json j;
  j["dataset"] = cfg.dataset;
  j["factor"] = cfg.factor;
  j["n_s"] = cfg.n_s;
  j["k"] = graphs.empty() ? cfg.effective_k() : graphs.front().k;
  j["k_clamped"] = !graphs.empty() && graphs.front().k_clamped;
  ordered_json labels = ordered_json::array();
  for (auto i : v.task.visible) labels.push_back(v.layout.labels[i]);
  j["labels"] = labels;
  j["graphs"] = ordered_json::array();
  for (const auto& g : graphs) {
    ordered_json edges = ordered_json::array();
    for (std::size_t r = 0; r < g.a_pruned.rows(); ++r)
      for (std::size_t c = r + 1; c < g.a_pruned.cols(); ++c)
        if (g.a_pruned(r, c) != 0.0) edges.push_back({{"i", r}, {"j", c}, {"w", g.a_pruned(r, c)}});
    j["graphs"].push_back({{"group", g.group}, {"edges", edges}});
  }
  return j.dump(2);
}

std::vector<std::string> topo_render(const signalio::EegSegment& seg, const config::TrainConfig& cfg,
                                     const std::string& out_dir, std::size_t image_size) {
  const SegmentView v = visible_view(seg, cfg);
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  const MatrixF avg = topomap::temporal_average(v.visible);
  for (std::size_t g = 0; g < avg.cols(); ++g) {
    std::vector<double> values(v.task.c_lr());
    for (std::size_t c = 0; c < values.size(); ++c) values[c] = avg(c, g);
    char name[32];
    std::snprintf(name, sizeof(name), "topo_g%02zu.png", g);
    const std::string path = (fs::path(out_dir) / name).string();
    write_topomap_png(path, values, v.layout, v.task, image_size, g);
    written.push_back(path);
  }
  const std::string feat = (fs::path(out_dir) / "features.topf").string();
  topomap::write_features(feat, topomap::builtin_features(v.visible, v.layout, v.task, {cfg.topo_image, cfg.topo_grid}));
  written.push_back(feat);
  return written;
}

std::vector<std::string> prepare_csv(const std::string& csv_path, float rate, const std::string& out_dir,
                                     const signalio::PreprocessConfig& pre) {
  const signalio::EegSegment raw = signalio::read_csv(csv_path, rate);
  fs::create_directories(out_dir);
  const std::string stem = fs::path(csv_path).stem().string();
  std::vector<std::string> written;
  std::size_t i = 0;
  for (const auto& w : signalio::split_windows(raw, pre.window_s)) {
    char name[32];
    std::snprintf(name, sizeof(name), "_w%04zu.eegs", i++);
    const std::string path = (fs::path(out_dir) / (stem + name)).string();
    signalio::write_segment(path, signalio::preprocess(w, pre));
    written.push_back(path);
  }
  return written;
}

}  // namespace topodiff::pipeline
