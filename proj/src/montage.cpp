#include "topodiff/montage.hpp"

#include "topodiff/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

#ifndef TOPODIFF_ASSET_DIR
#define TOPODIFF_ASSET_DIR "assets"
#endif

namespace topodiff::montage {

namespace {

using Labels = std::vector<std::string>;

const Labels kPhysionetAll = {
    "Fp1", "Fpz", "Fp2", "AF7", "AF3", "AFz", "AF4", "AF8", "F7",  "F5",  "F3",  "F1",  "Fz",
    "F2",  "F4",  "F6",  "F8",  "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "FT8",
    "T7",  "C5",  "C3",  "C1",  "Cz",  "C2",  "C4",  "C6",  "T8",  "TP7", "CP5", "CP3", "CP1",
    "CPz", "CP2", "CP4", "CP6", "TP8", "P7",  "P5",  "P3",  "P1",  "Pz",  "P2",  "P4",  "P6",
    "P8",  "PO7", "PO5", "PO3", "POz", "PO4", "PO6", "PO8", "O1",  "Oz",  "O2",  "Iz"};
const Labels kPhysionet2x = {"Fp1", "Fp2", "Fz",  "F3",  "F4",  "F7",  "F8",  "FC1",
                             "FC2", "FC5", "FC6", "Cz",  "C3",  "C4",  "T7",  "T8",
                             "TP7", "TP8", "CP1", "CP2", "CP5", "CP6", "P7",  "P8",
                             "Pz",  "P3",  "P4",  "PO3", "PO4", "Oz",  "O1",  "O2"};

const Labels kSeedAll = {
    "Fp1", "Fpz", "Fp2", "AF3", "AF4", "F7",  "F5",  "F3",  "F1",  "Fz",  "F2",
    "F4",  "F6",  "F8",  "FT7", "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6",
    "FT8", "T7",  "C5",  "C3",  "C1",  "Cz",  "C2",  "C4",  "C6",  "T8",  "TP7",
    "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6", "TP8", "P7",  "P5",  "P3",
    "P1",  "Pz",  "P2",  "P4",  "P6",  "P8",  "PO7", "PO5", "PO3", "POz", "PO4",
    "PO6", "PO8", "CB1", "O1",  "Oz",  "O2",  "CB2"};
const Labels kSeed2x = {"Fp1", "Fp2", "AF3", "AF4", "F7",  "F3",  "Fz",  "F4",
                        "F8",  "FC5", "FC1", "FC2", "FC6", "T7",  "C3",  "Cz",
                        "C4",  "T8",  "CP5", "CP1", "CP2", "CP6", "P7",  "P3",
                        "Pz",  "P4",  "P8",  "PO3", "PO4", "O1",  "Oz",  "O2"};

// Shared by SEED and PhysioNet.
const Labels k4x = {"Fp1", "Fp2", "F7", "F8", "T7", "T8", "F3", "F4",
                    "C3",  "C4",  "P3", "P4", "P7", "P8", "O1", "O2"};
const Labels k8x = {"F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2"};

const Labels kTuszAll = {"Fp1", "Fp2", "F3", "F4", "F7", "F8", "Fz", "C3", "C4", "Cz",
                         "P3",  "P4",  "Pz", "O1", "O2", "T3", "T4", "T5", "T6"};
const Labels kTusz2x = {"Fp1", "Fp2", "F3", "F4", "C3", "C4", "O1", "O2", "Cz"};

struct Montage {
  const Labels* all;
  std::map<int, const Labels*> presets;
};

// The synthetic desk montage is the SEED 2x set; its 2x preset keeps 16.
const std::map<std::string, Montage>& montages() {
  static const std::map<std::string, Montage> m = {
      {"seed62", {&kSeedAll, {{2, &kSeed2x}, {4, &k4x}, {8, &k8x}}}},
      {"physionet64", {&kPhysionetAll, {{2, &kPhysionet2x}, {4, &k4x}, {8, &k8x}}}},
      {"tusz19", {&kTuszAll, {{2, &kTusz2x}}}},
      {"synth32", {&kSeed2x, {{2, &k4x}, {4, &k8x}}}},
  };
  return m;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

}  // namespace

std::string normalize_label(const std::string& label) {
  std::size_t b = 0, e = label.size();
  while (b < e && std::isspace(static_cast<unsigned char>(label[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(label[e - 1]))) --e;
  return lower(label.substr(b, e - b));
}

std::size_t ElectrodeLayout::find(const std::string& label) const {
  const std::string key = normalize_label(label);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (normalize_label(labels[i]) == key) return i;
  return npos;
}

std::size_t ElectrodeLayout::index_of(const std::string& label) const {
  const std::size_t i = find(label);
  if (i == npos) throw DataError("electrode '" + label + "' not in layout '" + name + "'");
  return i;
}

std::string asset_dir() {
  if (const char* env = std::getenv("TOPODIFF_ASSET_DIR"); env && *env) return env;
  return TOPODIFF_ASSET_DIR;
}

ElectrodeLayout make_layout(std::string name, std::vector<std::string> labels,
                            std::vector<Vec3> pos3d) {
  if (labels.size() != pos3d.size()) throw DataError("label/position count mismatch");
  std::unordered_set<std::string> seen;
  for (const auto& l : labels) {
    if (l.empty()) throw DataError("empty electrode label");
    if (!seen.insert(normalize_label(l)).second) throw DataError("duplicate electrode label '" + l + "'");
  }
  for (std::size_t i = 0; i < pos3d.size(); ++i) {
    const auto& p = pos3d[i];
    const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    if (std::abs(n - 1.0) > 1e-6)
      throw DataError("electrode '" + labels[i] + "' is not on the unit sphere (norm " +
                      std::to_string(n) + ")");
  }
  ElectrodeLayout layout;
  layout.name = std::move(name);
  layout.labels = std::move(labels);
  layout.pos3d = std::move(pos3d);
  return project_2d(std::move(layout));
}

ElectrodeLayout load_coordinate_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open coordinate asset '" + path + "'");
  std::vector<std::string> labels;
  std::vector<Vec3> pos;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ss(line);
    std::string label;
    if (!(ss >> label)) continue;
    double theta = 0, phi = 0;
    if (!(ss >> theta >> phi))
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 'LABEL theta phi'");
    const double t = theta * kDegToRad, p = phi * kDegToRad;
    labels.push_back(label);
    pos.push_back({std::sin(t) * std::cos(p), std::sin(t) * std::sin(p), std::cos(t)});
  }
  return make_layout(path, std::move(labels), std::move(pos));
}

ElectrodeLayout load_layout(const std::string& asset_name) {
  const auto& ms = montages();
  const auto it = ms.find(lower(asset_name));
  if (it == ms.end()) {
    if (asset_name.find('/') != std::string::npos || asset_name.ends_with(".txt"))
      return load_coordinate_file(asset_name);
    throw DataError("unknown montage asset '" + asset_name + "'");
  }
  const ElectrodeLayout table = load_coordinate_file(asset_dir() + "/standard_1010.txt");
  std::vector<std::string> labels;
  std::vector<Vec3> pos;
  for (const auto& l : *it->second.all) {
    const std::size_t i = table.find(l);
    if (i == ElectrodeLayout::npos) throw DataError("coordinate asset lacks electrode '" + l + "'");
    labels.push_back(l);
    pos.push_back(table.pos3d[i]);
  }
  return make_layout(it->first, std::move(labels), std::move(pos));
}

ElectrodeLayout project_2d(ElectrodeLayout layout) {
  layout.pos2d.resize(layout.pos3d.size());
  for (std::size_t i = 0; i < layout.pos3d.size(); ++i) {
    const auto& p = layout.pos3d[i];
    const double rxy = std::hypot(p[0], p[1]);
    if (rxy == 0.0 && p[2] == 0.0)
      throw DataError("degenerate coordinate for electrode '" + layout.labels[i] + "'");
    const double polar = std::atan2(rxy, p[2]);
    const double r = polar / kRimPolarAngle;
    if (r > 1.0 + 1e-12)
      throw DataError("electrode '" + layout.labels[i] + "' lies below the projection rim");
    if (rxy == 0.0) {
      layout.pos2d[i] = {0.0, 0.0};
    } else {
      layout.pos2d[i] = {r * p[0] / rxy, r * p[1] / rxy};
    }
  }
  return layout;
}

std::string layout_for_dataset(const std::string& dataset) {
  const std::string d = lower(dataset);
  if (d == "seed" || d == "seediv" || d == "seed-iv") return "seed62";
  if (d == "physionet" || d == "mimm" || d == "mi/mm") return "physionet64";
  if (d == "tusz") return "tusz19";
  if (d == "synth") return "synth32";
  throw ConfigError("unknown dataset '" + dataset + "'");
}

const std::vector<std::string>& preset_visible(const std::string& dataset, int factor) {
  const auto& m = montages().at(layout_for_dataset(dataset));
  const auto it = m.presets.find(factor);
  if (it == m.presets.end())
    throw ConfigError("unsupported SR preset: " + dataset + " " + std::to_string(factor) + "x");
  return *it->second;
}

SrTask make_task(const ElectrodeLayout& layout, const std::vector<std::string>& visible_labels,
                 std::string dataset, int factor) {
  SrTask task;
  task.dataset = std::move(dataset);
  task.factor = factor;
  std::vector<bool> is_visible(layout.size(), false);
  for (const auto& l : visible_labels) {
    const std::size_t i = layout.index_of(l);
    if (is_visible[i]) throw DataError("duplicate visible channel '" + l + "'");
    is_visible[i] = true;
    task.visible.push_back(i);
  }
  for (std::size_t i = 0; i < layout.size(); ++i)
    if (!is_visible[i]) task.unseen.push_back(i);
  return task;
}

SrTask subsample(const ElectrodeLayout& layout, const std::string& dataset, int factor) {
  return make_task(layout, preset_visible(dataset, factor), lower(dataset), factor);
}

double chord_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

NeighborTable spatial_knn(const SrTask& task, const ElectrodeLayout& layout, std::size_t n_s) {
  const std::size_t c = task.c_lr();
  if (n_s >= c)
    throw ConfigError("n_s = " + std::to_string(n_s) + " must be below the visible count " +
                      std::to_string(c));
  std::vector<std::string> keys(c);
  for (std::size_t i = 0; i < c; ++i) keys[i] = normalize_label(layout.labels[task.visible[i]]);

  NeighborTable table(c);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < c; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < c; ++j) {
      if (j == i) continue;
      cand.emplace_back(chord_distance(layout.pos3d[task.visible[i]], layout.pos3d[task.visible[j]]),
                        j);
    }
    std::sort(cand.begin(), cand.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return keys[a.second] < keys[b.second];
    });
    for (std::size_t n = 0; n < n_s; ++n) table[i].push_back(cand[n].second);
  }
  return table;
}

}  // namespace topodiff::montage
