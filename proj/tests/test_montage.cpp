#include "doctest.h"

#include "topodiff/errors.hpp"
#include "topodiff/montage.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace topodiff;
using montage::Vec3;

namespace {

bool has(const montage::ElectrodeLayout& l, const char* label) {
  return l.find(label) != montage::ElectrodeLayout::npos;
}

Vec3 from_angles(double theta, double phi) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

// Independent neighbour oracle: sort every other visible channel by
// (distance, lowercase label).
montage::NeighborTable brute_knn(const montage::SrTask& task, const montage::ElectrodeLayout& layout,
                                 std::size_t n_s) {
  montage::NeighborTable out(task.c_lr());
  for (std::size_t i = 0; i < task.c_lr(); ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < task.c_lr(); ++j)
      if (j != i) others.push_back(j);
    auto key = [&](std::size_t j) {
      const auto& a = layout.pos3d[task.visible[i]];
      const auto& b = layout.pos3d[task.visible[j]];
      const double d = std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                                 (a[2] - b[2]) * (a[2] - b[2]));
      return std::make_pair(d, montage::normalize_label(layout.labels[task.visible[j]]));
    };
    std::sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
    others.resize(n_s);
    out[i] = others;
  }
  return out;
}

}  // namespace

TEST_CASE("named montages carry the expected electrodes") {
  const auto seed = montage::load_layout("seed62");
  CHECK(seed.size() == 62);
  CHECK(has(seed, "CB1"));
  CHECK(has(seed, "CB2"));

  const auto tusz = montage::load_layout("tusz19");
  CHECK(tusz.size() == 19);
  CHECK(tusz.labels.front() == "Fp1");
  CHECK(has(tusz, "T6"));

  const auto mi = montage::load_layout("physionet64");
  CHECK(mi.size() == 64);
  CHECK(has(mi, "Iz"));

  CHECK(montage::load_layout("synth32").size() == 32);
}

TEST_CASE("layout invariants hold for every montage") {
  for (const char* name : {"seed62", "tusz19", "physionet64", "synth32"}) {
    const auto l = montage::load_layout(name);
    std::set<std::string> seen;
    for (std::size_t i = 0; i < l.size(); ++i) {
      CHECK(seen.insert(montage::normalize_label(l.labels[i])).second);
      const auto& p = l.pos3d[i];
      CHECK(std::fabs(std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) - 1.0) < 1e-6);
      CHECK(std::hypot(l.pos2d[i][0], l.pos2d[i][1]) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("projection fixes the vertex and keeps mirror symmetry") {
  const auto l = montage::load_layout("seed62");
  const auto cz = l.pos2d[l.index_of("Cz")];
  CHECK(std::fabs(cz[0]) < 1e-9);
  CHECK(std::fabs(cz[1]) < 1e-9);

  // Odd-numbered electrodes sit on the left, n+1 is the right-hand partner.
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    const std::string& lab = l.labels[i];
    const auto digit = lab.find_first_of("0123456789");
    if (digit == std::string::npos) continue;
    const int n = std::stoi(lab.substr(digit));
    if (n % 2 == 0) continue;
    const std::size_t j = l.find(lab.substr(0, digit) + std::to_string(n + 1));
    if (j == montage::ElectrodeLayout::npos) continue;
    ++pairs;
    CHECK(std::fabs(l.pos2d[i][0] + l.pos2d[j][0]) < 1e-9);
    CHECK(std::fabs(l.pos2d[i][1] - l.pos2d[j][1]) < 1e-9);
  }
  CHECK(pairs >= 20);
}

TEST_CASE("equatorial electrode projects to radius pi/2 over the rim angle") {
  const auto l = montage::make_layout("t", {"Top", "Eq"}, {from_angles(0.0, 0.0), from_angles(M_PI / 2, 0.3)});
  const double r = std::hypot(l.pos2d[1][0], l.pos2d[1][1]);
  CHECK(r == doctest::Approx((M_PI / 2) / (2 * M_PI / 3)).epsilon(1e-12));
  CHECK(r <= 1.0);
  CHECK(std::atan2(l.pos2d[1][1], l.pos2d[1][0]) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("layout construction rejects bad input") {
  CHECK_THROWS_AS(montage::make_layout("t", {"A", "a"}, {from_angles(0.1, 0), from_angles(0.2, 0)}), DataError);
  CHECK_THROWS_AS(montage::make_layout("t", {"A"}, {Vec3{0.5, 0, 0}}), DataError);
  CHECK_THROWS_AS(montage::make_layout("t", {"A"}, {Vec3{0, 0, 0}}), DataError);
  CHECK_THROWS_AS(montage::load_layout("no_such_montage"), DataError);
}

TEST_CASE("presets reproduce the channel tables") {
  const auto seed = montage::load_layout("seed62");
  const auto t8 = montage::subsample(seed, "seed", 8);
  std::vector<std::string> got;
  for (auto i : t8.visible) got.push_back(seed.labels[i]);
  CHECK(got == std::vector<std::string>{"F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2"});

  const auto mi = montage::load_layout("physionet64");
  const auto t4 = montage::subsample(mi, "physionet", 4);
  CHECK(t4.c_lr() == 16);
  CHECK(t4.c_unseen() == 48);

  const auto tusz = montage::load_layout("tusz19");
  const auto tz = montage::subsample(tusz, "tusz", 2);
  got.clear();
  for (auto i : tz.visible) got.push_back(tusz.labels[i]);
  CHECK(got == std::vector<std::string>{"Fp1", "Fp2", "F3", "F4", "C3", "C4", "O1", "O2", "Cz"});
  CHECK_THROWS_AS(montage::subsample(tusz, "tusz", 4), ConfigError);
  CHECK_THROWS_AS(montage::subsample(seed, "seed", 3), ConfigError);
}

TEST_CASE("visible and unseen partition the montage") {
  for (auto [ds, name] : {std::pair{"seed", "seed62"}, {"physionet", "physionet64"}, {"synth", "synth32"}}) {
    const auto l = montage::load_layout(name);
    for (int f : {2, 4, 8}) {
      if (std::string(ds) == "synth" && f == 8) {
        CHECK_THROWS_AS(montage::subsample(l, ds, f), ConfigError);
        continue;
      }
      const auto t = montage::subsample(l, ds, f);
      std::vector<std::size_t> all(t.visible);
      all.insert(all.end(), t.unseen.begin(), t.unseen.end());
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> want(l.size());
      std::iota(want.begin(), want.end(), 0);
      CHECK(all == want);
      CHECK(t.c_hr() == l.size());
    }
  }
}

TEST_CASE("spatial neighbours match an exhaustive search") {
  const auto seed = montage::load_layout("seed62");
  const auto task = montage::subsample(seed, "seed", 2);
  CHECK(task.c_lr() == 32);
  CHECK(montage::spatial_knn(task, seed, 12) == brute_knn(task, seed, 12));

  // Complete graph when n_s = C_LR - 1.
  const auto full = montage::spatial_knn(task, seed, task.c_lr() - 1);
  for (std::size_t i = 0; i < full.size(); ++i) {
    std::set<std::size_t> s(full[i].begin(), full[i].end());
    CHECK(s.size() == task.c_lr() - 1);
    CHECK(!s.count(i));
  }
  CHECK_THROWS_AS(montage::spatial_knn(task, seed, task.c_lr()), ConfigError);
}

TEST_CASE("single nearest neighbour on three nearly colinear electrodes") {
  const auto l = montage::make_layout("line", {"A", "B", "C"},
                                      {from_angles(0.1, 0.0), from_angles(0.3, 0.0), from_angles(0.8, 0.0)});
  const auto task = montage::make_task(l, {"A", "B", "C"});
  const auto nn = montage::spatial_knn(task, l, 1);
  CHECK(nn == montage::NeighborTable{{1}, {0}, {1}});
  CHECK(nn == brute_knn(task, l, 1));
}

TEST_CASE("distance ties break by label") {
  // B and C are equidistant from A; the lexicographically smaller wins.
  const auto l = montage::make_layout("tie", {"A", "C", "B"},
                                      {from_angles(0.0, 0.0), from_angles(0.4, 0.0), from_angles(0.4, M_PI / 2)});
  const auto task = montage::make_task(l, {"A", "C", "B"});
  const auto nn = montage::spatial_knn(task, l, 1);
  CHECK(nn[0] == std::vector<std::size_t>{2});
}
