#include "doctest.h"

#include "topodiff/errors.hpp"
#include "topodiff/signalio.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace topodiff;
using namespace topodiff::signalio;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "topodiff_tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

MatrixF random_matrix(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> d(0.0f, 30.0f);
  MatrixF m(r, c);
  for (auto& v : m.storage()) v = d(rng);
  return m;
}

EegSegment tone(double freq, double rate, double seconds, double amp, std::size_t channels = 1) {
  EegSegment s;
  s.rate = static_cast<float>(rate);
  const auto n = static_cast<std::size_t>(std::llround(rate * seconds));
  s.data.resize(channels, n);
  for (std::size_t c = 0; c < channels; ++c) {
    s.labels.push_back("E" + std::to_string(c));
    for (std::size_t i = 0; i < n; ++i)
      s.data(c, i) = static_cast<float>(amp * std::sin(2 * M_PI * freq * static_cast<double>(i) / rate));
  }
  return s;
}

double rms(const MatrixF& m, std::size_t row, std::size_t lo, std::size_t hi) {
  double s = 0.0;
  for (std::size_t i = lo; i < hi; ++i) s += static_cast<double>(m(row, i)) * m(row, i);
  return std::sqrt(s / static_cast<double>(hi - lo));
}

}  // namespace

TEST_CASE("segment files round-trip bit-exactly") {
  EegSegment s;
  s.data = random_matrix(62, 800, 1);
  s.rate = 200.0f;
  for (int i = 0; i < 62; ++i) s.labels.push_back("Ch" + std::to_string(i));
  const std::string path = tmp_path("roundtrip.eegs");
  write_segment(path, s);
  const EegSegment r = read_segment(path);
  CHECK(r.channels() == 62);
  CHECK(r.samples() == 800);
  CHECK(r.rate == 200.0f);
  CHECK(r.labels == s.labels);
  CHECK(r.data == s.data);
}

TEST_CASE("damaged segment files are rejected") {
  EegSegment s;
  s.data = random_matrix(4, 100, 2);
  s.rate = 100.0f;
  s.labels = {"a", "b", "c", "d"};
  const std::string path = tmp_path("damaged.eegs");
  write_segment(path, s);
  const auto size = fs::file_size(path);

  fs::resize_file(path, size - 4);
  CHECK_THROWS_AS(read_segment(path), DataError);

  write_segment(path, s);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(read_segment(path), DataError);
  CHECK_THROWS_AS(read_segment(tmp_path("missing.eegs")), DataError);
}

TEST_CASE("preprocess passes DC and clamps") {
  EegSegment dc;
  dc.rate = 250.0f;
  dc.labels = {"A", "B"};
  dc.data.resize(2, 1250);
  for (std::size_t i = 0; i < 1250; ++i) {
    dc.data(0, i) = 50.0f;
    dc.data(1, i) = 512.0f;
  }
  const EegSegment out = preprocess(dc);
  CHECK(out.rate == 200.0f);
  CHECK(out.samples() == 800);
  for (std::size_t i = 0; i < out.samples(); ++i) {
    CHECK(out.data(0, i) == doctest::Approx(50.0).epsilon(1e-5));
    CHECK(out.data(1, i) == 200.0f);
  }
}

TEST_CASE("preprocess attenuates a 90 Hz tone by at least 20 dB") {
  const EegSegment in = tone(90.0, 250.0, 5.0, 100.0);
  const EegSegment out = preprocess(in);
  const double gain = rms(out.data, 0, 100, 700) / (100.0 / std::sqrt(2.0));
  MESSAGE("90 Hz gain " << 20 * std::log10(gain) << " dB");
  CHECK(20 * std::log10(gain) <= -20.0);
}

TEST_CASE("preprocess keeps in-band tones and is idempotent") {
  const EegSegment in = tone(10.0, 250.0, 4.0, 40.0);
  const EegSegment once = preprocess(in);
  CHECK(rms(once.data, 0, 100, 700) == doctest::Approx(40.0 / std::sqrt(2.0)).epsilon(0.01));
  const EegSegment twice = preprocess(once);
  double worst = 0.0;
  for (std::size_t i = 100; i < 700; ++i)
    worst = std::max(worst, std::fabs(static_cast<double>(twice.data(0, i)) - once.data(0, i)));
  CHECK(worst / 40.0 < 1e-6);

  EegSegment dc = tone(0.0, 200.0, 4.0, 0.0);
  for (auto& v : dc.data.storage()) v = 37.5f;
  const EegSegment dc2 = preprocess(preprocess(dc));
  for (std::size_t i = 0; i < dc2.samples(); ++i) CHECK(std::fabs(dc2.data(0, i) - 37.5f) / 37.5 < 1e-6);
}

TEST_CASE("preprocess rejects short or low-rate input") {
  CHECK_THROWS_AS(preprocess(tone(5.0, 250.0, 3.0, 1.0)), DataError);
  CHECK_THROWS_AS(preprocess(tone(5.0, 100.0, 5.0, 1.0)), DataError);
}

TEST_CASE("MI/MM rate is kept at 160 Hz") {
  PreprocessConfig cfg;
  cfg.target_rate = 160.0f;
  const EegSegment out = preprocess(tone(7.0, 160.0, 4.0, 20.0), cfg);
  CHECK(out.samples() == 640);
}

TEST_CASE("butterworth sections have unit DC gain and cutoff at -3 dB") {
  const auto sos = butterworth_lowpass(4, 75.0, 200.0);
  CHECK(sos.size() == 2);
  auto mag = [&](double f) {
    std::complex<double> h(1.0, 0.0);
    const std::complex<double> z1 = std::polar(1.0, -2 * M_PI * f / 200.0);
    for (const auto& s : sos)
      h *= (s.b0 + s.b1 * z1 + s.b2 * z1 * z1) / (1.0 + s.a1 * z1 + s.a2 * z1 * z1);
    return std::abs(h);
  };
  CHECK(mag(0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(20 * std::log10(mag(75.0)) == doctest::Approx(-3.0103).epsilon(1e-3));
}

TEST_CASE("patch shapes") {
  const auto p = patchify(random_matrix(32, 800, 3), 50);
  CHECK(p.channels == 32);
  CHECK(p.groups == 16);
  CHECK(p.patch == 50);
  const auto q = patchify(random_matrix(64, 640, 4), 40);
  CHECK(q.groups == 16);
  CHECK(q.patch == 40);
  const auto one = patchify(random_matrix(3, 90, 5), 90);
  CHECK(one.groups == 1);
  CHECK_THROWS_AS(patchify(random_matrix(3, 90, 5), 40), ConfigError);
}

TEST_CASE("patch layout and token order") {
  const MatrixF x = random_matrix(32, 800, 6);
  const auto p = patchify(x, 50);
  CHECK(p.at(3, 7, 11) == x(3, 7 * 50 + 11));
  const MatrixF tok = flatten_tokens(p);
  CHECK(tok.rows() == 512);
  CHECK(tok.cols() == 50);
  for (std::size_t i = 0; i < 50; ++i) CHECK(tok(1 * 16 + 0, i) == p.at(1, 0, i));
}

TEST_CASE("reshapes are exact inverses") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    const MatrixF x = random_matrix(7, 120, 10 + seed);
    const auto p = patchify(x, 24);
    CHECK(unpatchify(p) == x);
    const auto back = unflatten_tokens(flatten_tokens(p), p.channels);
    CHECK(back.data == p.data);
    CHECK(back.groups == p.groups);
  }
  const MatrixF zero(5, 60);
  CHECK(unpatchify(patchify(zero, 20)) == zero);
}

TEST_CASE("csv import and windowing") {
  const std::string path = tmp_path("rec.csv");
  {
    std::ofstream out(path);
    out << "Fp1,1,2,3,4,5,6\nFp2,-1,-2,-3,-4,-5,-6\n";
  }
  const EegSegment s = read_csv(path, 2.0f);
  CHECK(s.labels == std::vector<std::string>{"Fp1", "Fp2"});
  CHECK(s.data(1, 5) == -6.0f);
  const auto w = split_windows(s, 1.0);
  CHECK(w.size() == 3);
  CHECK(w[2].data(0, 1) == 6.0f);
}
