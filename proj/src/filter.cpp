#include "topodiff/errors.hpp"
#include "topodiff/signalio.hpp"

#include <cmath>
#include <complex>
#include <numeric>

namespace topodiff::signalio {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Analog Butterworth prototype poles in the left half plane, one per
// conjugate pair.
std::vector<std::complex<double>> prototype_pole_pairs(int order) {
  if (order <= 0 || order % 2 != 0) throw ConfigError("Butterworth order must be positive and even");
  std::vector<std::complex<double>> poles;
  for (int k = 0; k < order / 2; ++k) {
    const double theta = kPi * (2.0 * k + order + 1) / (2.0 * order);
    poles.emplace_back(std::cos(theta), std::sin(theta));
  }
  return poles;
}

double warp(double cutoff_hz, double rate) {
  if (cutoff_hz <= 0.0 || cutoff_hz >= rate / 2.0)
    throw ConfigError("filter cutoff must lie strictly inside (0, Nyquist)");
  return std::tan(kPi * cutoff_hz / rate);
}

long integral_rate(double rate) {
  const long r = std::lround(rate);
  if (r <= 0 || std::abs(rate - static_cast<double>(r)) > 1e-6)
    throw DataError("sample rate must be a positive integer, got " + std::to_string(rate));
  return r;
}

std::vector<double> odd_extend(const std::vector<double>& x, std::size_t pad) {
  const std::size_t n = x.size();
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) {
    const std::size_t src = std::min(pad - i, n - 1);
    ext[i] = 2.0 * x[0] - x[src];
  }
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<long>(pad));
  for (std::size_t i = 0; i < pad; ++i) {
    const std::size_t src = (i + 2 <= n) ? n - 2 - i : 0;
    ext[pad + n + i] = 2.0 * x[n - 1] - x[src];
  }
  return ext;
}

void sos_filter(const std::vector<Biquad>& sos, std::vector<double>& x) {
  // Steady-state initial conditions for a step of height x[0].
  double gain = 1.0;
  const double x0 = x.empty() ? 0.0 : x[0];
  for (const auto& s : sos) {
    const double g = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double in = gain * x0;
    double z1 = (g - s.b0) * in;
    double z2 = (s.b2 - s.a2 * g) * in;
    for (double& v : x) {
      const double y = s.b0 * v + z1;
      z1 = s.b1 * v - s.a1 * y + z2;
      z2 = s.b2 * v - s.a2 * y;
      v = y;
    }
    gain *= g;
  }
}

}  // namespace

std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double rate) {
  const double w = warp(cutoff_hz, rate);
  std::vector<Biquad> sos;
  for (const auto& p : prototype_pole_pairs(order)) {
    const std::complex<double> s = w * p;
    const std::complex<double> z = (1.0 + s) / (1.0 - s);
    const double a1 = -2.0 * z.real(), a2 = std::norm(z);
    const double g = (1.0 + a1 + a2) / 4.0;  // unit gain at DC
    sos.push_back({g, 2.0 * g, g, a1, a2});
  }
  return sos;
}

std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double rate) {
  const double w = warp(cutoff_hz, rate);
  std::vector<Biquad> sos;
  for (const auto& p : prototype_pole_pairs(order)) {
    const std::complex<double> s = w / p;
    const std::complex<double> z = (1.0 + s) / (1.0 - s);
    const double a1 = -2.0 * z.real(), a2 = std::norm(z);
    const double g = (1.0 - a1 + a2) / 4.0;  // unit gain at Nyquist
    sos.push_back({g, -2.0 * g, g, a1, a2});
  }
  return sos;
}

std::vector<double> filtfilt(const std::vector<Biquad>& sos, const std::vector<double>& x) {
  if (x.size() < 2) return x;
  const std::size_t pad = std::min<std::size_t>(3 * (2 * sos.size() + 1), x.size() - 1);
  std::vector<double> y = odd_extend(x, pad);
  sos_filter(sos, y);
  std::reverse(y.begin(), y.end());
  sos_filter(sos, y);
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<long>(pad), y.begin() + static_cast<long>(pad + x.size())};
}

// Kaiser-windowed sinc anti-alias filter (60 dB stopband) whose polyphase
// branches are each normalized to unit DC gain.
std::vector<double> resample(const std::vector<double>& x, long from_rate, long to_rate,
                             double passband_hz) {
  if (from_rate == to_rate) return x;
  const long g = std::gcd(from_rate, to_rate);
  const long up = to_rate / g, down = from_rate / g;
  const double nyq = 0.5 * static_cast<double>(std::min(from_rate, to_rate));
  const double fstop = 0.9 * nyq;
  const double fpass = std::min(passband_hz, 0.75 * nyq);
  const double fs_up = static_cast<double>(from_rate * up);

  constexpr double kAtten = 60.0;
  const double beta = 0.1102 * (kAtten - 8.7);
  const double dw = 2.0 * kPi * (fstop - fpass) / fs_up;
  long ntaps = static_cast<long>(std::ceil((kAtten - 8.0) / (2.285 * dw))) + 1;
  if (ntaps % 2 == 0) ++ntaps;
  const long half = ntaps / 2;
  const double fc = 0.5 * (fpass + fstop) / fs_up;  // cycles per upsampled sample

  std::vector<double> h(static_cast<std::size_t>(ntaps));
  const double i0b = std::cyl_bessel_i(0.0, beta);
  for (long n = 0; n < ntaps; ++n) {
    const double m = static_cast<double>(n - half);
    const double sinc = m == 0.0 ? 2.0 * fc : std::sin(2.0 * kPi * fc * m) / (kPi * m);
    const double r = m / static_cast<double>(half);
    const double win = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
    h[static_cast<std::size_t>(n)] = sinc * win;
  }
  for (long phase = 0; phase < up; ++phase) {
    double s = 0.0;
    for (long k = phase; k < ntaps; k += up) s += h[static_cast<std::size_t>(k)];
    for (long k = phase; k < ntaps; k += up) h[static_cast<std::size_t>(k)] /= s;
  }

  const std::size_t pad = static_cast<std::size_t>(half / up + 2);
  const std::vector<double> ext = odd_extend(x, std::min(pad, x.size() - 1));
  const long ext_pad = static_cast<long>(std::min(pad, x.size() - 1));
  const long n_ext = static_cast<long>(ext.size());
  const std::size_t n_out = static_cast<std::size_t>(static_cast<long>(x.size()) * up / down);

  std::vector<double> y(n_out);
  for (std::size_t n = 0; n < n_out; ++n) {
    const long m = static_cast<long>(n) * down + ext_pad * up;  // upsampled index of output n
    double acc = 0.0;
    // taps k with (m + half - k) divisible by up
    long k = (m + half) % up;
    for (; k < ntaps; k += up) {
      const long j = (m + half - k) / up;
      if (j < 0 || j >= n_ext) continue;
      acc += h[static_cast<std::size_t>(k)] * ext[static_cast<std::size_t>(j)];
    }
    y[n] = acc;
  }
  return y;
}

EegSegment preprocess(const EegSegment& raw, const PreprocessConfig& cfg) {
  const long from = integral_rate(raw.rate);
  const long to = integral_rate(cfg.target_rate);
  if (from < to)
    throw DataError("raw rate " + std::to_string(from) + " Hz is below the target rate " +
                    std::to_string(to) + " Hz");
  const auto win_in = static_cast<std::size_t>(std::llround(cfg.window_s * static_cast<double>(from)));
  const auto win_out = static_cast<std::size_t>(std::llround(cfg.window_s * static_cast<double>(to)));
  if (raw.samples() < win_in)
    throw DataError("segment is shorter than " + std::to_string(cfg.window_s) + " s");

  std::vector<Biquad> sos;
  if (cfg.lowpass_hz < 0.98 * 0.5 * static_cast<double>(to)) {
    const auto lp = butterworth_lowpass(cfg.filter_order, cfg.lowpass_hz, static_cast<double>(to));
    sos.insert(sos.end(), lp.begin(), lp.end());
  }
  if (cfg.highpass) {
    const auto hp = butterworth_highpass(cfg.filter_order, cfg.highpass_hz, static_cast<double>(to));
    sos.insert(sos.end(), hp.begin(), hp.end());
  }

  EegSegment out;
  out.rate = static_cast<float>(to);
  out.labels = raw.labels;
  out.task = raw.task;
  out.data.resize(raw.channels(), win_out);
  std::vector<double> x(win_in);
  for (std::size_t c = 0; c < raw.channels(); ++c) {
    for (std::size_t i = 0; i < win_in; ++i) x[i] = raw.data(c, i);
    std::vector<double> y = resample(x, from, to, cfg.lowpass_hz);
    if (!sos.empty()) y = filtfilt(sos, y);
    for (std::size_t i = 0; i < win_out; ++i) {
      const double v = std::clamp(y[i], -static_cast<double>(cfg.clamp_uv),
                                  static_cast<double>(cfg.clamp_uv));
      out.data(c, i) = static_cast<float>(v);
    }
  }
  return out;
}

std::vector<EegSegment> split_windows(const EegSegment& raw, double window_s) {
  const auto win = static_cast<std::size_t>(std::llround(window_s * static_cast<double>(raw.rate)));
  if (win == 0) throw ConfigError("window length must be positive");
  std::vector<EegSegment> out;
  for (std::size_t start = 0; start + win <= raw.samples(); start += win) {
    EegSegment seg;
    seg.rate = raw.rate;
    seg.labels = raw.labels;
    seg.task = raw.task;
    seg.data.resize(raw.channels(), win);
    for (std::size_t c = 0; c < raw.channels(); ++c)
      for (std::size_t i = 0; i < win; ++i) seg.data(c, i) = raw.data(c, start + i);
    out.push_back(std::move(seg));
  }
  if (out.empty()) throw DataError("recording is shorter than one window");
  return out;
}

}  // namespace topodiff::signalio
