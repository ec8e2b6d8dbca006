#pragma once

#include "topodiff/matrix.hpp"
#include "topodiff/montage.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace topodiff::signalio {

/// Channels x time block of EEG in microvolts.
struct EegSegment {
  MatrixF data;
  float rate = 0.0f;
  std::vector<std::string> labels;
  std::optional<montage::SrTask> task;

  std::size_t channels() const { return data.rows(); }
  std::size_t samples() const { return data.cols(); }
};

/// C x T_p x P view of a signal; element (c, g, i) is sample g*P + i of row c.
template <typename T>
struct PatchTensor {
  std::size_t channels = 0;
  std::size_t groups = 0;
  std::size_t patch = 0;
  std::vector<T> data;

  T& at(std::size_t c, std::size_t g, std::size_t i) { return data[(c * groups + g) * patch + i]; }
  const T& at(std::size_t c, std::size_t g, std::size_t i) const {
    return data[(c * groups + g) * patch + i];
  }
  const T* patch_ptr(std::size_t c, std::size_t g) const { return data.data() + (c * groups + g) * patch; }
};

// --- container I/O --------------------------------------------------------

void write_segment(const std::string& path, const EegSegment& seg);
EegSegment read_segment(const std::string& path);

/// Rows of `label,v0,v1,...`; one row per channel.
EegSegment read_csv(const std::string& path, float rate);

// --- preprocessing --------------------------------------------------------

struct PreprocessConfig {
  float target_rate = 200.0f;
  double window_s = 4.0;
  double lowpass_hz = 75.0;
  bool highpass = false;
  double highpass_hz = 0.5;
  int filter_order = 4;
  float clamp_uv = 200.0f;
};

/// Second-order section: b0 b1 b2 / 1 a1 a2.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

std::vector<Biquad> butterworth_lowpass(int order, double cutoff_hz, double rate);
std::vector<Biquad> butterworth_highpass(int order, double cutoff_hz, double rate);

/// Zero-phase forward-backward filtering with odd-extension padding.
std::vector<double> filtfilt(const std::vector<Biquad>& sos, const std::vector<double>& x);

/// Polyphase rational resampling between integral rates.
std::vector<double> resample(const std::vector<double>& x, long from_rate, long to_rate,
                             double passband_hz);

/// First `window_s` seconds, resampled, low-passed and clamped.
EegSegment preprocess(const EegSegment& raw, const PreprocessConfig& cfg = {});

/// Splits into consecutive non-overlapping windows of window_s seconds.
std::vector<EegSegment> split_windows(const EegSegment& raw, double window_s);

// --- patches and tokens -----------------------------------------------------

template <typename T>
PatchTensor<T> patchify(const Matrix<T>& signal, std::size_t patch);

template <typename T>
Matrix<T> unpatchify(const PatchTensor<T>& p);

/// N x P token matrix, row c*T_p + g.
template <typename T>
Matrix<T> flatten_tokens(const PatchTensor<T>& p);

template <typename T>
PatchTensor<T> unflatten_tokens(const Matrix<T>& tokens, std::size_t channels);

/// Rows of `m` picked by `index`, in order.
template <typename T>
Matrix<T> select_rows(const Matrix<T>& m, const std::vector<std::size_t>& index) {
  Matrix<T> out(index.size(), m.cols());
  for (std::size_t r = 0; r < index.size(); ++r)
    std::copy(m.row(index[r]).begin(), m.row(index[r]).end(), out.row(r).begin());
  return out;
}

}  // namespace topodiff::signalio
