#pragma once

#include "topodiff/matrix.hpp"

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace topodiff::metrics {

/// SNR reported in JSON when the prediction is exact.
inline constexpr double kSnrCapDb = 120.0;

/// Pairwise (cascade) summation; fixed association order.
double pairwise_sum(std::span<const double> x);

struct ChannelScore {
  std::string label;
  double nmse = 0.0;
  double snr_db = 0.0;
  double pcc = 0.0;
  std::size_t pcc_count = 0;  // segments contributing to pcc
};

struct FidelityReport {
  std::string dataset;
  int factor = 0;
  double nmse = 0.0;
  double snr_db = 0.0;
  double pcc = 0.0;
  std::size_t n_segments = 0;
  std::size_t pcc_excluded = 0;  // (segment, channel) pairs with zero variance
  std::vector<ChannelScore> per_channel;
};

/// Pooled error and energy sums over masked rows of many segments.
class FidelityAccumulator {
 public:
  explicit FidelityAccumulator(std::vector<std::string> unseen_labels);

  /// pred and truth are C_HR x T; `mask` lists the rows to score, in the
  /// same order as the labels given at construction.
  void add(const MatrixF& pred, const MatrixF& truth, const std::vector<std::size_t>& mask);

  FidelityReport report(const std::string& dataset, int factor) const;

 private:
  std::vector<std::string> labels_;
  std::vector<std::vector<double>> err_, energy_;   // per channel, per segment
  std::vector<std::vector<double>> pcc_;            // per channel, valid segments
  std::size_t segments_ = 0;
  std::size_t excluded_ = 0;
};

double nmse(const MatrixF& pred, const MatrixF& truth, const std::vector<std::size_t>& mask);
double snr_db(const MatrixF& pred, const MatrixF& truth, const std::vector<std::size_t>& mask);
/// Mean Pearson correlation over masked rows; zero-variance rows are skipped
/// and counted in `excluded`.
double pcc(const MatrixF& pred, const MatrixF& truth, const std::vector<std::size_t>& mask,
           std::size_t* excluded = nullptr);

double nmse_to_snr_db(double nmse);
/// Pearson correlation of two equal-length series; NaN if either is constant.
double pearson(std::span<const float> a, std::span<const float> b);

/// JSON text of a report (SNR capped at kSnrCapDb).
std::string to_json(const FidelityReport& r);

}  // namespace topodiff::metrics
