#pragma once

#include "topodiff/errors.hpp"
#include "topodiff/matrix.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace topodiff::diffusion {

/// Margin keeping training times away from the schedule endpoints.
inline constexpr double kTimeMargin = 1e-4;
/// Below this distance to t = 1 the sampler jumps straight to x_pred.
inline constexpr double kTerminalDelta = 1e-9;

enum class VelocityForm {
  kPathTangent,  // (x_pred - z) / (1 - t)
  kLiteral,      // (x_pred - z) / t, as printed; t floored at kTimeMargin
};

VelocityForm parse_velocity_form(const std::string& s);

/// z = t x + (1 - t) eps.
template <typename T>
Matrix<T> noise_interpolate(const Matrix<T>& x, const Matrix<T>& eps, double t);

template <typename T>
Matrix<T> velocity(const Matrix<T>& x_pred, const Matrix<T>& z, double t,
                   VelocityForm form = VelocityForm::kPathTangent);

/// {i / steps : i = 0..steps}.
std::vector<double> time_grid(std::size_t steps);

/// Deterministic per-trajectory stream seeded from (seed, stream id).
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

template <typename T>
Matrix<T> standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

/// Training time, uniform on (margin, 1 - margin).
double sample_time(std::mt19937_64& rng);

/// Mean squared error over the `unseen` rows of C_HR x T matrices. The
/// gradient w.r.t. pred (zero on observed rows) is written when requested.
template <typename T>
double masked_mse(const Matrix<T>& pred, const Matrix<T>& target,
                  const std::vector<std::size_t>& unseen, Matrix<T>* grad = nullptr);

template <typename T>
using DenoiseFn = std::function<Matrix<T>(const Matrix<T>& z, double t)>;

struct SamplerConfig {
  std::size_t steps = 50;
  VelocityForm form = VelocityForm::kPathTangent;
};

/// Uniform Euler integration from z0 ~ N(0, I) at t = 0 to t = 1. With the
/// path-tangent velocity the last step lands on x_pred exactly.
template <typename T>
Matrix<T> sample(const DenoiseFn<T>& denoise, std::size_t rows, std::size_t cols,
                 const SamplerConfig& cfg, std::mt19937_64& rng,
                 std::vector<double>* visited_times = nullptr);

}  // namespace topodiff::diffusion
