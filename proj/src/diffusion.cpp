#include "topodiff/diffusion.hpp"

#include <cmath>

namespace topodiff::diffusion {

VelocityForm parse_velocity_form(const std::string& s) {
  if (s == "tangent" || s == "path") return VelocityForm::kPathTangent;
  if (s == "literal") return VelocityForm::kLiteral;
  throw ConfigError("unknown velocity form '" + s + "' (expected tangent|literal)");
}

template <typename T>
Matrix<T> noise_interpolate(const Matrix<T>& x, const Matrix<T>& eps, double t) {
  if (!x.same_shape(eps)) throw ConfigError("noise_interpolate: shape mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("noise_interpolate: t outside [0, 1]");
  Matrix<T> z(x.rows(), x.cols());
  const T a = static_cast<T>(t), b = static_cast<T>(1.0 - t);
  for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = a * x.data()[i] + b * eps.data()[i];
  return z;
}

template <typename T>
Matrix<T> velocity(const Matrix<T>& x_pred, const Matrix<T>& z, double t, VelocityForm form) {
  if (!x_pred.same_shape(z)) throw ConfigError("velocity: shape mismatch");
  double denom = 0.0;
  if (form == VelocityForm::kPathTangent) {
    if (t >= 1.0) throw ConfigError("velocity: path-tangent form is singular at t = 1");
    denom = 1.0 - t;
  } else {
    denom = std::max(t, kTimeMargin);
  }
  Matrix<T> v(z.rows(), z.cols());
  for (std::size_t i = 0; i < v.size(); ++i)
    v.data()[i] = static_cast<T>((static_cast<double>(x_pred.data()[i]) - z.data()[i]) / denom);
  return v;
}

std::vector<double> time_grid(std::size_t steps) {
  if (steps == 0) throw ConfigError("sampler needs at least one step");
  std::vector<double> g(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) g[i] = static_cast<double>(i) / static_cast<double>(steps);
  return g;
}

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

template <typename T>
Matrix<T> standard_normal(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix<T> m(rows, cols);
  for (auto& v : m.storage()) v = static_cast<T>(dist(rng));
  return m;
}

double sample_time(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(kTimeMargin, 1.0 - kTimeMargin);
  return dist(rng);
}

template <typename T>
double masked_mse(const Matrix<T>& pred, const Matrix<T>& target,
                  const std::vector<std::size_t>& unseen, Matrix<T>* grad) {
  if (!pred.same_shape(target)) throw ConfigError("masked_mse: shape mismatch");
  if (unseen.empty()) throw ConfigError("masked_mse: empty mask");
  const double n = static_cast<double>(unseen.size() * pred.cols());
  if (grad) grad->resize(pred.rows(), pred.cols());
  double sum = 0.0;
  for (std::size_t r : unseen)
    for (std::size_t c = 0; c < pred.cols(); ++c) {
      const double e = static_cast<double>(pred(r, c)) - static_cast<double>(target(r, c));
      sum += e * e;
      if (grad) (*grad)(r, c) = static_cast<T>(2.0 * e / n);
    }
  return sum / n;
}

template <typename T>
Matrix<T> sample(const DenoiseFn<T>& denoise, std::size_t rows, std::size_t cols,
                 const SamplerConfig& cfg, std::mt19937_64& rng, std::vector<double>* visited_times) {
  const std::vector<double> grid = time_grid(cfg.steps);
  Matrix<T> z = standard_normal<T>(rows, cols, rng);
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    const double t = grid[i];
    const double dt = grid[i + 1] - t;
    if (visited_times) visited_times->push_back(t);
    Matrix<T> x_pred = denoise(z, t);
    if (!x_pred.same_shape(z)) throw ConfigError("denoiser returned the wrong shape");
    if (cfg.form == VelocityForm::kPathTangent && (i + 1 == cfg.steps || 1.0 - t <= kTerminalDelta)) {
      // z + (1 - t) (x_pred - z) / (1 - t) == x_pred
      z = std::move(x_pred);
    } else {
      const Matrix<T> v = velocity(x_pred, z, t, cfg.form);
      for (std::size_t k = 0; k < z.size(); ++k) z.data()[k] += static_cast<T>(dt) * v.data()[k];
    }
    if (!all_finite(z))
      throw NumericalError("non-finite sampler iterate at step " + std::to_string(i));
  }
  if (visited_times) visited_times->push_back(1.0);
  return z;
}

template Matrix<float> noise_interpolate(const Matrix<float>&, const Matrix<float>&, double);
template Matrix<double> noise_interpolate(const Matrix<double>&, const Matrix<double>&, double);
template Matrix<float> velocity(const Matrix<float>&, const Matrix<float>&, double, VelocityForm);
template Matrix<double> velocity(const Matrix<double>&, const Matrix<double>&, double, VelocityForm);
template Matrix<float> standard_normal(std::size_t, std::size_t, std::mt19937_64&);
template Matrix<double> standard_normal(std::size_t, std::size_t, std::mt19937_64&);
template double masked_mse(const Matrix<float>&, const Matrix<float>&, const std::vector<std::size_t>&,
                           Matrix<float>*);
template double masked_mse(const Matrix<double>&, const Matrix<double>&,
                           const std::vector<std::size_t>&, Matrix<double>*);
template Matrix<float> sample(const DenoiseFn<float>&, std::size_t, std::size_t, const SamplerConfig&,
                              std::mt19937_64&, std::vector<double>*);
template Matrix<double> sample(const DenoiseFn<double>&, std::size_t, std::size_t,
                               const SamplerConfig&, std::mt19937_64&, std::vector<double>*);

}  // namespace topodiff::diffusion
