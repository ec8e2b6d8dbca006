#include "doctest.h"

#include "topodiff/diffusion.hpp"
#include "topodiff/errors.hpp"

#include <cmath>
#include <limits>

using namespace topodiff;
using namespace topodiff::diffusion;

namespace {

MatrixD filled(std::size_t r, std::size_t c, double v) {
  MatrixD m(r, c);
  m.fill(v);
  return m;
}

}  // namespace

TEST_CASE("schedule endpoints are exact") {
  auto rng = make_stream(1, 0);
  const auto x = standard_normal<double>(4, 9, rng), eps = standard_normal<double>(4, 9, rng);
  CHECK(noise_interpolate(x, eps, 1.0) == x);
  CHECK(noise_interpolate(x, eps, 0.0) == eps);
  const auto xf = x.cast<float>(), ef = eps.cast<float>();
  CHECK(noise_interpolate(xf, ef, 1.0) == xf);
  CHECK(noise_interpolate(xf, ef, 0.0) == ef);
  CHECK(noise_interpolate(filled(1, 1, 2.0), filled(1, 1, -1.0), 0.25)(0, 0) == -0.25);
  CHECK_THROWS_AS(noise_interpolate(x, eps, 1.5), ConfigError);
}

TEST_CASE("velocity") {
  CHECK(velocity(filled(1, 1, 1.0), filled(1, 1, 0.2), 0.5)(0, 0) == doctest::Approx(1.6));
  const auto z = filled(2, 3, 0.7);
  const auto still = velocity(z, z, 0.3);
  for (double v : still.storage()) CHECK(v == 0.0);
  CHECK_THROWS_AS(velocity(z, z, 1.0), ConfigError);

  auto rng = make_stream(2, 0);
  const auto x = standard_normal<double>(3, 5, rng), eps = standard_normal<double>(3, 5, rng);
  for (double t : {0.0, 0.2, 0.77, 0.999}) {
    const auto v = velocity(x, noise_interpolate(x, eps, t), t);
    for (std::size_t i = 0; i < v.size(); ++i)
      CHECK(v.data()[i] == doctest::Approx(x.data()[i] - eps.data()[i]).epsilon(1e-9));
  }
  // printed form divides by t
  CHECK(velocity(filled(1, 1, 1.0), filled(1, 1, 0.2), 0.25, VelocityForm::kLiteral)(0, 0) ==
        doctest::Approx(3.2));
  CHECK(parse_velocity_form("literal") == VelocityForm::kLiteral);
  CHECK(parse_velocity_form("tangent") == VelocityForm::kPathTangent);
  CHECK_THROWS_AS(parse_velocity_form("x"), ConfigError);
}

TEST_CASE("time grid") {
  const auto g = time_grid(50);
  REQUIRE(g.size() == 51);
  for (std::size_t i = 0; i <= 50; ++i) CHECK(g[i] == static_cast<double>(i) / 50.0);
  CHECK(g.front() == 0.0);
  CHECK(g.back() == 1.0);
  CHECK_THROWS_AS(time_grid(0), ConfigError);
}

TEST_CASE("oracle denoiser is recovered for any step count") {
  auto data_rng = make_stream(3, 0);
  const auto x = standard_normal<double>(6, 40, data_rng);
  const auto xf = x.cast<float>();
  for (std::size_t steps : {1, 2, 5, 7, 50}) {
    std::vector<double> times;
    auto rng = make_stream(9, steps);
    const auto out = sample<double>([&](const MatrixD&, double) { return x; }, 6, 40, {steps}, rng, &times);
    CHECK(max_abs_diff(out, x) <= 1e-6);
    CHECK(out == x);
    REQUIRE(times.size() == steps + 1);
    for (std::size_t i = 1; i < times.size(); ++i) CHECK(times[i] > times[i - 1]);
    CHECK(times == time_grid(steps));

    auto rf = make_stream(9, steps);
    CHECK(sample<float>([&](const MatrixF&, double) { return xf; }, 6, 40, {steps}, rf) == xf);
  }
}

TEST_CASE("one step returns the prediction from pure noise") {
  auto rng = make_stream(4, 1);
  MatrixD seen;
  double seen_t = -1.0;
  const auto out = sample<double>(
      [&](const MatrixD& z, double t) {
        seen = z;
        seen_t = t;
        auto y = z;
        for (auto& v : y.storage()) v = 2.0 * v + 1.0;
        return y;
      },
      2, 3, {1}, rng);
  CHECK(seen_t == 0.0);
  auto ref = make_stream(4, 1);
  CHECK(seen == standard_normal<double>(2, 3, ref));
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 2.0 * seen.data()[i] + 1.0);
}

TEST_CASE("sampling is reproducible and seed-dependent") {
  auto f = [](const MatrixD& z, double t) {
    auto y = z;
    for (auto& v : y.storage()) v = std::sin(v) * (1.0 - t);
    return y;
  };
  auto a = make_stream(5, 3), b = make_stream(5, 3), c = make_stream(5, 4);
  const auto ya = sample<double>(f, 3, 8, {10}, a);
  CHECK(ya == sample<double>(f, 3, 8, {10}, b));
  CHECK(max_abs_diff(ya, sample<double>(f, 3, 8, {10}, c)) > 0.0);
}

TEST_CASE("non-finite iterates abort with the step index") {
  auto rng = make_stream(6, 0);
  auto f = [](const MatrixD& z, double t) {
    auto y = z;
    if (t > 0.25) y(0, 0) = std::numeric_limits<double>::infinity();
    return y;
  };
  try {
    sample<double>(f, 2, 2, {4}, rng);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step 2") != std::string::npos);
  }
}

TEST_CASE("masked loss") {
  auto rng = make_stream(7, 0);
  const auto target = standard_normal<double>(8, 1250, rng);
  const std::vector<std::size_t> unseen = {1, 3, 4, 6, 7, 2, 0, 5};
  MatrixD zero(8, 1250), grad;
  // 10^4 unit-variance entries
  CHECK(masked_mse(zero, target, unseen) == doctest::Approx(1.0).epsilon(0.05));
  CHECK(masked_mse(target, target, unseen, &grad) == 0.0);
  for (double g : grad.storage()) CHECK(g == 0.0);

  const std::vector<std::size_t> some = {1, 5};
  auto moved = target;
  for (std::size_t c = 0; c < moved.cols(); ++c) moved(0, c) += 10.0, moved(7, c) -= 3.0;
  const auto pred = standard_normal<double>(8, 1250, rng);
  CHECK(masked_mse(pred, moved, some) == masked_mse(pred, target, some));

  masked_mse(pred, target, some, &grad);
  const double n = 2.0 * 1250.0;
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 1250; c += 97) {
      const bool in_mask = r == 1 || r == 5;
      CHECK(grad(r, c) == doctest::Approx(in_mask ? 2.0 * (pred(r, c) - target(r, c)) / n : 0.0));
    }
  CHECK_THROWS_AS(masked_mse(pred, target, {}), ConfigError);
}

TEST_CASE("training times stay inside the margin") {
  auto rng = make_stream(8, 0);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double t = sample_time(rng);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  CHECK(lo >= kTimeMargin);
  CHECK(hi <= 1.0 - kTimeMargin);
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("streams are independent of creation order") {
  auto a = make_stream(10, 1);
  auto b = make_stream(10, 2);
  auto a2 = make_stream(10, 1);
  CHECK(a() == a2());
  CHECK(make_stream(10, 2)() == b());
  CHECK(make_stream(11, 1)() != make_stream(10, 1)());
}
