#include "topodiff/optim.hpp"

#include "topodiff/errors.hpp"

namespace topodiff::optim {

double cosine_lr(std::uint64_t step, std::uint64_t total, double lr0) {
  if (total == 0) throw ConfigError("cosine schedule needs a positive step count");
  if (step > total) step = total;
  constexpr double kPi = 3.14159265358979323846;
  return lr0 * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total)));
}

}  // namespace topodiff::optim
