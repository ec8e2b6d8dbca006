#pragma once

#include "topodiff/nn.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace topodiff::checkpoint {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

/// Binary container (little-endian):
///   "TDCK" u32 version
///   u32 n_config, then n_config x (str key, str value)
///   u64 step, str rng_state
///   u32 n_tensors, then n_tensors x (str name, u32 ndims, ndims x u32, float32 payload)
/// where str is u32 length followed by bytes.
struct ModelCheckpoint {
  std::map<std::string, std::string> config;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
  const NamedTensor& at(const std::string& name) const;
};

void save(const std::string& path, const ModelCheckpoint& ck);
ModelCheckpoint load(const std::string& path);

/// Appends every tensor of `ps` as `prefix + name`.
void put_params(ModelCheckpoint& ck, const nn::ParamSet<float>& ps, const std::string& prefix = "");

/// Fills `ps` from tensors named `prefix + name`; shapes must match.
void get_params(const ModelCheckpoint& ck, nn::ParamSet<float>& ps, const std::string& prefix = "");

}  // namespace topodiff::checkpoint
