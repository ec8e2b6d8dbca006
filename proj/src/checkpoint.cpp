#include "topodiff/checkpoint.hpp"

#include "topodiff/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace topodiff::checkpoint {

namespace {

static_assert(std::endian::native == std::endian::little);

constexpr char kMagic[4] = {'T', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

void put_str(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename V>
  V get() {
    V v{};
    read(reinterpret_cast<char*>(&v), sizeof(V));
    return v;
  }

  std::string str() {
    const auto n = get<std::uint32_t>();
    if (n > (1u << 28)) throw DataError(path_ + ": corrupt string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  void read(char* dst, std::size_t n) {
    if (!in_.read(dst, static_cast<std::streamsize>(n))) throw DataError(path_ + ": truncated checkpoint");
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

const NamedTensor* ModelCheckpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const NamedTensor& ModelCheckpoint::at(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (!t) throw DataError("checkpoint has no tensor '" + name + "'");
  return *t;
}

void save(const std::string& path, const ModelCheckpoint& ck) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.config.size()));
    for (const auto& [k, v] : ck.config) {
      put_str(out, k);
      put_str(out, v);
    }
    put<std::uint64_t>(out, ck.step);
    put_str(out, ck.rng_state);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
      put_str(out, t.name);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
      for (auto d : t.dims) put<std::uint32_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    }
    if (!out) throw DataError("write failed for checkpoint '" + path + "'");
  }
  std::rename(tmp.c_str(), path.c_str());
}

ModelCheckpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  Reader r(in, path);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError(path + ": not a checkpoint (magic mismatch)");
  if (r.get<std::uint32_t>() != kVersion) throw DataError(path + ": unsupported checkpoint version");
  ModelCheckpoint ck;
  const auto n_cfg = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_cfg; ++i) {
    std::string k = r.str();
    ck.config[k] = r.str();
  }
  ck.step = r.get<std::uint64_t>();
  ck.rng_state = r.str();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = r.str();
    const auto nd = r.get<std::uint32_t>();
    if (nd > 8) throw DataError(path + ": corrupt tensor rank");
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < nd; ++d) {
      t.dims.push_back(r.get<std::uint32_t>());
      count *= t.dims.back();
    }
    t.values.resize(count);
    r.read(reinterpret_cast<char*>(t.values.data()), count * sizeof(float));
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

void put_params(ModelCheckpoint& ck, const nn::ParamSet<float>& ps, const std::string& prefix) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    NamedTensor t;
    t.name = prefix + ps.name(i);
    t.dims = {static_cast<std::uint32_t>(ps[i].rows()), static_cast<std::uint32_t>(ps[i].cols())};
    t.values = ps[i].storage();
    ck.tensors.push_back(std::move(t));
  }
}

void get_params(const ModelCheckpoint& ck, nn::ParamSet<float>& ps, const std::string& prefix) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const NamedTensor& t = ck.at(prefix + ps.name(i));
    if (t.dims.size() != 2 || t.dims[0] != ps[i].rows() || t.dims[1] != ps[i].cols())
      throw DataError("checkpoint tensor '" + t.name + "' has the wrong shape");
    ps[i].storage() = t.values;
  }
}

}  // namespace topodiff::checkpoint
