#include "topodiff/signalio.hpp"

#include "topodiff/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace topodiff::signalio {

namespace {

constexpr char kMagic[4] = {'E', 'E', 'G', 'S'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "segment container I/O assumes a little-endian host");

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in, const std::string& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw DataError(path + ": truncated header");
  return v;
}

}  // namespace

void write_segment(const std::string& path, const EegSegment& seg) {
  if (seg.labels.size() != seg.channels()) throw DataError("label count does not match channel count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(seg.channels()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(seg.samples()));
  put<float>(out, seg.rate);
  for (const auto& l : seg.labels) out.write(l.c_str(), static_cast<std::streamsize>(l.size() + 1));
  out.write(reinterpret_cast<const char*>(seg.data.data()),
            static_cast<std::streamsize>(seg.data.size() * sizeof(float)));
  if (!out) throw DataError("write failed for '" + path + "'");
}

EegSegment read_segment(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open segment '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError(path + ": not a segment file (magic mismatch)");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw DataError(path + ": unsupported version " + std::to_string(version));
  const auto c = get<std::uint32_t>(in, path);
  const auto t = get<std::uint32_t>(in, path);
  EegSegment seg;
  seg.rate = get<float>(in, path);
  seg.labels.reserve(c);
  for (std::uint32_t i = 0; i < c; ++i) {
    std::string label;
    if (!std::getline(in, label, '\0')) throw DataError(path + ": label count is less than C");
    seg.labels.push_back(std::move(label));
  }
  seg.data.resize(c, t);
  const auto bytes = static_cast<std::streamsize>(seg.data.size() * sizeof(float));
  if (!in.read(reinterpret_cast<char*>(seg.data.data()), bytes))
    throw DataError(path + ": truncated payload");
  return seg;
}

EegSegment read_csv(const std::string& path, float rate) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV '" + path + "'");
  std::vector<std::string> labels;
  std::vector<std::vector<float>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    labels.push_back(cell);
    std::vector<float> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stof(cell));
      } catch (const std::exception&) {
        throw DataError(path + ": bad sample '" + cell + "' for channel " + labels.back());
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw DataError(path + ": ragged rows (channel " + labels.back() + ")");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path + ": no channels");
  EegSegment seg;
  seg.rate = rate;
  seg.labels = std::move(labels);
  seg.data.resize(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy(rows[r].begin(), rows[r].end(), seg.data.row(r).begin());
  return seg;
}

template <typename T>
PatchTensor<T> patchify(const Matrix<T>& signal, std::size_t patch) {
  if (patch == 0 || signal.cols() % patch != 0)
    throw ConfigError("signal length " + std::to_string(signal.cols()) +
                      " is not divisible by patch size " + std::to_string(patch));
  PatchTensor<T> p;
  p.channels = signal.rows();
  p.groups = signal.cols() / patch;
  p.patch = patch;
  // Channel-major with contiguous patches is exactly the row-major signal.
  p.data = signal.storage();
  return p;
}

template <typename T>
Matrix<T> unpatchify(const PatchTensor<T>& p) {
  Matrix<T> m(p.channels, p.groups * p.patch);
  std::copy(p.data.begin(), p.data.end(), m.data());
  return m;
}

template <typename T>
Matrix<T> flatten_tokens(const PatchTensor<T>& p) {
  Matrix<T> m(p.channels * p.groups, p.patch);
  std::copy(p.data.begin(), p.data.end(), m.data());
  return m;
}

template <typename T>
PatchTensor<T> unflatten_tokens(const Matrix<T>& tokens, std::size_t channels) {
  if (channels == 0 || tokens.rows() % channels != 0)
    throw ConfigError("token count is not a multiple of the channel count");
  PatchTensor<T> p;
  p.channels = channels;
  p.groups = tokens.rows() / channels;
  p.patch = tokens.cols();
  p.data = tokens.storage();
  return p;
}

template PatchTensor<float> patchify(const Matrix<float>&, std::size_t);
template PatchTensor<double> patchify(const Matrix<double>&, std::size_t);
template Matrix<float> unpatchify(const PatchTensor<float>&);
template Matrix<double> unpatchify(const PatchTensor<double>&);
template Matrix<float> flatten_tokens(const PatchTensor<float>&);
template Matrix<double> flatten_tokens(const PatchTensor<double>&);
template PatchTensor<float> unflatten_tokens(const Matrix<float>&, std::size_t);
template PatchTensor<double> unflatten_tokens(const Matrix<double>&, std::size_t);

}  // namespace topodiff::signalio
