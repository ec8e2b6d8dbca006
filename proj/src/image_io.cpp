#include "topodiff/errors.hpp"
#include "topodiff/topomap.hpp"

#include <zlib.h>

#include <array>
#include <fstream>

namespace topodiff::image_io {

namespace {

void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

void chunk(std::ofstream& out, const char type[4], const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> buf;
  put_be32(buf, static_cast<std::uint32_t>(payload.size()));
  buf.insert(buf.end(), type, type + 4);
  buf.insert(buf.end(), payload.begin(), payload.end());
  const uLong crc = crc32(0L, buf.data() + 4, static_cast<uInt>(buf.size() - 4));
  put_be32(buf, static_cast<std::uint32_t>(crc));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

void write_png(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != width * height * 3) throw DataError("PNG payload size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  static constexpr std::array<std::uint8_t, 8> kSig = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.write(reinterpret_cast<const char*>(kSig.data()), kSig.size());

  std::vector<std::uint8_t> ihdr;
  put_be32(ihdr, static_cast<std::uint32_t>(width));
  put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB, no interlace
  chunk(out, "IHDR", ihdr);

  std::vector<std::uint8_t> raw;
  raw.reserve(height * (width * 3 + 1));
  for (std::size_t r = 0; r < height; ++r) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), rgb.begin() + static_cast<long>(r * width * 3),
               rgb.begin() + static_cast<long>((r + 1) * width * 3));
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(len);
  if (compress2(z.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw DataError("zlib compression failed for '" + path + "'");
  z.resize(len);
  chunk(out, "IDAT", z);
  chunk(out, "IEND", {});
}

void write_ppm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

}  // namespace topodiff::image_io
