#include "topodiff/topomap.hpp"

#include "topodiff/errors.hpp"
#include "topodiff/kernels.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace topodiff::topomap {

namespace {

struct Stop {
  double u;
  std::array<float, 3> rgb;
};

constexpr std::array<Stop, 5> kStops = {{
    {-1.0, {0.0f, 0.0f, 0.6f}},
    {-0.5, {0.2f, 0.4f, 1.0f}},
    {0.0, {1.0f, 1.0f, 1.0f}},
    {0.5, {1.0f, 0.4f, 0.2f}},
    {1.0, {0.6f, 0.0f, 0.0f}},
}};

constexpr char kFeatureMagic[4] = {'T', 'O', 'P', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

}  // namespace

std::array<float, 3> colormap(double u) {
  u = std::clamp(u, -1.0, 1.0);
  for (std::size_t s = 1; s < kStops.size(); ++s) {
    if (u <= kStops[s].u) {
      const double f = (u - kStops[s - 1].u) / (kStops[s].u - kStops[s - 1].u);
      std::array<float, 3> out{};
      for (int k = 0; k < 3; ++k)
        out[k] = static_cast<float>(kStops[s - 1].rgb[k] +
                                    f * (kStops[s].rgb[k] - kStops[s - 1].rgb[k]));
      return out;
    }
  }
  return kStops.back().rgb;
}

template <typename T>
Matrix<T> temporal_average(const signalio::PatchTensor<T>& p) {
  Matrix<T> out(p.channels, p.groups);
  for (std::size_t c = 0; c < p.channels; ++c)
    for (std::size_t g = 0; g < p.groups; ++g) {
      const T* x = p.patch_ptr(c, g);
      T s = 0;
      for (std::size_t i = 0; i < p.patch; ++i) s += x[i];
      out(c, g) = s / static_cast<T>(p.patch);
    }
  return out;
}

template Matrix<float> temporal_average(const signalio::PatchTensor<float>&);
template Matrix<double> temporal_average(const signalio::PatchTensor<double>&);

double idw(const std::vector<double>& values, const std::vector<montage::Vec2>& nodes,
           const montage::Vec2& point) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double dx = point[0] - nodes[i][0], dy = point[1] - nodes[i][1];
    const double d2 = dx * dx + dy * dy;
    if (d2 == 0.0) return values[i];
    const double w = 1.0 / d2;
    num += w * values[i];
    den += w;
  }
  return num / den;
}

std::pair<std::size_t, std::size_t> pixel_of(const montage::Vec2& point, std::size_t height,
                                             std::size_t width) {
  const double fc = (point[0] + 1.0) * 0.5 * static_cast<double>(width);
  const double fr = (1.0 - point[1]) * 0.5 * static_cast<double>(height);
  constexpr auto npos = static_cast<std::size_t>(-1);
  if (fc < 0.0 || fr < 0.0) return {npos, npos};
  const auto c = std::min(static_cast<std::size_t>(fc), width - 1);
  const auto r = std::min(static_cast<std::size_t>(fr), height - 1);
  if (fc > static_cast<double>(width) || fr > static_cast<double>(height)) return {npos, npos};
  return {r, c};
}

TopoImage render_topomap(const std::vector<double>& values, const montage::ElectrodeLayout& layout,
                         const montage::SrTask& task, std::size_t height, std::size_t width,
                         std::size_t group) {
  if (values.size() != task.c_lr()) throw DataError("topomap needs one value per visible channel");
  if (task.c_lr() < 3) throw ConfigError("topomap needs at least 3 visible electrodes");
  if (height < 16 || width < 16) throw ConfigError("topomap resolution must be at least 16x16");

  std::vector<montage::Vec2> nodes;
  for (std::size_t i : task.visible) nodes.push_back(layout.pos2d[i]);
  bool distinct = false;
  for (const auto& n : nodes)
    if (n != nodes.front()) distinct = true;
  if (!distinct) throw DataError("all visible electrodes share one position");

  TopoImage img;
  img.height = height;
  img.width = width;
  img.group = group;
  img.field.assign(height * width, 0.0);
  img.mask.assign(height * width, 0);
  img.pixels.assign(height * width * 3, 0.0f);

  for (double v : values) img.scale = std::max(img.scale, std::abs(v));

  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const double x = -1.0 + (2.0 * static_cast<double>(c) + 1.0) / static_cast<double>(width);
      const double y = 1.0 - (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(height);
      if (x * x + y * y > 1.0) continue;
      img.mask[r * width + c] = 1;
      img.field[r * width + c] = idw(values, nodes, {x, y});
    }

  // Pin electrode pixels; on collision the electrode nearest the centre wins.
  std::vector<double> best(height * width, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto [r, c] = pixel_of(nodes[i], height, width);
    if (r >= height || c >= width) continue;
    const double x = -1.0 + (2.0 * static_cast<double>(c) + 1.0) / static_cast<double>(width);
    const double y = 1.0 - (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(height);
    const double d = std::hypot(nodes[i][0] - x, nodes[i][1] - y);
    if (d < best[r * width + c]) {
      best[r * width + c] = d;
      img.mask[r * width + c] = 1;
      img.field[r * width + c] = values[i];
    }
  }

  for (std::size_t p = 0; p < height * width; ++p) {
    const auto rgb = !img.mask[p] ? kBackground
                     : img.scale == 0.0 ? colormap(0.0)
                                        : colormap(img.field[p] / img.scale);
    std::copy(rgb.begin(), rgb.end(), img.pixels.begin() + static_cast<long>(3 * p));
  }
  return img;
}

MatrixD extract_features_builtin(const TopoImage& image, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || h > image.height || w > image.width)
    throw ConfigError("feature grid must satisfy 1 <= h <= H and 1 <= w <= W");
  MatrixD out(h * w, kBuiltinFeatureDim);
  for (std::size_t a = 0; a < h; ++a)
    for (std::size_t b = 0; b < w; ++b) {
      const std::size_t r0 = a * image.height / h, r1 = (a + 1) * image.height / h;
      const std::size_t c0 = b * image.width / w, c1 = (b + 1) * image.width / w;
      double sum = 0.0, mn = std::numeric_limits<double>::infinity(), mx = -mn;
      double cr = 0.0, cc = 0.0;
      std::size_t n = 0;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) {
          if (!image.inside(r, c)) continue;
          const double v = image.value(r, c);
          sum += v;
          mn = std::min(mn, v);
          mx = std::max(mx, v);
          cr += static_cast<double>(r);
          cc += static_cast<double>(c);
          ++n;
        }
      auto row = out.row(a * w + b);
      if (n == 0) continue;  // fully masked cell
      cr /= static_cast<double>(n);
      cc /= static_cast<double>(n);
      // Weight 1 / (1 + (d/half)^2) around the masked-pixel centroid.
      const double half = 0.5 * static_cast<double>(std::max(r1 - r0, c1 - c0));
      double wsum = 0.0, wv = 0.0;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) {
          if (!image.inside(r, c)) continue;
          const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
          const double wt = 1.0 / (1.0 + (dr * dr + dc * dc) / (half * half));
          wsum += wt;
          wv += wt * image.value(r, c);
        }
      row[0] = sum / static_cast<double>(n);
      row[1] = mn;
      row[2] = mx;
      row[3] = wv / wsum;
    }
  return out;
}

TopoFeatures builtin_features(const signalio::PatchTensor<float>& visible_patches,
                              const montage::ElectrodeLayout& layout, const montage::SrTask& task,
                              const TopoSettings& settings) {
  const MatrixF avg = temporal_average(visible_patches);
  TopoFeatures f;
  f.groups = visible_patches.groups;
  f.h = f.w = settings.grid;
  f.d = kBuiltinFeatureDim;
  f.data.resize(f.groups * f.h * f.w, f.d);
  std::vector<double> values(task.c_lr());
  for (std::size_t g = 0; g < f.groups; ++g) {
    for (std::size_t c = 0; c < task.c_lr(); ++c) values[c] = avg(c, g);
    const TopoImage img =
        render_topomap(values, layout, task, settings.image_size, settings.image_size, g);
    const MatrixD cells = extract_features_builtin(img, f.h, f.w);
    for (std::size_t r = 0; r < cells.rows(); ++r)
      for (std::size_t k = 0; k < f.d; ++k)
        f.data(g * f.h * f.w + r, k) = static_cast<float>(cells(r, k));
  }
  return f;
}

void write_features(const std::string& path, const TopoFeatures& f) {
  static_assert(std::endian::native == std::endian::little);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(kFeatureMagic, 4);
  const std::uint32_t hdr[5] = {kFeatureVersion, static_cast<std::uint32_t>(f.groups),
                                static_cast<std::uint32_t>(f.h), static_cast<std::uint32_t>(f.w),
                                static_cast<std::uint32_t>(f.d)};
  out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  out.write(reinterpret_cast<const char*>(f.data.data()),
            static_cast<std::streamsize>(f.data.size() * sizeof(float)));
}

TopoFeatures load_external_features(const std::string& path, std::size_t groups, std::size_t h,
                                    std::size_t w, std::size_t d) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature sidecar '" + path + "'");
  char magic[4];
  std::uint32_t hdr[5];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw DataError(path + ": not a feature sidecar (magic mismatch)");
  if (!in.read(reinterpret_cast<char*>(hdr), sizeof(hdr))) throw DataError(path + ": truncated header");
  if (hdr[0] != kFeatureVersion) throw DataError(path + ": unsupported version");
  TopoFeatures f;
  f.groups = hdr[1];
  f.h = hdr[2];
  f.w = hdr[3];
  f.d = hdr[4];
  auto check = [&](const char* what, std::size_t got, std::size_t want) {
    if (want != 0 && got != want)
      throw DataError(path + ": " + what + " is " + std::to_string(got) + ", expected " +
                      std::to_string(want));
  };
  check("group count", f.groups, groups);
  check("h", f.h, h);
  check("w", f.w, w);
  check("d", f.d, d);
  f.data.resize(f.groups * f.h * f.w, f.d);
  if (!in.read(reinterpret_cast<char*>(f.data.data()),
               static_cast<std::streamsize>(f.data.size() * sizeof(float))))
    throw DataError(path + ": truncated payload");
  return f;
}

template <typename T>
Matrix<T> project_tokens(const Matrix<T>& features, const Matrix<T>& proj, const Matrix<T>& bias) {
  if (features.cols() != proj.rows() || bias.cols() != proj.cols() || bias.rows() != 1)
    throw ConfigError("topo projection shape mismatch");
  Matrix<T> out(features.rows(), proj.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) std::copy(bias.data(), bias.data() + bias.cols(), out.row(r).begin());
  kernels::parallel::gemm_nn(features.data(), proj.data(), out.data(), features.rows(), proj.rows(),
                             proj.cols(), true);
  return out;
}

template Matrix<float> project_tokens(const Matrix<float>&, const Matrix<float>&, const Matrix<float>&);
template Matrix<double> project_tokens(const Matrix<double>&, const Matrix<double>&,
                                       const Matrix<double>&);

std::vector<std::uint8_t> to_rgb8(const TopoImage& image) {
  std::vector<std::uint8_t> out(image.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
  return out;
}

}  // namespace topodiff::topomap
