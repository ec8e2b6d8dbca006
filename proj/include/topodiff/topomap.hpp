#pragma once

#include "topodiff/matrix.hpp"
#include "topodiff/montage.hpp"
#include "topodiff/signalio.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace topodiff::topomap {

/// Rendered scalp map for one temporal group. Pixel (r, c) has its centre at
/// x = -1 + (2c+1)/W, y = 1 - (2r+1)/H; the mask is the closed unit disc.
struct TopoImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t group = 0;
  std::vector<double> field;      // H*W interpolated values (0 outside mask)
  std::vector<std::uint8_t> mask;  // H*W
  std::vector<float> pixels;      // H*W*3 RGB in [0,1]
  double scale = 0.0;             // m = max |value|

  bool inside(std::size_t r, std::size_t c) const { return mask[r * width + c] != 0; }
  double value(std::size_t r, std::size_t c) const { return field[r * width + c]; }
  std::array<float, 3> rgb(std::size_t r, std::size_t c) const {
    const std::size_t o = (r * width + c) * 3;
    return {pixels[o], pixels[o + 1], pixels[o + 2]};
  }
};

/// Per-group feature maps stacked group-major: row g*h*w + cell, d columns.
struct TopoFeatures {
  std::size_t groups = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t d = 0;
  MatrixF data;
};

inline constexpr std::array<float, 3> kBackground = {0.0f, 0.0f, 0.0f};

/// Diverging colormap on u in [-1, 1]. Stops (u: r g b):
///   -1: 0.0 0.0 0.6 | -0.5: 0.2 0.4 1.0 | 0: 1 1 1 | 0.5: 1.0 0.4 0.2 | 1: 0.6 0.0 0.0
/// linearly interpolated between stops; u is clamped to [-1, 1].
std::array<float, 3> colormap(double u);

template <typename T>
Matrix<T> temporal_average(const signalio::PatchTensor<T>& p);

/// Inverse-distance (power 2) interpolation at `point`; exact at nodes.
double idw(const std::vector<double>& values, const std::vector<montage::Vec2>& nodes,
           const montage::Vec2& point);

/// Pixel containing `point`, or npos if it falls outside the grid.
std::pair<std::size_t, std::size_t> pixel_of(const montage::Vec2& point, std::size_t height,
                                             std::size_t width);

/// Renders visible-channel values (task.visible order) onto the unit disc.
/// Electrode pixels carry the electrode value exactly.
TopoImage render_topomap(const std::vector<double>& values, const montage::ElectrodeLayout& layout,
                         const montage::SrTask& task, std::size_t height, std::size_t width,
                         std::size_t group = 0);

/// Built-in frozen extractor: splits the disc's bounding box into h x w
/// cells and emits (mean, min, max, centroid-weighted mean) of the scalar
/// field over masked pixels. Row r*w + c of the result is cell (r, c).
MatrixD extract_features_builtin(const TopoImage& image, std::size_t h, std::size_t w);

inline constexpr std::size_t kBuiltinFeatureDim = 4;

struct TopoSettings {
  std::size_t image_size = 32;  // H = W
  std::size_t grid = 2;         // h = w
};

/// Temporal average -> per-group render -> built-in features, stacked.
TopoFeatures builtin_features(const signalio::PatchTensor<float>& visible_patches,
                              const montage::ElectrodeLayout& layout, const montage::SrTask& task,
                              const TopoSettings& settings);

void write_features(const std::string& path, const TopoFeatures& f);

/// Reads a TOPF sidecar and checks it against the expected shape; a zero
/// expectation is not checked.
TopoFeatures load_external_features(const std::string& path, std::size_t groups,
                                    std::size_t h = 0, std::size_t w = 0, std::size_t d = 0);

/// tokens[g*h*w + r] = features[g*h*w + r] * proj + bias.
template <typename T>
Matrix<T> project_tokens(const Matrix<T>& features, const Matrix<T>& proj, const Matrix<T>& bias);

/// 8-bit RGB of an image (background included).
std::vector<std::uint8_t> to_rgb8(const TopoImage& image);

}  // namespace topodiff::topomap

namespace topodiff::image_io {

void write_png(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb);
void write_ppm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb);

}  // namespace topodiff::image_io
