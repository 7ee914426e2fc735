#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "clustercam/core_types.hpp"

namespace clustercam {

/// 8-bit RGB image, row-major, channels interleaved.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const RgbImage&) const = default;
};

struct PreprocessConfig {
  int target_h = 224;
  int target_w = 224;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};

  void validate() const;
};

/// Bilinear resize with corner alignment: output corners sample input
/// corners exactly, and a 1-pixel axis samples the first row/column.
template <typename Derived>
Grid<typename Derived::Scalar> resize_bilinear(const Eigen::MatrixBase<Derived>& src, int out_h, int out_w) {
  using Scalar = typename Derived::Scalar;
  const auto in_h = static_cast<int>(src.rows());
  const auto in_w = static_cast<int>(src.cols());
  if (in_h < 1 || in_w < 1 || out_h < 1 || out_w < 1) {
    throw Error(ErrorCode::kDimensionMismatch, "resize needs non-empty source and target");
  }
  Grid<Scalar> out(out_h, out_w);
  const Scalar sy = out_h > 1 ? Scalar(in_h - 1) / Scalar(out_h - 1) : Scalar(0);
  const Scalar sx = out_w > 1 ? Scalar(in_w - 1) / Scalar(out_w - 1) : Scalar(0);
  for (int y = 0; y < out_h; ++y) {
    const Scalar fy = Scalar(y) * sy;
    const int y0 = std::min(static_cast<int>(fy), in_h - 1);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const Scalar ty = fy - Scalar(y0);
    for (int x = 0; x < out_w; ++x) {
      const Scalar fx = Scalar(x) * sx;
      const int x0 = std::min(static_cast<int>(fx), in_w - 1);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const Scalar tx = fx - Scalar(x0);
      const Scalar top = src(y0, x0) + (src(y0, x1) - src(y0, x0)) * tx;
      const Scalar bottom = src(y1, x0) + (src(y1, x1) - src(y1, x0)) * tx;
      out(y, x) = top + (bottom - top) * ty;
    }
  }
  return out;
}

/// Decodes a PNG or JPEG file into 8-bit RGB; grayscale sources are
/// replicated into all three channels.
RgbImage decode_image(const std::string& path);

ImageTensor preprocess(const RgbImage& image, const PreprocessConfig& config,
                       std::optional<std::string> source_path = std::nullopt);
ImageTensor load_and_preprocess(const std::string& path, const PreprocessConfig& config);

RgbImage resize_rgb(const RgbImage& image, int out_h, int out_w);

/// Jet-style colormap with fixed anchors 0 -> (0,0,131), 0.35 -> (0,255,255),
/// 0.65 -> (255,255,0), 1 -> (128,0,0), linear in between. Unrounded.
std::array<double, 3> colormap(double value);

RgbImage render_overlay(const RgbImage& original, const Heatmap& heatmap, double alpha);
/// Colormapped heatmap alone.
RgbImage render_heatmap(const Heatmap& heatmap);
/// values in [0,1] as gray levels.
RgbImage render_gray(const GridD& values);
/// original * mask per pixel, mask resized to the original's size.
RgbImage render_masked(const RgbImage& original, const GridD& mask);
/// Lays equally sized tiles out in a grid with `columns` columns.
RgbImage tile_images(const std::vector<RgbImage>& tiles, int columns, int gap = 2);

void write_png(const std::string& path, const RgbImage& image);

}  // namespace clustercam
