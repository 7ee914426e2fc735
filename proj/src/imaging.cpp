#include "clustercam/imaging.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

namespace clustercam {

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

RgbImage decode_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
    const std::string message = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::kDecodeError, path + ": " + message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out(static_cast<int>(image.height), static_cast<int>(image.width));
  // A null background composites any alpha channel onto black.
  if (png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr) == 0) {
    const std::string message = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::kDecodeError, path + ": " + message);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* manager = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, manager->message);
  std::longjmp(manager->jump, 1);
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

RgbImage decode_jpeg(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error(ErrorCode::kIoError, "cannot open " + path);

  jpeg_decompress_struct cinfo{};
  JpegErrorManager error{};
  cinfo.err = jpeg_std_error(&error.base);
  error.base.error_exit = jpeg_error_exit;
  RgbImage out;
  // No C++ objects with destructors are created between setjmp and the
  // decoder calls below, so the longjmp is safe.
  if (setjmp(error.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::kDecodeError, path + ": " + error.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  if (cinfo.output_components != 3) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorCode::kUnsupportedFormat, path + ": unsupported JPEG color layout");
  }
  out = RgbImage(static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return out;
}

GridD channel_grid(const RgbImage& image, int c) {
  GridD g(image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) g(y, x) = image.at(y, x, c);
  return g;
}

void check_unit_grid(const GridD& values, const char* what) {
  if (!all_finite(values) || values.size() == 0) {
    throw Error(ErrorCode::kNonFiniteValue, std::string(what) + " must be finite and non-empty");
  }
}

}  // namespace

void PreprocessConfig::validate() const {
  if (target_h < 1 || target_w < 1) throw Error(ErrorCode::kInvalidArgument, "target size must be positive");
  for (double s : std) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::kInvalidArgument, "std entries must be positive");
  }
  for (double m : mean) {
    if (!std::isfinite(m)) throw Error(ErrorCode::kInvalidArgument, "mean entries must be finite");
  }
}

RgbImage decode_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  unsigned char magic[8] = {};
  in.read(reinterpret_cast<char*>(magic), sizeof magic);
  const auto got = in.gcount();
  in.close();
  static constexpr unsigned char kPng[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (got == 8 && std::equal(magic, magic + 8, kPng)) return decode_png(path);
  if (got >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) return decode_jpeg(path);
  throw Error(ErrorCode::kUnsupportedFormat, path + ": not a PNG or JPEG file");
}

ImageTensor preprocess(const RgbImage& image, const PreprocessConfig& config, std::optional<std::string> source_path) {
  config.validate();
  if (image.height < 1 || image.width < 1) throw Error(ErrorCode::kDecodeError, "empty image");
  const int hw = config.target_h * config.target_w;
  GridStack<double> data(3, hw);
  for (int c = 0; c < 3; ++c) {
    const GridD resized = resize_bilinear(channel_grid(image, c), config.target_h, config.target_w);
    const Eigen::Map<const Eigen::RowVectorXd> flat(resized.data(), hw);
    data.row(c) = ((flat.array() / 255.0 - config.mean[c]) / config.std[c]).matrix();
  }
  return ImageTensor(std::move(data), config.target_h, config.target_w, std::move(source_path));
}

ImageTensor load_and_preprocess(const std::string& path, const PreprocessConfig& config) {
  return preprocess(decode_image(path), config, path);
}

RgbImage resize_rgb(const RgbImage& image, int out_h, int out_w) {
  if (image.height == out_h && image.width == out_w) return image;
  RgbImage out(out_h, out_w);
  for (int c = 0; c < 3; ++c) {
    const GridD resized = resize_bilinear(channel_grid(image, c), out_h, out_w);
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) out.at(y, x, c) = to_byte(resized(y, x));
  }
  return out;
}

std::array<double, 3> colormap(double value) {
  struct Anchor {
    double t;
    std::array<double, 3> rgb;
  };
  static constexpr Anchor kAnchors[] = {
      {0.0, {0.0, 0.0, 131.0}},
      {0.35, {0.0, 255.0, 255.0}},
      {0.65, {255.0, 255.0, 0.0}},
      {1.0, {128.0, 0.0, 0.0}},
  };
  const double v = std::isfinite(value) ? std::clamp(value, 0.0, 1.0) : 0.0;
  for (std::size_t i = 1; i < std::size(kAnchors); ++i) {
    if (v <= kAnchors[i].t) {
      const Anchor& a = kAnchors[i - 1];
      const Anchor& b = kAnchors[i];
      const double t = (v - a.t) / (b.t - a.t);
      return {a.rgb[0] + (b.rgb[0] - a.rgb[0]) * t, a.rgb[1] + (b.rgb[1] - a.rgb[1]) * t,
              a.rgb[2] + (b.rgb[2] - a.rgb[2]) * t};
    }
  }
  return kAnchors[std::size(kAnchors) - 1].rgb;
}

RgbImage render_overlay(const RgbImage& original, const Heatmap& heatmap, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in [0, 1]");
  const GridD h = resize_bilinear(heatmap.data(), original.height, original.width);
  RgbImage out(original.height, original.width);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const auto rgb = colormap(h(y, x));
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = to_byte((1.0 - alpha) * original.at(y, x, c) + alpha * rgb[c]);
      }
    }
  }
  return out;
}

RgbImage render_heatmap(const Heatmap& heatmap) {
  RgbImage out(heatmap.height(), heatmap.width());
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const auto rgb = colormap(heatmap.data()(y, x));
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = to_byte(rgb[c]);
    }
  }
  return out;
}

RgbImage render_gray(const GridD& values) {
  check_unit_grid(values, "gray values");
  RgbImage out(static_cast<int>(values.rows()), static_cast<int>(values.cols()));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const auto b = to_byte(std::clamp(values(y, x), 0.0, 1.0) * 255.0);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = b;
    }
  }
  return out;
}

RgbImage render_masked(const RgbImage& original, const GridD& mask) {
  check_unit_grid(mask, "mask");
  const GridD m = resize_bilinear(mask, original.height, original.width);
  RgbImage out(original.height, original.width);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = to_byte(original.at(y, x, c) * std::clamp(m(y, x), 0.0, 1.0));
  return out;
}

RgbImage tile_images(const std::vector<RgbImage>& tiles, int columns, int gap) {
  if (tiles.empty()) throw Error(ErrorCode::kEmptyInput, "no tiles");
  if (columns < 1 || gap < 0) throw Error(ErrorCode::kInvalidArgument, "bad tile layout");
  const int th = tiles.front().height;
  const int tw = tiles.front().width;
  for (const auto& t : tiles) {
    if (t.height != th || t.width != tw) throw Error(ErrorCode::kDimensionMismatch, "tiles differ in size");
  }
  const int cols = std::min<int>(columns, static_cast<int>(tiles.size()));
  const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
  RgbImage out(rows * th + (rows - 1) * gap, cols * tw + (cols - 1) * gap);
  std::fill(out.pixels.begin(), out.pixels.end(), std::uint8_t{255});
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const int oy = static_cast<int>(i) / cols * (th + gap);
    const int ox = static_cast<int>(i) % cols * (tw + gap);
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        for (int c = 0; c < 3; ++c) out.at(oy + y, ox + x, c) = tiles[i].at(y, x, c);
  }
  return out;
}

void write_png(const std::string& path, const RgbImage& image) {
  if (image.height < 1 || image.width < 1) throw Error(ErrorCode::kInvalidArgument, "cannot write an empty image");
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr) == 0) {
    const std::string message = png.message;
    png_image_free(&png);
    throw Error(ErrorCode::kIoError, path + ": " + message);
  }
}

}  // namespace clustercam
