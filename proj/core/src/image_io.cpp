#include "tpn/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace tpn {

uint8_t quantize_channel(float v) {
  const float q = std::round(v * 255.0f);
  if (!(q > 0.0f)) return 0;  // also maps NaN to 0
  if (q >= 255.0f) return 255;
  return static_cast<uint8_t>(q);
}

Tensor quantize_image(const Tensor& image) {
  const auto src = image.data();
  std::vector<float> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = quantize_channel(src[i]) / 255.0f;
  return Tensor::from(image.shape(), std::move(out));
}

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

void write_png(const Tensor& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("write_png: expected [3,H,W], got " + to_string(image.shape()));
  }
  const auto h = static_cast<png_uint_32>(image.dim(1)), w = static_cast<png_uint_32>(image.dim(2));
  std::vector<png_byte> rgb(static_cast<std::size_t>(h) * w * 3);
  const auto v = image.data();
  for (png_uint_32 y = 0; y < h; ++y) {
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            quantize_channel(v[(static_cast<std::size_t>(c) * h + y) * w + x]);
      }
    }
  }
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FormatError("write_png: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw FormatError("write_png: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("write_png: encoding failed for " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < h; ++y) png_write_row(png, rgb.data() + static_cast<std::size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError("read_png: cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw FormatError("read_png: not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw FormatError("read_png: libpng initialization failed");
  }
  std::vector<png_byte> rgb;
  png_uint_32 w = 0, h = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("read_png: malformed PNG: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int type = png_get_color_type(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (type == PNG_COLOR_TYPE_GRAY || type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if (type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("read_png: unsupported pixel layout in " + path.string());
  }
  rgb.resize(static_cast<std::size_t>(w) * h * 3);
  for (png_uint_32 y = 0; y < h; ++y) png_read_row(png, rgb.data() + static_cast<std::size_t>(y) * w * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  std::vector<float> out(rgb.size());
  for (png_uint_32 y = 0; y < h; ++y) {
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out[(static_cast<std::size_t>(c) * h + y) * w + x] =
            rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
      }
    }
  }
  return Tensor::from({3, static_cast<int64_t>(h), static_cast<int64_t>(w)}, std::move(out));
}

}  // namespace tpn
