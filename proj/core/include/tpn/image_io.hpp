#pragma once

// 8-bit RGB PNG I/O for [3, H, W] images with values in [0, 1].

#include <cstdint>
#include <filesystem>

#include "tpn/tensor.hpp"

namespace tpn {

// round(v * 255) clamped to [0, 255].
uint8_t quantize_channel(float v);
// Every value replaced by quantize_channel(v) / 255.
Tensor quantize_image(const Tensor& image);

void write_png(const Tensor& image, const std::filesystem::path& path);
// Throws FormatError for anything that is not a decodable PNG.
Tensor read_png(const std::filesystem::path& path);

}  // namespace tpn
