#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rfsr/image.hpp"

namespace rfsr {

// 8-bit PNG I/O. Reading maps v -> v/255 (gray and alpha are handled,
// alpha is dropped); writing maps v -> round(clamp(v,0,1)*255).
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

// Interleaved 8-bit RGB buffer helpers shared with the JPEG stage.
std::vector<std::uint8_t> to_rgb8(const Image& image);
Image from_rgb8(const std::vector<std::uint8_t>& rgb, int height, int width);

// Round-trip through a baseline JPEG encoder at the given quality (1..100).
Image jpeg_roundtrip(const Image& image, int quality);

}  // namespace rfsr
