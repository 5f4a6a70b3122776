#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "drtl/image.hpp"

namespace drtl {

// 8-bit PNG, grayscale or RGB; other layouts (palette, alpha, 16-bit) are
// converted on read
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

// baseline sequential JPEG, 4:2:0 for color; returns decoded bytes too so
// callers can check byte-level determinism
std::vector<uint8_t> jpeg_encode(const Image& img, int quality);
Image jpeg_decode(const std::vector<uint8_t>& bytes, int expect_h, int expect_w, int expect_c);

}  // namespace drtl
