#pragma once

// Raster codecs (PNG, JPEG round trip), base64 and small filesystem helpers.

#include "defectloop/grid.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace defectloop {

using Bytes = std::vector<std::uint8_t>;

/// 8-bit gray or RGB; alpha is composited away. Throws UnreadableImage.
Image8 read_png(const std::filesystem::path& path);
Image8 decode_png(std::span<const std::uint8_t> data);
Bytes encode_png(const Image8& image);
void write_png(const std::filesystem::path& path, const Image8& image);

/// Encodes at the given quality (1..100) and decodes again.
Image8 jpeg_round_trip(const Image8& image, int quality);

std::string base64_encode(std::span<const std::uint8_t> data);
Bytes base64_decode(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);

/// Write to a sibling temp file then rename over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace defectloop
