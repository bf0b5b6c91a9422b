#pragma once

#include "reason/core/grid.hpp"

#include <filesystem>

namespace reason::io {

/// Grayscale PNG (8- or 16-bit) scaled to [0,1].
GridF read_png_gray(const std::filesystem::path &path);
/// 8-bit mask PNG with values in {0,255}, mapped to {0,1}.
GridU8 read_mask_png(const std::filesystem::path &path);

void write_png_gray8(const std::filesystem::path &path, const GridF &g);
/// value = round(p * 65535)
void write_png_gray16(const std::filesystem::path &path, const GridF &g);
void write_mask_png(const std::filesystem::path &path, const GridU8 &mask);

/// Snap intensities to the k/255 lattice so an 8-bit PNG round-trip is exact.
GridF quantize_u8(const GridF &g);

} // namespace reason::io
