#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "residua/tensor.hpp"

namespace residua {

/// 8-bit grayscale raster, row-major.
struct GrayImage8 {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> pix;

    std::uint8_t& at(int y, int x) { return pix[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return pix[static_cast<std::size_t>(y) * w + x]; }
};

/// Decode an image file to 8-bit grayscale. The format is detected from the
/// file's leading bytes: PGM (P5), PPM (P6), PNG, or JPEG. Color inputs are
/// reduced by the channel average (r+g+b)/3, rounded to nearest.
/// Missing or undecodable files raise IoError naming the path.
GrayImage8 decode_gray8(const std::string& path);

/// Serialize as binary PGM (P5, maxval 255). This is the one output format
/// the pipeline emits; byte-for-byte deterministic for a given raster.
std::vector<std::uint8_t> encode_pgm(const GrayImage8& img);
void save_pgm(const GrayImage8& img, const std::string& path);

/// [0,1] float plane (1, 1, h, w) from 8-bit gray: value / 255.
Tensor4 gray8_to_tensor(const GrayImage8& img);
/// Back to 8 bits: clamp to [0,1], scale by 255, round to nearest.
GrayImage8 tensor_to_gray8(const Tensor4& x);

/// Decode + normalize in one step.
Tensor4 load_grayscale(const std::string& path);
/// Quantize + save as PGM in one step.
void save_grayscale(const Tensor4& x, const std::string& path);

} // namespace residua
