#pragma once

#include <string>
#include <vector>

#include "stm/tensor.hpp"

namespace stm::eval {

// Reads a PNG (gray, gray+alpha, RGB or RGBA; 8 or 16 bit) into a 3-channel
// image in [0, 1]. Alpha is dropped, gray is replicated.
Image read_png(const std::string& path);

// Writes an RGB (or single-channel) image. 16-bit output keeps adversarial
// perturbations at 1/65535 resolution.
void write_png(const std::string& path, const Image& image, int bit_depth = 8);

// Quantises to the 8-bit grid, the representation JPEG and PNG codecs see.
Image quantize_8bit(const Image& image);

}  // namespace stm::eval

namespace stm::eval {

// Exact float64 storage for tensors that must round-trip bit for bit
// (adversarial sets): "STMTENS1", u64 count, then per tensor u32 C, H, W and
// the planar values.
void save_tensors(const std::string& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_tensors(const std::string& path);

}  // namespace stm::eval
