// SPDX-License-Identifier: Apache-2.0
//
// PNG image I/O. Frames travel as float tensors [3, H, W] in [0, 1]; label
// maps as uint8 tensors [H, W]. Round-tripping a label map is lossless;
// round-tripping a frame quantizes to 8 bits per channel.

#ifndef STEVE_PNG_IO_HPP
#define STEVE_PNG_IO_HPP

#include "steve/tensor.hpp"

#include <cstdint>
#include <string>

namespace steve {

Tensor<float> read_png_rgb(const std::string& path);
void write_png_rgb(const std::string& path, const Tensor<float>& img);

Tensor<std::uint8_t> read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const Tensor<std::uint8_t>& img);

}  // namespace steve

#endif  // STEVE_PNG_IO_HPP
