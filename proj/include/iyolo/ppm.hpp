#pragma once

#include <string>

#include "iyolo/boxes.hpp"
#include "iyolo/tensor.hpp"

namespace iyolo {

// Binary P6 PPM with maxval 255. Bytes scale to [0,1]; write rounds to the
// nearest byte, so read-write-read is a fixed point. Other magics raise
// UnsupportedFormat, short payloads Truncated, bad header fields BadValue.
Tensor read_ppm(const std::string& path);
void write_ppm(const Tensor& image, const std::string& path);

// Nearest-neighbor resample to size x size.
Tensor resize_nearest(const Tensor& image, int out_h, int out_w);

// Draws a 2-pixel border (clipped to the image) in the given RGB color.
void draw_box(Tensor& image, const Box& normalized, float r, float g, float b);

// Fixed per-class render palette (cycles past index 2).
void class_color(int class_id, float& r, float& g, float& b);

}  // namespace iyolo
