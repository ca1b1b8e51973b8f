#pragma once

#include <string>
#include <vector>

#include "mixforge/tensor.hpp"

namespace mixforge {

// Decoded 8-bit image, interleaved rows (RGB or grayscale).
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 or 3
    std::vector<unsigned char> pixels;  // height*width*channels
};

// Reads a PNG or JPEG file (sniffed by magic bytes).
ImageU8 read_image(const std::string& path);

// Writes an 8-bit grayscale or RGB PNG.
void write_png(const std::string& path, const ImageU8& img);

// Writes a (C,H,W) tensor as a PNG, clamping values to [0,1]. C must be 1
// or 3.
void write_png_tensor(const std::string& path, const Tensor& chw);

// Tiles (C,H,W) tensors (values in [0,1], all the same shape, C 1 or 3)
// into a grid PNG, `cols` per row, separated by a gray gutter.
void write_png_grid(const std::string& path, const std::vector<Tensor>& tiles, int cols,
                    int gutter = 2);

}  // namespace mixforge
