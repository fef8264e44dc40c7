#pragma once

#include <string>

#include "mapunetr/preprocess.hpp"

namespace mapunetr {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary 8-bit PPM (P6) / PGM (P5). Images are quantized with round(v*255)
// on write and rescaled to [0,1] on read; masks carry raw class indices.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

void write_pgm(const std::string& path, const Image& img);          // 1-channel in [0,1]
void write_mask_pgm(const std::string& path, const Mask& mask);     // raw class ids
Mask read_mask_pgm(const std::string& path);

}  // namespace mapunetr
