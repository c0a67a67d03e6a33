#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segsr/tensor.hpp"

namespace segsr {

struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb; // interleaved, row-major
};

// 8-bit RGB PNG in/out. Any PNG color type is expanded to RGB8 on read.
// Writes use pinned encoder settings (filter NONE, zlib level 6) so repeated
// runs produce byte-identical files.
ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

// 8-bit RGB <-> [3,H,W] float in [0,1] by /255.
Tensor image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor& t); // clamps to [0,1], rounds to 8 bits

// The 8 dihedral transforms: op = flip * 4 + quarter_turns. Rotations on
// non-square inputs are rejected.
Tensor dihedral(const Tensor& chw, int op);

} // namespace segsr
