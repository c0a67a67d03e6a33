#pragma once

#include "segsr/tensor.hpp"

namespace segsr {

// Separable cubic convolution resize, a = -0.5 (Catmull-Rom family).
// Half-pixel sample centers, coordinates clamped at the edges, tap weights
// normalized to unit sum. When downscaling, the kernel is stretched by the
// scale factor so it acts as an antialiasing filter. This is the repo's
// single definition of "bicubic"; the degradation pipeline and the f_up
// baselines both go through it. Output values are not range-clamped.
Tensor bicubic_resize(const Tensor& img, int out_h, int out_w);

// One axis worth of taps, exposed so tests can check the unit-sum invariant.
struct ResizeTaps {
    std::vector<int> first;       // first source index per output sample
    std::vector<double> weights;  // taps per output sample, row-major
    int support = 0;              // taps per sample
};
ResizeTaps bicubic_taps(int in_size, int out_size);

} // namespace segsr
