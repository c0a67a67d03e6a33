#include "segsr/bicubic.hpp"

#include <cmath>

namespace segsr {

namespace {

double cubic_kernel(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
    return 0.0;
}

} // namespace

ResizeTaps bicubic_taps(int in_size, int out_size) {
    check(in_size >= 1 && out_size >= 1, "bicubic: sizes must be positive");
    double scale = static_cast<double>(in_size) / out_size;
    double fscale = std::max(scale, 1.0); // kernel stretch when downscaling
    int support = static_cast<int>(std::ceil(2.0 * fscale)) * 2;

    ResizeTaps taps;
    taps.support = support;
    taps.first.resize(out_size);
    taps.weights.assign(static_cast<size_t>(out_size) * support, 0.0);
    for (int o = 0; o < out_size; ++o) {
        double center = (o + 0.5) * scale - 0.5;
        int first = static_cast<int>(std::floor(center - 2.0 * fscale)) + 1;
        taps.first[o] = first;
        double sum = 0.0;
        double* w = taps.weights.data() + static_cast<size_t>(o) * support;
        for (int t = 0; t < support; ++t) {
            w[t] = cubic_kernel((first + t - center) / fscale);
            sum += w[t];
        }
        for (int t = 0; t < support; ++t) w[t] /= sum;
    }
    return taps;
}

Tensor bicubic_resize(const Tensor& img, int out_h, int out_w) {
    check(img.rank() == 3, "bicubic_resize: [C,H,W] expected");
    check(out_h >= 1 && out_w >= 1, "bicubic_resize: target size must be positive");
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    ResizeTaps th = bicubic_taps(h, out_h);
    ResizeTaps tw = bicubic_taps(w, out_w);

    auto clampi = [](int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };

    // horizontal pass, then vertical
    std::vector<double> mid(static_cast<size_t>(c) * h * out_w);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = img.data() + static_cast<int64_t>(ch) * h * w;
        double* dst = mid.data() + static_cast<int64_t>(ch) * h * out_w;
        for (int y = 0; y < h; ++y)
            for (int ox = 0; ox < out_w; ++ox) {
                const double* wt = tw.weights.data() + static_cast<size_t>(ox) * tw.support;
                double acc = 0.0;
                for (int t = 0; t < tw.support; ++t)
                    acc += wt[t] * src[y * w + clampi(tw.first[ox] + t, w)];
                dst[static_cast<int64_t>(y) * out_w + ox] = acc;
            }
    }
    std::vector<double> out(static_cast<size_t>(c) * out_h * out_w);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = mid.data() + static_cast<int64_t>(ch) * h * out_w;
        double* dst = out.data() + static_cast<int64_t>(ch) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const double* wt = th.weights.data() + static_cast<size_t>(oy) * th.support;
            for (int ox = 0; ox < out_w; ++ox) {
                double acc = 0.0;
                for (int t = 0; t < th.support; ++t)
                    acc += wt[t] * src[static_cast<int64_t>(clampi(th.first[oy] + t, h)) * out_w + ox];
                dst[static_cast<int64_t>(oy) * out_w + ox] = acc;
            }
        }
    }
    return Tensor::from_data({c, out_h, out_w}, std::move(out));
}

} // namespace segsr
