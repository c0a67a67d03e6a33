#pragma once

// Shared test utilities: finite-difference gradient checking, scalar oracles
// independent of the library's vectorized paths, synthetic image fixtures,
// and temp-dir plumbing.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "segsr/image.hpp"
#include "segsr/rng.hpp"
#include "segsr/tensor.hpp"

namespace testutil {

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

struct FdReport {
    double max_rel_err = 0.0;
    int checked = 0;
};

inline double rel_err(double a, double b) {
    double denom = std::max(std::abs(a), std::abs(b));
    if (denom < 1e-8) return 0.0; // both effectively zero
    return std::abs(a - b) / denom;
}

// Central finite differences against the analytic gradients of `forward`,
// which must rebuild its graph from the parameters' current values on every
// call. Checks up to max_entries entries per parameter (all when <= 0).
inline FdReport fd_check(const std::function<segsr::Tensor()>& forward,
                         std::vector<segsr::Tensor> params, double h = 1e-3,
                         int max_entries = 0, uint64_t select_seed = 99) {
    using segsr::Tensor;
    for (Tensor& p : params) p.clear_grad();
    Tensor out = forward();
    out.backward();
    std::vector<std::vector<double>> analytic;
    for (Tensor& p : params)
        analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0));

    segsr::Rng sel(select_seed);
    FdReport rep;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        int64_t n = p.numel();
        std::vector<int64_t> idx;
        if (max_entries <= 0 || n <= max_entries) {
            idx.resize(n);
            for (int64_t i = 0; i < n; ++i) idx[i] = i;
        } else {
            for (int e = 0; e < max_entries; ++e) idx.push_back(static_cast<int64_t>(sel.below(n)));
        }
        for (int64_t i : idx) {
            double saved = p.data()[i];
            p.data()[i] = saved + h;
            double up = forward().item();
            p.data()[i] = saved - h;
            double dn = forward().item();
            p.data()[i] = saved;
            double fd = (up - dn) / (2.0 * h);
            rep.max_rel_err = std::max(rep.max_rel_err, rel_err(analytic[pi][i], fd));
            ++rep.checked;
        }
    }
    return rep;
}

// Scalar readout with fixed random weights; generic direction for FD checks.
inline segsr::Tensor readout(const segsr::Tensor& t, uint64_t seed = 3) {
    segsr::Rng rng(seed);
    std::vector<double> w(t.numel());
    for (double& v : w) v = rng.uniform(-1.0, 1.0);
    segsr::Tensor weights = segsr::Tensor::from_data(t.shape(), std::move(w));
    return segsr::mean_all(segsr::mul(t, weights));
}

// ---------------------------------------------------------------------------
// synthetic fixtures
// ---------------------------------------------------------------------------

// Deterministic image with smooth fields, sharp edges and texture.
inline segsr::Tensor synth_image(int h, int w, uint64_t seed) {
    segsr::Rng rng(seed);
    double fx = rng.uniform(1.0, 4.0), fy = rng.uniform(1.0, 4.0);
    double cx = rng.uniform(0.2, 0.8) * w, cy = rng.uniform(0.2, 0.8) * h;
    double r = rng.uniform(0.15, 0.35) * std::min(h, w);
    int bx0 = static_cast<int>(rng.below(w / 2)), by0 = static_cast<int>(rng.below(h / 2));
    int bw = 1 + static_cast<int>(rng.below(w / 2)), bh = 1 + static_cast<int>(rng.below(h / 2));
    double stripes = rng.uniform(4.0, 9.0);

    std::vector<double> v(static_cast<size_t>(3) * h * w);
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double u = static_cast<double>(x) / w, t = static_cast<double>(y) / h;
            double base = 0.5 + 0.25 * std::sin(2 * M_PI * fx * u) * std::cos(2 * M_PI * fy * t);
            double circle = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r ? 0.3 : 0.0;
            double box = (x >= bx0 && x < bx0 + bw && y >= by0 && y < by0 + bh) ? -0.2 : 0.0;
            double stripe = std::fmod(stripes * (u + t), 1.0) < 0.5 ? 0.08 : -0.08;
            double g[3] = {base + circle + box, base + 0.5 * circle + stripe,
                           base - box + 0.5 * stripe};
            for (int c = 0; c < 3; ++c) {
                double val = g[c] + 0.02 * rng.normal();
                v[c * hw + y * static_cast<int64_t>(w) + x] = std::min(std::max(val, 0.0), 1.0);
            }
        }
    return segsr::Tensor::from_data({3, h, w}, std::move(v));
}

inline segsr::Tensor random_tensor(const segsr::Shape& s, segsr::Rng& rng, double lo = -1.0,
                                   double hi = 1.0, bool rg = false) {
    std::vector<double> v(segsr::numel_of(s));
    for (double& x : v) x = rng.uniform(lo, hi);
    return segsr::Tensor::from_data(s, std::move(v), rg);
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("segsr_test_" + tag + "_" + std::to_string(counter()++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string str() const { return path_.string(); }

private:
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::filesystem::path path_;
};

inline void write_synth_png(const std::filesystem::path& p, int h, int w, uint64_t seed) {
    segsr::write_png(p.string(), segsr::tensor_to_image(synth_image(h, w, seed)));
}

inline bool same_file_bytes(const std::string& a, const std::string& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return fa.good() == fb.good() && sa == sb;
}

// ---------------------------------------------------------------------------
// scalar metric oracles (independent brute-force implementations)
// ---------------------------------------------------------------------------

inline double psnr_oracle(const segsr::Tensor& a, const segsr::Tensor& b, double max_val = 1.0) {
    long double acc = 0.0L;
    for (int64_t i = 0; i < a.numel(); ++i) {
        long double d = static_cast<long double>(a.data()[i]) - b.data()[i];
        acc += d * d;
    }
    long double mse = acc / a.numel();
    if (mse == 0.0L) return std::numeric_limits<double>::infinity();
    return static_cast<double>(10.0L * std::log10(static_cast<long double>(max_val) * max_val / mse));
}

// direct 2-D sliding window, no separability tricks
inline double ssim_oracle(const segsr::Tensor& a, const segsr::Tensor& b) {
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
    const int k = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    std::vector<double> win(static_cast<size_t>(k) * k);
    double sum = 0.0;
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
            double dy = y - k / 2, dx = x - k / 2;
            win[y * k + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            sum += win[y * k + x];
        }
    for (double& v : win) v /= sum;

    const int64_t hw = static_cast<int64_t>(h) * w;
    double total = 0.0;
    for (int ch = 0; ch < c; ++ch) {
        const double* pa = a.data() + ch * hw;
        const double* pb = b.data() + ch * hw;
        double acc = 0.0;
        int count = 0;
        for (int y = 0; y + k <= h; ++y)
            for (int x = 0; x + k <= w; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int wy = 0; wy < k; ++wy)
                    for (int wx = 0; wx < k; ++wx) {
                        double wgt = win[wy * k + wx];
                        double va = pa[(y + wy) * static_cast<int64_t>(w) + x + wx];
                        double vb = pb[(y + wy) * static_cast<int64_t>(w) + x + wx];
                        ma += wgt * va;
                        mb += wgt * vb;
                        saa += wgt * va * va;
                        sbb += wgt * vb * vb;
                        sab += wgt * va * vb;
                    }
                double va_ = saa - ma * ma, vb_ = sbb - mb * mb, cov = sab - ma * mb;
                acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va_ + vb_ + c2));
                ++count;
            }
        total += acc / count;
    }
    return total / c;
}

// cubic kernel transcription for the bicubic oracle
inline double cubic_w(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return (a + 2) * t * t * t - (a + 3) * t * t + 1;
    if (t < 2.0) return a * t * t * t - 5 * a * t * t + 8 * a * t - 4 * a;
    return 0.0;
}

// direct per-pixel 2-D evaluation (not separable) of the documented kernel
inline segsr::Tensor bicubic_oracle(const segsr::Tensor& img, int oh, int ow) {
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    auto clampi = [](int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); };
    std::vector<double> out(static_cast<size_t>(c) * oh * ow);
    double sy = static_cast<double>(h) / oh, sx = static_cast<double>(w) / ow;
    double fy = std::max(sy, 1.0), fx = std::max(sx, 1.0);
    int ry = static_cast<int>(std::ceil(2 * fy)), rx = static_cast<int>(std::ceil(2 * fx));
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double cy = (oy + 0.5) * sy - 0.5, cx = (ox + 0.5) * sx - 0.5;
                int y0 = static_cast<int>(std::floor(cy - 2 * fy)) + 1;
                int x0 = static_cast<int>(std::floor(cx - 2 * fx)) + 1;
                double acc = 0.0, wsum = 0.0;
                for (int ty = 0; ty < 2 * ry; ++ty)
                    for (int tx = 0; tx < 2 * rx; ++tx) {
                        double wgt = cubic_w((y0 + ty - cy) / fy) * cubic_w((x0 + tx - cx) / fx);
                        acc += wgt * img.data()[(static_cast<int64_t>(ch) * h +
                                                 clampi(y0 + ty, h)) * w + clampi(x0 + tx, w)];
                        wsum += wgt;
                    }
                out[(static_cast<int64_t>(ch) * oh + oy) * ow + ox] = acc / wsum;
            }
    return segsr::Tensor::from_data({c, oh, ow}, std::move(out));
}

} // namespace testutil
