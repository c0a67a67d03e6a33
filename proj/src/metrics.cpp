#include "segsr/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

using nlohmann::json;

namespace segsr {

double psnr(const Tensor& pred, const Tensor& target, double max_val) {
    check(pred.shape() == target.shape(), "psnr: shape mismatch");
    check(max_val > 0.0, "psnr: max_val must be positive");
    double mse = 0.0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        double d = pred.data()[i] - target.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(pred.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(size);
    double sum = 0.0;
    int half = size / 2;
    for (int i = 0; i < size; ++i) {
        double d = i - half;
        w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// separable valid-mode Gaussian filter of a [H,W] plane
std::vector<double> gauss_filter(const double* src, int h, int w, const std::vector<double>& win,
                                 int& oh, int& ow) {
    const int k = static_cast<int>(win.size());
    ow = w - k + 1;
    oh = h - k + 1;
    std::vector<double> mid(static_cast<size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += win[t] * src[static_cast<int64_t>(y) * w + x + t];
            mid[static_cast<int64_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += win[t] * mid[static_cast<int64_t>(y + t) * ow + x];
            out[static_cast<int64_t>(y) * ow + x] = acc;
        }
    return out;
}

} // namespace

double ssim(const Tensor& pred, const Tensor& target) {
    check(pred.shape() == target.shape(), "ssim: shape mismatch");
    check(pred.rank() == 3, "ssim: [C,H,W] expected");
    const int c = pred.dim(0), h = pred.dim(1), w = pred.dim(2);
    constexpr int kWin = 11;
    if (h < kWin || w < kWin)
        fail("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
             " is smaller than the 11x11 window");
    const std::vector<double> win = gaussian_window(kWin, 1.5);
    constexpr double L = 1.0;
    const double c1 = (0.01 * L) * (0.01 * L);
    const double c2 = (0.03 * L) * (0.03 * L);

    const int64_t hw = static_cast<int64_t>(h) * w;
    double total = 0.0;
    for (int ch = 0; ch < c; ++ch) {
        const double* a = pred.data() + ch * hw;
        const double* b = target.data() + ch * hw;
        std::vector<double> aa(hw), bb(hw), ab(hw);
        for (int64_t i = 0; i < hw; ++i) {
            aa[i] = a[i] * a[i];
            bb[i] = b[i] * b[i];
            ab[i] = a[i] * b[i];
        }
        int oh, ow;
        std::vector<double> mu_a = gauss_filter(a, h, w, win, oh, ow);
        std::vector<double> mu_b = gauss_filter(b, h, w, win, oh, ow);
        std::vector<double> e_aa = gauss_filter(aa.data(), h, w, win, oh, ow);
        std::vector<double> e_bb = gauss_filter(bb.data(), h, w, win, oh, ow);
        std::vector<double> e_ab = gauss_filter(ab.data(), h, w, win, oh, ow);
        double acc = 0.0;
        for (int64_t i = 0; i < static_cast<int64_t>(oh) * ow; ++i) {
            double ma = mu_a[i], mb = mu_b[i];
            double va = e_aa[i] - ma * ma;
            double vb = e_bb[i] - mb * mb;
            double cov = e_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / (static_cast<double>(oh) * ow);
    }
    return total / c;
}

Tensor rgb_to_luma(const Tensor& rgb) {
    check(rgb.rank() == 3 && rgb.dim(0) == 3, "rgb_to_luma: [3,H,W] expected");
    const int h = rgb.dim(1), w = rgb.dim(2);
    const int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<double> y(hw);
    for (int64_t i = 0; i < hw; ++i)
        y[i] = (65.481 * rgb.data()[i] + 128.553 * rgb.data()[hw + i] +
                24.966 * rgb.data()[2 * hw + i] + 16.0) /
               255.0;
    return Tensor::from_data({1, h, w}, std::move(y));
}

// ---------------------------------------------------------------------------
// LPIPS
// ---------------------------------------------------------------------------

StubFeatureNet::StubFeatureNet(uint64_t seed) {
    Rng rng(seed);
    w1_ = Tensor::randn({6, 3, 3, 3}, rng, 0.3);
    b1_ = Tensor::zeros({6});
    w2_ = Tensor::randn({8, 6, 3, 3}, rng, 0.3);
    b2_ = Tensor::zeros({8});
    weights_.resize(2);
    weights_[0].resize(6);
    weights_[1].resize(8);
    for (auto& wl : weights_)
        for (double& v : wl) v = rng.uniform(0.1, 1.0);
}

std::vector<Tensor> StubFeatureNet::features(const Tensor& img) const {
    NoGradGuard ng;
    Tensor f1 = relu(conv2d(img, w1_, b1_, 1, 1));
    Tensor f2 = relu(conv2d(f1, w2_, b2_, 2, 1));
    return {f1, f2};
}

FileFeatureNet::FileFeatureNet(const std::string& path) {
    Container c = Container::load(path);
    for (int i = 0;; ++i) {
        std::string base = "layers." + std::to_string(i);
        if (!c.has(base + ".weight")) break;
        Layer l;
        const ContainerEntry& we = c.get(base + ".weight");
        l.w = Tensor::from_data(we.shape, we.f64);
        const ContainerEntry& be = c.get(base + ".bias");
        l.b = Tensor::from_data(be.shape, be.f64);
        if (c.has(base + ".stride")) l.stride = static_cast<int>(c.get(base + ".stride").f64.at(0));
        layers_.push_back(std::move(l));
        const ContainerEntry& lw = c.get("weights." + std::to_string(i));
        weights_.push_back(lw.f64);
    }
    check(!layers_.empty(), "FileFeatureNet: '" + path + "' holds no layers");
}

std::vector<Tensor> FileFeatureNet::features(const Tensor& img) const {
    NoGradGuard ng;
    std::vector<Tensor> out;
    Tensor x = img;
    for (const Layer& l : layers_) {
        x = relu(conv2d(x, l.w, l.b, l.stride, l.w.dim(2) / 2));
        out.push_back(x);
    }
    return out;
}

double lpips(const Tensor& pred, const Tensor& target, const FeatureNet& net) {
    check(pred.shape() == target.shape(), "lpips: shape mismatch");
    std::vector<Tensor> fa = net.features(pred);
    std::vector<Tensor> fb = net.features(target);
    const auto& wl = net.weights();
    check(wl.size() == fa.size(), "lpips: feature net supplies " + std::to_string(fa.size()) +
                                      " layers but " + std::to_string(wl.size()) + " weight vectors");

    double total = 0.0;
    for (size_t l = 0; l < fa.size(); ++l) {
        const Tensor& a = fa[l];
        const Tensor& b = fb[l];
        check(a.shape() == b.shape(), "lpips: layer shape mismatch");
        const int c = a.dim(0), h = a.dim(1), w = a.dim(2);
        check(static_cast<int>(wl[l].size()) == c, "lpips: weight vector length mismatch at layer " +
                                                       std::to_string(l));
        const int64_t hw = static_cast<int64_t>(h) * w;
        double layer_acc = 0.0;
        for (int64_t p = 0; p < hw; ++p) {
            double na = 0.0, nb = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                double va = a.data()[ch * hw + p];
                double vb = b.data()[ch * hw + p];
                na += va * va;
                nb += vb * vb;
            }
            na = std::sqrt(na + 1e-10);
            nb = std::sqrt(nb + 1e-10);
            double acc = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                double d = wl[l][ch] * (a.data()[ch * hw + p] / na - b.data()[ch * hw + p] / nb);
                acc += d * d;
            }
            layer_acc += acc;
        }
        total += layer_acc / static_cast<double>(hw);
    }
    return total;
}

// ---------------------------------------------------------------------------
// CLIPScore
// ---------------------------------------------------------------------------

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    check(a.size() == b.size() && !a.empty(), "cosine_similarity: length mismatch");
    double dot = 0.0, sa = 0.0, sb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        sa += a[i] * a[i];
        sb += b[i] * b[i];
    }
    // sqrt(sa*sb) (not sqrt(sa)*sqrt(sb)) so identical inputs give exactly 1
    double den = std::sqrt(sa * sb);
    return dot / std::max(den, 1e-8);
}

ClipScorer::ClipScorer(const EncoderConfig& cfg) {
    EncoderConfig frozen = cfg;
    frozen.targets = LoraTargets::None; // metric path never adapts
    enc_ = std::make_unique<SemanticEncoder>(frozen);
    if (cfg.source == "file") {
        Container c = Container::load(cfg.weights_path);
        if (c.has("encoder.proj")) {
            const ContainerEntry& e = c.get("encoder.proj");
            proj_ = Tensor::from_data(e.shape, e.f64);
        }
    }
}

std::vector<double> ClipScorer::embed(const Tensor& img) const {
    NoGradGuard ng;
    const EncoderConfig& cfg = enc_->config();
    int native = cfg.pretrain_grid * cfg.patch_size;
    Tensor resized = bilinear_resize(img, native, native, /*align_corners=*/false);
    Tensor g = enc_->encode(resized).global_feat;
    if (proj_) g = matmul(g, *proj_);
    return g.values();
}

double ClipScorer::score(const Tensor& pred, const Tensor& target) const {
    return cosine_similarity(embed(pred), embed(target));
}

// ---------------------------------------------------------------------------
// report aggregation
// ---------------------------------------------------------------------------

namespace {

void accumulate(MetricAggregate& agg, const ImageMetrics& m) {
    agg.count += 1;
    if (std::isinf(m.psnr)) {
        agg.psnr_inf += 1;
    } else {
        agg.psnr += m.psnr;
        agg.psnr_finite += 1;
    }
    agg.ssim += m.ssim;
    if (m.lpips) agg.lpips = agg.lpips.value_or(0.0) + *m.lpips;
    if (m.clipscore) agg.clipscore = agg.clipscore.value_or(0.0) + *m.clipscore;
}

void mean_out(MetricAggregate& agg) {
    if (agg.psnr_finite > 0) agg.psnr /= agg.psnr_finite;
    if (agg.count > 0) {
        agg.ssim /= agg.count;
        if (agg.lpips) *agg.lpips /= agg.count;
        if (agg.clipscore) *agg.clipscore /= agg.count;
    }
}

json agg_to_json(const MetricAggregate& a) {
    json j;
    j["count"] = a.count;
    j["psnr"] = a.psnr;
    j["psnr_finite_count"] = a.psnr_finite;
    j["psnr_inf_count"] = a.psnr_inf;
    j["ssim"] = a.ssim;
    if (a.lpips) j["lpips"] = *a.lpips;
    if (a.clipscore) j["clipscore"] = *a.clipscore;
    return j;
}

} // namespace

void MetricReport::finalize() {
    per_class.clear();
    overall = MetricAggregate{};
    for (const ImageMetrics& m : per_image) accumulate(per_class[m.class_name], m);
    for (auto& [name, agg] : per_class) mean_out(agg);

    if (class_balanced) {
        int n = 0;
        for (const auto& [name, agg] : per_class) {
            overall.psnr += agg.psnr;
            overall.ssim += agg.ssim;
            if (agg.lpips) overall.lpips = overall.lpips.value_or(0.0) + *agg.lpips;
            if (agg.clipscore) overall.clipscore = overall.clipscore.value_or(0.0) + *agg.clipscore;
            overall.count += agg.count;
            overall.psnr_finite += agg.psnr_finite;
            overall.psnr_inf += agg.psnr_inf;
            ++n;
        }
        if (n > 0) {
            overall.psnr /= n;
            overall.ssim /= n;
            if (overall.lpips) *overall.lpips /= n;
            if (overall.clipscore) *overall.clipscore /= n;
        }
    } else {
        for (const ImageMetrics& m : per_image) accumulate(overall, m);
        mean_out(overall);
    }
}

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "path,class,psnr,ssim,lpips,clipscore\n";
    for (const ImageMetrics& m : per_image) {
        os << m.path << "," << m.class_name << ",";
        if (std::isinf(m.psnr))
            os << "inf";
        else
            os << m.psnr;
        os << "," << m.ssim << ",";
        if (m.lpips) os << *m.lpips;
        os << ",";
        if (m.clipscore) os << *m.clipscore;
        os << "\n";
    }
    return os.str();
}

std::string MetricReport::to_json() const {
    json j;
    j["class_balanced"] = class_balanced;
    json cl = json::object();
    for (const auto& [name, agg] : per_class) cl[name] = agg_to_json(agg);
    j["classes"] = cl;
    j["overall"] = agg_to_json(overall);
    return j.dump(2) + "\n";
}

} // namespace segsr
