#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "segsr/encoder.hpp"
#include "segsr/tensor.hpp"

namespace segsr {

// 10*log10(max^2 / MSE); +inf when the images are identical.
double psnr(const Tensor& pred, const Tensor& target, double max_val = 1.0);

// Mean local SSIM, 11x11 Gaussian window sigma 1.5, C1=(0.01L)^2, C2=(0.03L)^2,
// L = 1. Computed per channel on the valid region and averaged.
double ssim(const Tensor& pred, const Tensor& target);

// BT.601 luma of an RGB [0,1] tensor, as a [1,H,W] map.
Tensor rgb_to_luma(const Tensor& rgb);

// Feature backbone for LPIPS. Layers return [C_l, H_l, W_l] maps; weights()
// supplies one non-negative channel weight vector per layer.
class FeatureNet {
public:
    virtual ~FeatureNet() = default;
    virtual std::vector<Tensor> features(const Tensor& img) const = 0;
    virtual const std::vector<std::vector<double>>& weights() const = 0;
};

// Tiny seeded conv stack; enough structure for offline tests.
class StubFeatureNet : public FeatureNet {
public:
    explicit StubFeatureNet(uint64_t seed = 5);
    std::vector<Tensor> features(const Tensor& img) const override;
    const std::vector<std::vector<double>>& weights() const override { return weights_; }

private:
    Tensor w1_, b1_, w2_, b2_;
    std::vector<std::vector<double>> weights_;
};

// Conv stack loaded from a weight container (docs/formats.md).
class FileFeatureNet : public FeatureNet {
public:
    explicit FileFeatureNet(const std::string& path);
    std::vector<Tensor> features(const Tensor& img) const override;
    const std::vector<std::vector<double>>& weights() const override { return weights_; }

private:
    struct Layer {
        Tensor w, b;
        int stride = 1;
    };
    std::vector<Layer> layers_;
    std::vector<std::vector<double>> weights_;
};

// Sum over layers of spatially averaged squared differences of
// channel-normalized, weighted features.
double lpips(const Tensor& pred, const Tensor& target, const FeatureNet& net);

// Cosine similarity of frozen global embeddings. Inputs are resized to the
// encoder's native grid first; a projection tensor applies when the weight
// file ships one.
class ClipScorer {
public:
    explicit ClipScorer(const EncoderConfig& cfg);
    double score(const Tensor& pred, const Tensor& target) const;
    std::vector<double> embed(const Tensor& img) const;

private:
    std::unique_ptr<SemanticEncoder> enc_;
    std::optional<Tensor> proj_;
};

// epsilon-guarded cosine between two raw embedding vectors
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

struct ImageMetrics {
    std::string path;
    std::string class_name;
    double psnr = 0.0; // +inf possible
    double ssim = 0.0;
    std::optional<double> lpips;
    std::optional<double> clipscore;
};

struct MetricAggregate {
    double psnr = 0.0; // mean over finite values
    int psnr_finite = 0;
    int psnr_inf = 0;
    double ssim = 0.0;
    std::optional<double> lpips;
    std::optional<double> clipscore;
    int count = 0;
};

// Per-image rows plus per-class and overall aggregation. The overall row is
// the mean over images unless class_balanced, which averages class means.
struct MetricReport {
    std::vector<ImageMetrics> per_image;
    std::map<std::string, MetricAggregate> per_class;
    MetricAggregate overall;
    bool class_balanced = false;

    void finalize();
    std::string to_csv() const;
    std::string to_json() const;
};

} // namespace segsr
