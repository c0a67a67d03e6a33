#include "segsr/modulation.hpp"

namespace segsr {

namespace {
constexpr double kLnEps = 1e-5;
}

Modulator::Modulator(const LmmConfig& cfg) : cfg_(cfg) {
    if (cfg_.mid_channels == 0) cfg_.mid_channels = cfg_.feat_channels;
    Rng rng(cfg_.seed);
    stem_ = Conv2d(cfg_.in_channels, cfg_.mid_channels, 3, 1, 1, rng);
    if (!cfg_.shared_stem) stem_bias_ = Conv2d(cfg_.in_channels, cfg_.mid_channels, 3, 1, 1, rng);
    gain_head_ = Conv2d(cfg_.mid_channels, cfg_.feat_channels, 3, 1, 1, rng, Conv2d::Init::Zero);
    for (auto& b : gain_head_.bias.values()) b = 1.0;
    bias_head_ = Conv2d(cfg_.mid_channels, cfg_.feat_channels, 3, 1, 1, rng, Conv2d::Init::Zero);
}

Tensor Modulator::modulate(const Tensor& feature, const Tensor& map) const {
    check(feature.rank() == 3 && map.rank() == 3, "modulate: [C,H,W] inputs expected");
    check(map.dim(0) == cfg_.in_channels,
          "modulate: map has " + std::to_string(map.dim(0)) + " channels, modulator expects " +
              std::to_string(cfg_.in_channels));
    if (feature.dim(1) != map.dim(1) || feature.dim(2) != map.dim(2))
        fail("modulate: spatial mismatch, feature " + std::to_string(feature.dim(1)) + "x" +
             std::to_string(feature.dim(2)) + " vs map " + std::to_string(map.dim(1)) + "x" +
             std::to_string(map.dim(2)));

    Tensor a_gain = relu(stem_.forward(map));
    Tensor a_bias = cfg_.shared_stem ? a_gain : relu(stem_bias_.forward(map));
    Tensor gain = gain_head_.forward(a_gain);
    Tensor bias = bias_head_.forward(a_bias);
    Tensor normed = layernorm_chw(feature, kLnEps);
    return add(mul(gain, normed), bias);
}

void Modulator::collect(ParamList& out, const std::string& prefix) const {
    stem_.collect(out, prefix + ".stem", true);
    if (!cfg_.shared_stem) stem_bias_.collect(out, prefix + ".stem_bias", true);
    gain_head_.collect(out, prefix + ".gain", true);
    bias_head_.collect(out, prefix + ".bias", true);
}

} // namespace segsr
