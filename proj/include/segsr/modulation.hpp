#pragma once

#include "segsr/nn.hpp"

namespace segsr {

struct LmmConfig {
    int in_channels = 1;   // 1 for guidance maps; C_f for the feature-conditioned ablation
    int feat_channels = 60;
    int mid_channels = 0;  // 0 means same as feat_channels
    bool shared_stem = true;
    uint64_t seed = 31;
};

// Turns a conditioning map into spatial gain/bias fields and applies them to
// the layer-normalized feature: out = gain * LN(F) + bias. A fresh module is
// the neutral modulation (gain 1, bias 0), i.e. exactly LN(F).
class Modulator {
public:
    Modulator() = default;
    explicit Modulator(const LmmConfig& cfg);

    Tensor modulate(const Tensor& feature, const Tensor& map) const;

    void collect(ParamList& out, const std::string& prefix) const;

    const LmmConfig& config() const { return cfg_; }

    Conv2d stem_;      // in -> mid, 3x3
    Conv2d stem_bias_; // used only when shared_stem is false
    Conv2d gain_head_; // mid -> feat, 3x3, init to constant 1
    Conv2d bias_head_; // mid -> feat, 3x3, init to constant 0

private:
    LmmConfig cfg_;
};

} // namespace segsr
