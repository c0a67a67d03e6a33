#pragma once

#include <memory>
#include <optional>

#include "segsr/localization.hpp"
#include "segsr/modulation.hpp"

namespace segsr {

enum class UnitStyle { Residual, ChannelAttention, HybridAttention };
enum class AblationVariant { Baseline, SfemAdditive, SfemLmm, Full };

UnitStyle unit_style_from_string(const std::string& s);
std::string to_string(UnitStyle s);
AblationVariant variant_from_string(const std::string& s);
std::string to_string(AblationVariant v);

// Shape-preserving feature block group. Forward must map [C,H,W] to the same
// shape deterministically.
class SrUnit {
public:
    virtual ~SrUnit() = default;
    virtual Tensor forward(const Tensor& x) const = 0;
    virtual void collect(ParamList& out, const std::string& prefix) const = 0;
};

struct SrNetConfig {
    int scale = 4; // 2 or 4
    int k = 6;
    UnitStyle style = UnitStyle::HybridAttention;
    int blocks_total = 12;     // residual blocks / CA groups / hybrid blocks across all units
    int blocks_per_group = 2;  // RCABs inside one channel-attention group
    int feat_channels = 60;
    int window = 8;
    int attn_heads = 2;
    bool shift_windows = false;
    int mlp_ratio = 2;
    int ca_reduction = 16;
    double cab_scale = 0.01;
    uint64_t seed = 101;
};

std::vector<std::unique_ptr<SrUnit>> build_units(UnitStyle style, int total_blocks, int k, int c_f,
                                                 const SrNetConfig& cfg, Rng& rng);

// Optional hook into forward() internals for instrumentation tests and
// guidance-map export.
struct ForwardTrace {
    Tensor f_shallow;
    Tensor f_k_out;
    Tensor upsampler_in;
    GuidanceMapSet maps;
};

struct ModelConfig {
    SrNetConfig srnet;
    EncoderConfig encoder;
    uint64_t slm_seed = 23;
    uint64_t lmm_seed = 31;
    bool lmm_shared_stem = true;
    bool slm_tied_fusion = true;
    AblationVariant variant = AblationVariant::Full;
};

// Full SeG-SR model: shallow conv, k SR units each followed by modulation,
// global residual, and pixel-shuffle reconstruction. Ablation variants wire
// the semantic branch differently:
//   Baseline      no semantic branch at all
//   SfemAdditive  projected local features added to each unit output
//   SfemLmm       projected local features drive the modulators
//   Full          guidance maps from the descriptor bank drive the modulators
class SegSrModel {
public:
    explicit SegSrModel(const ModelConfig& cfg);

    Tensor forward(const Tensor& lr_image, ForwardTrace* trace = nullptr) const;

    ParamList named_parameters() const; // trainable + frozen, stable order
    int64_t trainable_param_count() const;
    int64_t total_param_count() const;
    uint64_t frozen_hash() const;

    const ModelConfig& config() const { return cfg_; }
    const SemanticEncoder* encoder() const { return encoder_ ? encoder_.get() : nullptr; }
    const DescriptorBank* bank() const { return bank_ ? bank_.get() : nullptr; }
    DescriptorBank* bank() { return bank_ ? bank_.get() : nullptr; }

    // instrumentation access for tests and ablation tooling
    const std::vector<std::unique_ptr<SrUnit>>& units() const { return units_; }
    std::vector<Modulator>& modulators() { return modulators_; }
    const Conv2d& shallow_conv() const { return shallow_; }
    const std::vector<Conv2d>& up_convs() const { return up_convs_; }
    const Conv2d& final_conv() const { return final_conv_; }

private:
    ModelConfig cfg_;
    std::unique_ptr<SemanticEncoder> encoder_;
    std::unique_ptr<DescriptorBank> bank_;
    std::vector<Linear> sfem_proj_; // per-unit C -> C_f projections (SFEM variants)
    std::vector<std::unique_ptr<SrUnit>> units_;
    std::vector<Modulator> modulators_;
    Conv2d shallow_;
    std::vector<Conv2d> up_convs_; // one conv per x2 pixel-shuffle stage
    Conv2d final_conv_;
};

// Mean absolute difference over all elements.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

} // namespace segsr
