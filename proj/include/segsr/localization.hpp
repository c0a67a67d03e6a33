#pragma once

#include "segsr/encoder.hpp"
#include "segsr/nn.hpp"

namespace segsr {

// Per-unit guidance maps at the LR spatial size; every value is a cosine
// similarity, so the [-1, 1] range survives the bilinear upsampling.
struct GuidanceMapSet {
    std::vector<Tensor> maps; // k tensors [1, H, W]
    int src_hc = 0;           // grid the cosines were computed on
    int src_wc = 0;
};

struct SlmConfig {
    int k = 6;
    int width = 32;       // must match the encoder width
    bool tied_fusion = true;
    uint64_t seed = 23;
};

struct FusionHead {
    Linear gate, value, out;
};

// Learnable per-unit descriptors fused with the global semantic feature.
// MetaNet refines the global descriptor, one self-attention layer lets the
// k+1 tokens interact, and a gated fusion emits one localization embedding
// per SR unit.
class DescriptorBank {
public:
    explicit DescriptorBank(const SlmConfig& cfg);

    // Linear(Linear(I_g') * p_g + Linear(I_g')) with I_g' = Linear(ReLU(Linear(I_g))).
    Tensor metanet_fuse(const Tensor& global_feat, const Tensor& global_descriptor) const;
    Tensor metanet_fuse(const Tensor& global_feat) const {
        return metanet_fuse(global_feat, global_desc_);
    }

    // Self-attention over [p_g', p_1..p_k]; returns (p_g*, [k, C]).
    std::pair<Tensor, Tensor> interact(const Tensor& global_fused) const;
    std::pair<Tensor, Tensor> interact(const Tensor& global_fused, const Tensor& unit_descriptors) const;

    // Linear(Sigmoid(Linear(p_i*)) * Linear(p_g*)) using unit i's fusion head.
    Tensor gated_fuse(const Tensor& unit_refined, const Tensor& global_refined, int unit = 0) const;

    GuidanceMapSet localize(const SemanticFeatures& features, int out_h, int out_w) const;

    void collect(ParamList& out, const std::string& prefix) const;

    int unit_count() const { return cfg_.k; }
    int width() const { return cfg_.width; }

    // exposed for tests that pin weights by hand and for descriptor permutation checks
    Tensor unit_desc_;   // [k, C]
    Tensor global_desc_; // [1, C]
    Linear mn_in_, mn_hidden_;            // the 2-layer MLP producing I_g'
    Linear mn_gate_, mn_add_, mn_out_;    // the three heads of the fuse
    Tensor attn_wq_, attn_wk_, attn_wv_;  // [C, C]
    std::vector<FusionHead> fusion_;      // size 1 when tied, k otherwise

private:
    SlmConfig cfg_;
};

// Cosine similarity of each embedding row against every cell of the local
// grid, then bilinear upsampling to (out_h, out_w). With eps_guard the norms
// are sqrt(sum^2 + 1e-8); without it a zero-norm side raises an error.
GuidanceMapSet guidance_maps(const Tensor& embeddings, const Tensor& local_feat, int hc, int wc,
                             int out_h, int out_w, bool eps_guard = true);

} // namespace segsr
