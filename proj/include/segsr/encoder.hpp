#pragma once

#include <optional>
#include <string>

#include "segsr/container.hpp"
#include "segsr/nn.hpp"

namespace segsr {

// Which linear layers of the vision encoder carry low-rank adapters.
enum class LoraTargets { None, Attn, AttnFfn };

LoraTargets lora_targets_from_string(const std::string& s);
std::string to_string(LoraTargets t);

struct EncoderConfig {
    int patch_size = 16;
    int depth = 4;
    int width = 256;
    int heads = 4;
    int mlp_ratio = 4;
    int pretrain_grid = 8; // side of the positional table the encoder was built with

    // "stub" builds deterministic random frozen weights from stub_seed;
    // "file" loads a weight container from weights_path. A ViT-B/16
    // compatible profile is depth 12, width 768, heads 12, grid 14.
    std::string source = "stub";
    std::string weights_path;
    uint64_t stub_seed = 7;

    LoraTargets targets = LoraTargets::AttnFfn;
    int lora_rank = 32;
    uint64_t adapter_seed = 11;
};

// Global (class-token) plus local (patch-token) features from one image.
// local_feat rows are the H_c x W_c grid in row-major order.
struct SemanticFeatures {
    Tensor global_feat; // [1, C]
    Tensor local_feat;  // [hc*wc, C]
    int hc = 0;
    int wc = 0;
    int width() const { return global_feat.dim(1); }
};

struct EncoderBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    LoraLinear fc1, fc2;
};

// ViT-style image encoder with adapters on the attention projections and,
// optionally, the two MLP linears of every block. Frozen weights are
// f32-representable so weight files round-trip losslessly.
class SemanticEncoder {
public:
    explicit SemanticEncoder(const EncoderConfig& cfg);

    SemanticFeatures encode(const Tensor& image_up) const; // [3, H, W], values in [0,1]

    // Adapter factors only, in stable order.
    ParamList trainable_parameters() const;
    int adapter_count() const;

    // All tensors (frozen weights + adapters) under the given prefix.
    void collect(ParamList& out, const std::string& prefix) const;

    void save_weights(const std::string& path) const;
    void load_pretrained(const std::string& path);

    uint64_t frozen_hash() const;

    const EncoderConfig& config() const { return cfg_; }
    int width() const { return cfg_.width; }
    int patch_size() const { return cfg_.patch_size; }

private:
    void build(Rng& frozen_rng);

    EncoderConfig cfg_;
    Tensor norm_mean_, norm_std_; // [3]
    Conv2d patch_embed_;          // 3 -> C, k = stride = patch, no adapter
    Tensor class_token_;          // [1, C]
    Tensor pos_table_;            // [grid*grid + 1, C], row 0 is the class position
    LayerNorm ln_pre_, ln_post_;
    std::vector<EncoderBlock> blocks_;
};

// Bilinear resampling of the learned positional grid (class row untouched).
// table: [P*P + 1, C]; returns [hc*wc + 1, C].
Tensor interpolate_positions(const Tensor& table, int grid, int hc, int wc);

} // namespace segsr
