#include "segsr/srnet.hpp"

namespace segsr {

UnitStyle unit_style_from_string(const std::string& s) {
    if (s == "residual") return UnitStyle::Residual;
    if (s == "channel_attention") return UnitStyle::ChannelAttention;
    if (s == "hybrid_attention") return UnitStyle::HybridAttention;
    fail("srnet: unknown unit style '" + s +
         "' (expected residual | channel_attention | hybrid_attention)");
}

std::string to_string(UnitStyle s) {
    switch (s) {
        case UnitStyle::Residual: return "residual";
        case UnitStyle::ChannelAttention: return "channel_attention";
        case UnitStyle::HybridAttention: return "hybrid_attention";
    }
    return "residual";
}

AblationVariant variant_from_string(const std::string& s) {
    if (s == "baseline") return AblationVariant::Baseline;
    if (s == "sfem_additive") return AblationVariant::SfemAdditive;
    if (s == "sfem_lmm") return AblationVariant::SfemLmm;
    if (s == "full") return AblationVariant::Full;
    fail("srnet: unknown ablation variant '" + s +
         "' (expected baseline | sfem_additive | sfem_lmm | full)");
}

std::string to_string(AblationVariant v) {
    switch (v) {
        case AblationVariant::Baseline: return "baseline";
        case AblationVariant::SfemAdditive: return "sfem_additive";
        case AblationVariant::SfemLmm: return "sfem_lmm";
        case AblationVariant::Full: return "full";
    }
    return "full";
}

namespace {

// Squeeze-excite style channel attention shared by the RCAB and CAB blocks.
struct ChannelGate {
    Linear fc1, fc2;

    ChannelGate() = default;
    ChannelGate(int c, int reduction, Rng& rng) {
        int mid = std::max(1, c / reduction);
        fc1 = Linear(c, mid, rng, std::sqrt(2.0 / c));
        fc2 = Linear(mid, c, rng, std::sqrt(2.0 / mid));
    }

    Tensor apply(const Tensor& x) const {
        Tensor s = sigmoid(fc2.forward(relu(fc1.forward(global_avg_pool(x)))));
        return mul_channels(x, s);
    }

    void collect(ParamList& out, const std::string& prefix) const {
        fc1.collect(out, prefix + ".fc1", true);
        fc2.collect(out, prefix + ".fc2", true);
    }
};

// Plain residual block: x + conv(relu(conv(x))), no normalization inside.
struct ResBlock {
    Conv2d conv1, conv2;

    ResBlock() = default;
    ResBlock(int c, Rng& rng) : conv1(c, c, 3, 1, 1, rng), conv2(c, c, 3, 1, 1, rng) {}

    Tensor forward(const Tensor& x) const { return add(x, conv2.forward(relu(conv1.forward(x)))); }

    void collect(ParamList& out, const std::string& prefix) const {
        conv1.collect(out, prefix + ".conv1", true);
        conv2.collect(out, prefix + ".conv2", true);
    }
};

class ResidualUnit : public SrUnit {
public:
    ResidualUnit(int c, int n_blocks, Rng& rng) {
        for (int i = 0; i < n_blocks; ++i) blocks_.emplace_back(c, rng);
    }

    Tensor forward(const Tensor& x) const override {
        Tensor y = x;
        for (const ResBlock& b : blocks_) y = b.forward(y);
        return y;
    }

    void collect(ParamList& out, const std::string& prefix) const override {
        for (size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect(out, prefix + ".blocks." + std::to_string(i));
    }

private:
    std::vector<ResBlock> blocks_;
};

// Residual channel-attention block.
struct Rcab {
    Conv2d conv1, conv2;
    ChannelGate ca;

    Rcab() = default;
    Rcab(int c, int reduction, Rng& rng)
        : conv1(c, c, 3, 1, 1, rng), conv2(c, c, 3, 1, 1, rng), ca(c, reduction, rng) {}

    Tensor forward(const Tensor& x) const {
        Tensor r = conv2.forward(relu(conv1.forward(x)));
        return add(x, ca.apply(r));
    }

    void collect(ParamList& out, const std::string& prefix) const {
        conv1.collect(out, prefix + ".conv1", true);
        conv2.collect(out, prefix + ".conv2", true);
        ca.collect(out, prefix + ".ca");
    }
};

// A group of RCABs with a trailing conv and a group-level skip.
struct RcabGroup {
    std::vector<Rcab> blocks;
    Conv2d tail;

    RcabGroup() = default;
    RcabGroup(int c, int n_blocks, int reduction, Rng& rng) : tail(c, c, 3, 1, 1, rng) {
        for (int i = 0; i < n_blocks; ++i) blocks.emplace_back(c, reduction, rng);
    }

    Tensor forward(const Tensor& x) const {
        Tensor y = x;
        for (const Rcab& b : blocks) y = b.forward(y);
        return add(x, tail.forward(y));
    }

    void collect(ParamList& out, const std::string& prefix) const {
        for (size_t i = 0; i < blocks.size(); ++i)
            blocks[i].collect(out, prefix + ".blocks." + std::to_string(i));
        tail.collect(out, prefix + ".tail", true);
    }
};

class ChannelAttentionUnit : public SrUnit {
public:
    ChannelAttentionUnit(int c, int n_groups, int blocks_per_group, int reduction, Rng& rng) {
        for (int i = 0; i < n_groups; ++i) groups_.emplace_back(c, blocks_per_group, reduction, rng);
    }

    Tensor forward(const Tensor& x) const override {
        Tensor y = x;
        for (const RcabGroup& g : groups_) y = g.forward(y);
        return y;
    }

    void collect(ParamList& out, const std::string& prefix) const override {
        for (size_t i = 0; i < groups_.size(); ++i)
            groups_[i].collect(out, prefix + ".groups." + std::to_string(i));
    }

private:
    std::vector<RcabGroup> groups_;
};

// Self-attention inside non-overlapping spatial windows. Maps that are not
// window-divisible are zero-padded for the partition and cropped back.
struct WindowAttention {
    Linear q, k, v, proj;
    int heads = 1;
    int window = 8;

    WindowAttention() = default;
    WindowAttention(int c, int heads_, int window_, Rng& rng) : heads(heads_), window(window_) {
        q = Linear(c, c, rng, 0.02);
        k = Linear(c, c, rng, 0.02);
        v = Linear(c, c, rng, 0.02);
        proj = Linear(c, c, rng, 0.02);
    }

    Tensor forward(const Tensor& x) const {
        int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        int ph = (window - h % window) % window;
        int pw = (window - w % window) % window;
        Tensor padded = (ph || pw) ? pad2d(x, 0, ph, 0, pw) : x;
        Tensor tokens = window_partition(padded, window); // [nWin, T, C]
        int dh = c / heads;
        double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor qq = q.forward(tokens), kk = k.forward(tokens), vv = v.forward(tokens);
        std::vector<Tensor> outs;
        for (int hd = 0; hd < heads; ++hd) {
            Tensor qh = slice_cols(qq, hd * dh, (hd + 1) * dh);
            Tensor kh = slice_cols(kk, hd * dh, (hd + 1) * dh);
            Tensor vh = slice_cols(vv, hd * dh, (hd + 1) * dh);
            Tensor probs = softmax_lastdim(mul_scalar(bmm(qh, kh, true), scale));
            outs.push_back(bmm(probs, vh));
        }
        Tensor mixed = heads == 1 ? outs[0] : concat_cols(outs);
        Tensor merged = window_merge(proj.forward(mixed), c, h + ph, w + pw, window);
        return (ph || pw) ? crop2d(merged, 0, ph, 0, pw) : merged;
    }

    void collect(ParamList& out, const std::string& prefix) const {
        q.collect(out, prefix + ".q", true);
        k.collect(out, prefix + ".k", true);
        v.collect(out, prefix + ".v", true);
        proj.collect(out, prefix + ".proj", true);
    }
};

// Convolutional attention branch that runs beside the windowed attention.
struct Cab {
    Conv2d conv1, conv2;
    ChannelGate ca;

    Cab() = default;
    Cab(int c, int reduction, Rng& rng)
        : conv1(c, std::max(1, c / 3), 3, 1, 1, rng), conv2(std::max(1, c / 3), c, 3, 1, 1, rng),
          ca(c, reduction, rng) {}

    Tensor forward(const Tensor& x) const {
        return ca.apply(conv2.forward(gelu(conv1.forward(x))));
    }

    void collect(ParamList& out, const std::string& prefix) const {
        conv1.collect(out, prefix + ".conv1", true);
        conv2.collect(out, prefix + ".conv2", true);
        ca.collect(out, prefix + ".ca");
    }
};

// Simplified hybrid block: windowed self-attention plus a scaled channel
// attention branch on the same normalized input, then a pointwise MLP.
struct HybridBlock {
    WindowAttention wsa;
    Cab cab;
    Conv2d mlp1, mlp2; // 1x1 convs
    double cab_scale = 0.01;
    bool shifted = false;

    HybridBlock() = default;
    HybridBlock(int c, const SrNetConfig& cfg, bool shifted_, Rng& rng)
        : wsa(c, cfg.attn_heads, cfg.window, rng), cab(c, cfg.ca_reduction, rng),
          mlp1(c, c * cfg.mlp_ratio, 1, 1, 0, rng), mlp2(c * cfg.mlp_ratio, c, 1, 1, 0, rng),
          cab_scale(cfg.cab_scale), shifted(shifted_) {}

    Tensor forward(const Tensor& x) const {
        Tensor t = layernorm_chw(x, 1e-5);
        Tensor attn_in = shifted ? roll2d(t, -wsa.window / 2, -wsa.window / 2) : t;
        Tensor a = wsa.forward(attn_in);
        if (shifted) a = roll2d(a, wsa.window / 2, wsa.window / 2);
        Tensor y = add(add(x, a), mul_scalar(cab.forward(t), cab_scale));
        Tensor u = layernorm_chw(y, 1e-5);
        return add(y, mlp2.forward(gelu(mlp1.forward(u))));
    }

    void collect(ParamList& out, const std::string& prefix) const {
        wsa.collect(out, prefix + ".wsa");
        cab.collect(out, prefix + ".cab");
        mlp1.collect(out, prefix + ".mlp1", true);
        mlp2.collect(out, prefix + ".mlp2", true);
    }
};

class HybridUnit : public SrUnit {
public:
    HybridUnit(int c, int n_blocks, const SrNetConfig& cfg, Rng& rng) : tail_(c, c, 3, 1, 1, rng) {
        for (int i = 0; i < n_blocks; ++i)
            blocks_.emplace_back(c, cfg, cfg.shift_windows && (i % 2 == 1), rng);
    }

    Tensor forward(const Tensor& x) const override {
        Tensor y = x;
        for (const HybridBlock& b : blocks_) y = b.forward(y);
        return add(x, tail_.forward(y));
    }

    void collect(ParamList& out, const std::string& prefix) const override {
        for (size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect(out, prefix + ".blocks." + std::to_string(i));
        tail_.collect(out, prefix + ".tail", true);
    }

private:
    std::vector<HybridBlock> blocks_;
    Conv2d tail_;
};

} // namespace

std::vector<std::unique_ptr<SrUnit>> build_units(UnitStyle style, int total_blocks, int k, int c_f,
                                                 const SrNetConfig& cfg, Rng& rng) {
    check(k >= 1, "build_units: k must be >= 1");
    check(total_blocks >= k, "build_units: fewer blocks than units");
    if (total_blocks % k != 0)
        fail("build_units: total blocks " + std::to_string(total_blocks) +
             " not divisible by unit count " + std::to_string(k));
    int per_unit = total_blocks / k;
    std::vector<std::unique_ptr<SrUnit>> units;
    units.reserve(k);
    for (int i = 0; i < k; ++i) {
        switch (style) {
            case UnitStyle::Residual:
                units.push_back(std::make_unique<ResidualUnit>(c_f, per_unit, rng));
                break;
            case UnitStyle::ChannelAttention:
                units.push_back(std::make_unique<ChannelAttentionUnit>(c_f, per_unit,
                                                                       cfg.blocks_per_group,
                                                                       cfg.ca_reduction, rng));
                break;
            case UnitStyle::HybridAttention:
                units.push_back(std::make_unique<HybridUnit>(c_f, per_unit, cfg, rng));
                break;
        }
    }
    return units;
}

SegSrModel::SegSrModel(const ModelConfig& cfg) : cfg_(cfg) {
    const SrNetConfig& net = cfg_.srnet;
    check(net.scale == 2 || net.scale == 4, "srnet: scale must be 2 or 4");
    check(net.k >= 1, "srnet: unit count must be >= 1");
    check(net.feat_channels % net.attn_heads == 0 || net.style != UnitStyle::HybridAttention,
          "srnet: feat_channels must be divisible by attn_heads");
    Rng rng(net.seed);

    if (cfg_.variant != AblationVariant::Baseline) {
        encoder_ = std::make_unique<SemanticEncoder>(cfg_.encoder);
        if (cfg_.variant == AblationVariant::Full) {
            SlmConfig sc;
            sc.k = net.k;
            sc.width = cfg_.encoder.width;
            sc.tied_fusion = cfg_.slm_tied_fusion;
            sc.seed = cfg_.slm_seed;
            bank_ = std::make_unique<DescriptorBank>(sc);
        } else {
            Rng prng(cfg_.slm_seed);
            for (int i = 0; i < net.k; ++i)
                sfem_proj_.emplace_back(cfg_.encoder.width, net.feat_channels, prng, 0.02);
        }
        if (cfg_.variant != AblationVariant::SfemAdditive) {
            LmmConfig lc;
            lc.in_channels = cfg_.variant == AblationVariant::Full ? 1 : net.feat_channels;
            lc.feat_channels = net.feat_channels;
            lc.shared_stem = cfg_.lmm_shared_stem;
            for (int i = 0; i < net.k; ++i) {
                lc.seed = cfg_.lmm_seed + static_cast<uint64_t>(i);
                modulators_.emplace_back(lc);
            }
        }
    }

    shallow_ = Conv2d(3, net.feat_channels, 3, 1, 1, rng);
    units_ = build_units(net.style, net.blocks_total, net.k, net.feat_channels, net, rng);
    int stages = net.scale == 4 ? 2 : 1;
    for (int i = 0; i < stages; ++i)
        up_convs_.emplace_back(net.feat_channels, net.feat_channels * 4, 3, 1, 1, rng);
    final_conv_ = Conv2d(net.feat_channels, 3, 3, 1, 1, rng);
}

Tensor SegSrModel::forward(const Tensor& lr_image, ForwardTrace* trace) const {
    check(lr_image.rank() == 3 && lr_image.dim(0) == 3, "forward: [3,H,W] input expected");
    const int h = lr_image.dim(1), w = lr_image.dim(2);
    const int s = cfg_.srnet.scale;
    check(h >= 8 && w >= 8, "forward: input must be at least 8x8");
    if (cfg_.variant != AblationVariant::Baseline) {
        const int p = encoder_->patch_size();
        if ((h * s) % p != 0)
            fail("forward: upsampled height " + std::to_string(h * s) +
                 " is not divisible by encoder patch size " + std::to_string(p));
        if ((w * s) % p != 0)
            fail("forward: upsampled width " + std::to_string(w * s) +
                 " is not divisible by encoder patch size " + std::to_string(p));
    }

    GuidanceMapSet maps;
    std::vector<Tensor> cond; // per-unit [C_f, H, W] for the SFEM variants
    if (cfg_.variant != AblationVariant::Baseline) {
        Tensor up = bilinear_resize(lr_image, h * s, w * s, /*align_corners=*/false);
        SemanticFeatures feats = encoder_->encode(up);
        if (cfg_.variant == AblationVariant::Full) {
            maps = bank_->localize(feats, h, w);
        } else {
            for (int i = 0; i < cfg_.srnet.k; ++i) {
                Tensor proj = sfem_proj_[i].forward(feats.local_feat); // [hc*wc, C_f]
                Tensor grid = tokens_to_chw(proj, feats.hc, feats.wc);
                cond.push_back(bilinear_resize(grid, h, w, /*align_corners=*/false));
            }
        }
    }

    Tensor f_shallow = shallow_.forward(lr_image);
    Tensor x = f_shallow;
    for (int i = 0; i < cfg_.srnet.k; ++i) {
        Tensor f = units_[i]->forward(x);
        switch (cfg_.variant) {
            case AblationVariant::Baseline: x = f; break;
            case AblationVariant::SfemAdditive: x = add(f, cond[i]); break;
            case AblationVariant::SfemLmm: x = modulators_[i].modulate(f, cond[i]); break;
            case AblationVariant::Full: x = modulators_[i].modulate(f, maps.maps[i]); break;
        }
    }
    Tensor up_in = add(x, f_shallow);
    if (trace) {
        trace->f_shallow = f_shallow;
        trace->f_k_out = x;
        trace->upsampler_in = up_in;
        trace->maps = maps;
    }
    Tensor y = up_in;
    for (const Conv2d& c : up_convs_) y = pixel_shuffle(c.forward(y), 2);
    return final_conv_.forward(y);
}

ParamList SegSrModel::named_parameters() const {
    ParamList out;
    if (encoder_) encoder_->collect(out, "encoder");
    if (bank_) bank_->collect(out, "slm");
    for (size_t i = 0; i < sfem_proj_.size(); ++i)
        sfem_proj_[i].collect(out, "sfem_proj." + std::to_string(i), true);
    for (size_t i = 0; i < modulators_.size(); ++i)
        modulators_[i].collect(out, "lmm." + std::to_string(i));
    shallow_.collect(out, "srnet.shallow", true);
    for (size_t i = 0; i < units_.size(); ++i)
        units_[i]->collect(out, "srnet.units." + std::to_string(i));
    for (size_t i = 0; i < up_convs_.size(); ++i)
        up_convs_[i].collect(out, "srnet.up." + std::to_string(i), true);
    final_conv_.collect(out, "srnet.final", true);
    return out;
}

int64_t SegSrModel::trainable_param_count() const {
    int64_t n = 0;
    for (const NamedTensor& p : named_parameters())
        if (p.trainable) n += p.tensor.numel();
    return n;
}

int64_t SegSrModel::total_param_count() const {
    int64_t n = 0;
    for (const NamedTensor& p : named_parameters()) n += p.tensor.numel();
    return n;
}

uint64_t SegSrModel::frozen_hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const NamedTensor& p : named_parameters()) {
        if (p.trainable) continue;
        h = fnv1a(p.name.data(), p.name.size(), h);
        h = fnv1a(p.tensor.data(), p.tensor.numel() * sizeof(double), h);
    }
    return h;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    check(pred.shape() == target.shape(), "l1_loss: shape mismatch");
    return mean_all(abs(sub(pred, target)));
}

} // namespace segsr
