#include "segsr/encoder.hpp"

#include <cmath>

namespace segsr {

namespace {

// Frozen weights are drawn through f32 so the float32 weight container
// round-trips them exactly.
Tensor randn_f32(const Shape& s, Rng& rng, double stddev, bool rg = false) {
    std::vector<double> v(numel_of(s));
    for (double& x : v) x = static_cast<double>(static_cast<float>(rng.normal(0.0, stddev)));
    return Tensor::from_data(s, std::move(v), rg);
}

} // namespace

LoraTargets lora_targets_from_string(const std::string& s) {
    if (s == "none") return LoraTargets::None;
    if (s == "attn") return LoraTargets::Attn;
    if (s == "attn_ffn") return LoraTargets::AttnFfn;
    fail("encoder: unknown lora targets '" + s + "' (expected none | attn | attn_ffn)");
}

std::string to_string(LoraTargets t) {
    switch (t) {
        case LoraTargets::None: return "none";
        case LoraTargets::Attn: return "attn";
        case LoraTargets::AttnFfn: return "attn_ffn";
    }
    return "none";
}

SemanticEncoder::SemanticEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
    check(cfg_.patch_size >= 1 && cfg_.depth >= 1 && cfg_.width >= 1, "encoder: bad dimensions");
    check(cfg_.width % cfg_.heads == 0, "encoder: width not divisible by head count");
    Rng frozen_rng(cfg_.stub_seed);
    build(frozen_rng);
    if (cfg_.source == "file") {
        check(!cfg_.weights_path.empty(), "encoder: source=file requires weights_path");
        load_pretrained(cfg_.weights_path);
    } else {
        check(cfg_.source == "stub", "encoder: unknown source '" + cfg_.source + "'");
    }
}

void SemanticEncoder::build(Rng& rng) {
    const int c = cfg_.width;
    const int hidden = c * cfg_.mlp_ratio;
    const double sd = 0.02;

    norm_mean_ = Tensor::full({3}, 0.5, false);
    norm_std_ = Tensor::full({3}, 0.5, false);

    patch_embed_.weight = randn_f32({c, 3, cfg_.patch_size, cfg_.patch_size}, rng, sd);
    patch_embed_.bias = Tensor::zeros({c}, false);
    patch_embed_.stride = cfg_.patch_size;
    patch_embed_.pad = 0;

    class_token_ = randn_f32({1, c}, rng, sd);
    pos_table_ = randn_f32({cfg_.pretrain_grid * cfg_.pretrain_grid + 1, c}, rng, sd);
    ln_pre_ = LayerNorm(c);
    ln_post_ = LayerNorm(c);

    auto frozen_linear = [&](int in, int out) {
        LoraLinear l;
        l.weight = randn_f32({out, in}, rng, sd);
        l.bias = Tensor::zeros({out}, false);
        return l;
    };

    blocks_.clear();
    blocks_.resize(cfg_.depth);
    for (EncoderBlock& b : blocks_) {
        b.ln1 = LayerNorm(c);
        b.ln2 = LayerNorm(c);
        b.attn.heads = cfg_.heads;
        b.attn.q = frozen_linear(c, c);
        b.attn.k = frozen_linear(c, c);
        b.attn.v = frozen_linear(c, c);
        b.attn.out = frozen_linear(c, c);
        b.fc1 = frozen_linear(c, hidden);
        b.fc2 = frozen_linear(hidden, c);
    }

    if (cfg_.targets != LoraTargets::None) {
        Rng arng(cfg_.adapter_seed);
        for (EncoderBlock& b : blocks_) {
            b.attn.q.attach_adapter(cfg_.lora_rank, arng);
            b.attn.k.attach_adapter(cfg_.lora_rank, arng);
            b.attn.v.attach_adapter(cfg_.lora_rank, arng);
            if (cfg_.targets == LoraTargets::AttnFfn) {
                b.fc1.attach_adapter(cfg_.lora_rank, arng);
                b.fc2.attach_adapter(cfg_.lora_rank, arng);
            }
        }
    }
}

Tensor interpolate_positions(const Tensor& table, int grid, int hc, int wc) {
    check(hc >= 1 && wc >= 1, "interpolate_positions: non-positive target grid " +
                                  std::to_string(hc) + "x" + std::to_string(wc));
    check(table.rank() == 2 && table.dim(0) == grid * grid + 1,
          "interpolate_positions: table rows do not match grid");
    Tensor cls = slice_rows(table, 0, 1);
    Tensor body = slice_rows(table, 1, table.dim(0));
    Tensor grid_chw = tokens_to_chw(body, grid, grid);
    Tensor resized = bilinear_resize(grid_chw, hc, wc, /*align_corners=*/true);
    return concat_rows({cls, chw_to_tokens(resized)});
}

SemanticFeatures SemanticEncoder::encode(const Tensor& image_up) const {
    check(image_up.rank() == 3 && image_up.dim(0) == 3, "encode: [3,H,W] image expected");
    const int h = image_up.dim(1), w = image_up.dim(2), p = cfg_.patch_size;
    if (h % p != 0)
        fail("encode: height " + std::to_string(h) + " is not divisible by patch size " +
             std::to_string(p));
    if (w % p != 0)
        fail("encode: width " + std::to_string(w) + " is not divisible by patch size " +
             std::to_string(p));

    // per-channel normalization with the constants bundled in the weights
    std::vector<double> norm(image_up.numel());
    const int64_t hw = static_cast<int64_t>(h) * w;
    for (int ch = 0; ch < 3; ++ch) {
        double m = norm_mean_.data()[ch], s = norm_std_.data()[ch];
        for (int64_t i = 0; i < hw; ++i) norm[ch * hw + i] = (image_up.data()[ch * hw + i] - m) / s;
    }
    Tensor x = Tensor::from_data(image_up.shape(), std::move(norm));

    const int hc = h / p, wc = w / p;
    Tensor tokens = chw_to_tokens(patch_embed_.forward(x)); // [hc*wc, C]
    Tensor pos = interpolate_positions(pos_table_, cfg_.pretrain_grid, hc, wc);
    Tensor cls = add(class_token_, slice_rows(pos, 0, 1));
    tokens = add(tokens, slice_rows(pos, 1, pos.dim(0)));
    Tensor seq = ln_pre_.forward(concat_rows({cls, tokens}));
    for (const EncoderBlock& b : blocks_) {
        seq = add(seq, b.attn.forward(b.ln1.forward(seq)));
        seq = add(seq, b.fc2.forward(gelu(b.fc1.forward(b.ln2.forward(seq)))));
    }
    seq = ln_post_.forward(seq);

    SemanticFeatures f;
    f.global_feat = slice_rows(seq, 0, 1);
    f.local_feat = slice_rows(seq, 1, seq.dim(0));
    f.hc = hc;
    f.wc = wc;
    return f;
}

ParamList SemanticEncoder::trainable_parameters() const {
    ParamList all;
    collect(all, "encoder");
    ParamList out;
    for (NamedTensor& p : all)
        if (p.trainable) out.push_back(std::move(p));
    return out;
}

int SemanticEncoder::adapter_count() const {
    return static_cast<int>(trainable_parameters().size()) / 2;
}

void SemanticEncoder::collect(ParamList& out, const std::string& prefix) const {
    push_param(out, prefix + ".norm.mean", norm_mean_, false);
    push_param(out, prefix + ".norm.std", norm_std_, false);
    patch_embed_.collect(out, prefix + ".patch_embed", false);
    push_param(out, prefix + ".class_token", class_token_, false);
    push_param(out, prefix + ".pos_table", pos_table_, false);
    ln_pre_.collect(out, prefix + ".ln_pre", false);
    for (size_t i = 0; i < blocks_.size(); ++i) {
        std::string bp = prefix + ".blocks." + std::to_string(i);
        const EncoderBlock& b = blocks_[i];
        b.ln1.collect(out, bp + ".ln1", false);
        b.attn.collect(out, bp + ".attn");
        b.ln2.collect(out, bp + ".ln2", false);
        b.fc1.collect(out, bp + ".mlp.fc1");
        b.fc2.collect(out, bp + ".mlp.fc2");
    }
    ln_post_.collect(out, prefix + ".ln_post", false);
}

void SemanticEncoder::save_weights(const std::string& path) const {
    Container c;
    ParamList all;
    collect(all, "encoder");
    for (const NamedTensor& p : all) {
        if (p.trainable) continue; // adapters are carried by checkpoints, not weight files
        c.put_f32(p.name, p.tensor.shape(), p.tensor.values());
    }
    c.save(path);
}

void SemanticEncoder::load_pretrained(const std::string& path) {
    Container c = Container::load(path);
    ParamList all;
    collect(all, "encoder");

    // validate everything before mutating so a bad file leaves the encoder untouched
    for (const NamedTensor& p : all) {
        if (p.trainable) continue;
        const ContainerEntry& e = c.get(p.name);
        check(e.dtype == DType::F32, "load_pretrained: tensor '" + p.name + "' must be float32");
        if (e.shape != p.tensor.shape()) {
            auto fmt = [](const std::vector<int>& s) {
                std::string r = "(";
                for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
                return r + ")";
            };
            fail("load_pretrained: tensor '" + p.name + "' has shape " + fmt(e.shape) +
                 " but the declared architecture expects " + fmt(p.tensor.shape()));
        }
    }
    for (NamedTensor& p : all) {
        if (p.trainable) continue;
        p.tensor.values() = c.get(p.name).f64;
    }
    // fresh adapters over the newly loaded weights
    if (cfg_.targets != LoraTargets::None) {
        Rng arng(cfg_.adapter_seed);
        for (EncoderBlock& b : blocks_) {
            b.attn.q.adapter.reinit(arng);
            b.attn.k.adapter.reinit(arng);
            b.attn.v.adapter.reinit(arng);
            if (cfg_.targets == LoraTargets::AttnFfn) {
                b.fc1.adapter.reinit(arng);
                b.fc2.adapter.reinit(arng);
            }
        }
    }
}

uint64_t SemanticEncoder::frozen_hash() const {
    ParamList all;
    collect(all, "encoder");
    uint64_t h = 1469598103934665603ull;
    for (const NamedTensor& p : all) {
        if (p.trainable) continue;
        h = fnv1a(p.name.data(), p.name.size(), h);
        h = fnv1a(p.tensor.data(), p.tensor.numel() * sizeof(double), h);
    }
    return h;
}

} // namespace segsr
