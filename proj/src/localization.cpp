#include "segsr/localization.hpp"

namespace segsr {

namespace {
constexpr double kCosEps = 1e-8;
}

DescriptorBank::DescriptorBank(const SlmConfig& cfg) : cfg_(cfg) {
    check(cfg_.k >= 1, "slm: unit count must be >= 1");
    check(cfg_.width >= 1, "slm: width must be >= 1");
    const int c = cfg_.width;
    Rng rng(cfg_.seed);
    const double sd = 0.02;

    unit_desc_ = Tensor::randn({cfg_.k, c}, rng, sd, true);
    global_desc_ = Tensor::randn({1, c}, rng, sd, true);
    mn_in_ = Linear(c, c, rng, sd);
    mn_hidden_ = Linear(c, c, rng, sd);
    mn_gate_ = Linear(c, c, rng, sd);
    mn_add_ = Linear(c, c, rng, sd);
    mn_out_ = Linear(c, c, rng, sd);
    attn_wq_ = Tensor::randn({c, c}, rng, sd, true);
    attn_wk_ = Tensor::randn({c, c}, rng, sd, true);
    attn_wv_ = Tensor::randn({c, c}, rng, sd, true);
    fusion_.resize(cfg_.tied_fusion ? 1 : cfg_.k);
    for (FusionHead& f : fusion_) {
        f.gate = Linear(c, c, rng, sd);
        f.value = Linear(c, c, rng, sd);
        f.out = Linear(c, c, rng, sd);
    }
}

Tensor DescriptorBank::metanet_fuse(const Tensor& global_feat, const Tensor& global_descriptor) const {
    check(global_feat.rank() == 2 && global_feat.dim(1) == cfg_.width,
          "metanet_fuse: global feature width " + std::to_string(global_feat.shape().back()) +
              " does not match bank width " + std::to_string(cfg_.width));
    check(global_descriptor.shape() == global_feat.shape(), "metanet_fuse: descriptor width mismatch");
    Tensor ig = mn_hidden_.forward(relu(mn_in_.forward(global_feat)));
    Tensor gated = mul(mn_gate_.forward(ig), global_descriptor);
    return mn_out_.forward(add(gated, mn_add_.forward(ig)));
}

std::pair<Tensor, Tensor> DescriptorBank::interact(const Tensor& global_fused) const {
    return interact(global_fused, unit_desc_);
}

std::pair<Tensor, Tensor> DescriptorBank::interact(const Tensor& global_fused,
                                                   const Tensor& unit_descriptors) const {
    check(unit_descriptors.rank() == 2 && unit_descriptors.dim(0) >= 1,
          "interact: at least one unit descriptor required");
    check(unit_descriptors.dim(1) == cfg_.width && global_fused.dim(1) == cfg_.width,
          "interact: width mismatch");
    Tensor seq = concat_rows({global_fused, unit_descriptors});
    Tensor out = slm_attention(seq, attn_wq_, attn_wk_, attn_wv_);
    return {slice_rows(out, 0, 1), slice_rows(out, 1, out.dim(0))};
}

Tensor DescriptorBank::gated_fuse(const Tensor& unit_refined, const Tensor& global_refined,
                                  int unit) const {
    check(unit_refined.shape() == global_refined.shape() && unit_refined.dim(1) == cfg_.width,
          "gated_fuse: width mismatch");
    const FusionHead& f = fusion_[cfg_.tied_fusion ? 0 : unit];
    Tensor gate = sigmoid(f.gate.forward(unit_refined));
    return f.out.forward(mul(gate, f.value.forward(global_refined)));
}

GuidanceMapSet guidance_maps(const Tensor& embeddings, const Tensor& local_feat, int hc, int wc,
                             int out_h, int out_w, bool eps_guard) {
    check(embeddings.rank() == 2 && local_feat.rank() == 2, "guidance_maps: rank-2 inputs expected");
    check(embeddings.dim(1) == local_feat.dim(1), "guidance_maps: width mismatch");
    check(local_feat.dim(0) == hc * wc, "guidance_maps: local grid size mismatch");
    check(out_h >= hc && out_w >= wc, "guidance_maps: target must be >= source grid");

    const double eps = eps_guard ? kCosEps : 0.0;
    if (!eps_guard) {
        auto sumsq_zero = [](const double* p, int64_t n) {
            double s = 0.0;
            for (int64_t i = 0; i < n; ++i) s += p[i] * p[i];
            return s == 0.0;
        };
        int c = embeddings.dim(1);
        for (int i = 0; i < embeddings.dim(0); ++i)
            check(!sumsq_zero(embeddings.data() + static_cast<int64_t>(i) * c, c),
                  "guidance_maps: zero-norm embedding with the epsilon guard disabled");
        for (int r = 0; r < local_feat.dim(0); ++r)
            check(!sumsq_zero(local_feat.data() + static_cast<int64_t>(r) * c, c),
                  "guidance_maps: zero-norm local feature with the epsilon guard disabled");
    }

    // shared across units: per-cell local norms
    Tensor local_norm = sqrt(add_scalar(sum_lastdim(mul(local_feat, local_feat)), eps)); // [HW,1]

    GuidanceMapSet set;
    set.src_hc = hc;
    set.src_wc = wc;
    const int k = embeddings.dim(0);
    for (int i = 0; i < k; ++i) {
        Tensor e = slice_rows(embeddings, i, i + 1);                              // [1, C]
        Tensor dots = matmul(local_feat, e, /*trans_b=*/true);                    // [HW, 1]
        Tensor e_norm = sqrt(add_scalar(sum_lastdim(mul(e, e)), eps));            // [1, 1]
        Tensor cos = div(dots, mul(local_norm, e_norm));
        Tensor lr_map = tokens_to_chw(cos, hc, wc);                               // [1, hc, wc]
        set.maps.push_back(bilinear_resize(lr_map, out_h, out_w, /*align_corners=*/false));
    }
    return set;
}

GuidanceMapSet DescriptorBank::localize(const SemanticFeatures& features, int out_h, int out_w) const {
    check(features.width() == cfg_.width, "localize: bank width " + std::to_string(cfg_.width) +
                                              " does not match feature width " +
                                              std::to_string(features.width()));
    Tensor pg = metanet_fuse(features.global_feat);
    auto [pg_star, units_star] = interact(pg);
    std::vector<Tensor> embeds;
    embeds.reserve(cfg_.k);
    for (int i = 0; i < cfg_.k; ++i)
        embeds.push_back(gated_fuse(slice_rows(units_star, i, i + 1), pg_star, i));
    return guidance_maps(concat_rows(embeds), features.local_feat, features.hc, features.wc, out_h,
                         out_w);
}

void DescriptorBank::collect(ParamList& out, const std::string& prefix) const {
    push_param(out, prefix + ".unit_desc", unit_desc_, true);
    push_param(out, prefix + ".global_desc", global_desc_, true);
    mn_in_.collect(out, prefix + ".metanet.in", true);
    mn_hidden_.collect(out, prefix + ".metanet.hidden", true);
    mn_gate_.collect(out, prefix + ".metanet.gate", true);
    mn_add_.collect(out, prefix + ".metanet.add", true);
    mn_out_.collect(out, prefix + ".metanet.out", true);
    push_param(out, prefix + ".attn.wq", attn_wq_, true);
    push_param(out, prefix + ".attn.wk", attn_wk_, true);
    push_param(out, prefix + ".attn.wv", attn_wv_, true);
    for (size_t i = 0; i < fusion_.size(); ++i) {
        std::string fp = prefix + ".fusion" + (fusion_.size() == 1 ? "" : "." + std::to_string(i));
        fusion_[i].gate.collect(out, fp + ".gate", true);
        fusion_[i].value.collect(out, fp + ".value", true);
        fusion_[i].out.collect(out, fp + ".out", true);
    }
}

} // namespace segsr
