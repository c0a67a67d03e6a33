// Acceptance suite: runs each gate criterion and prints one PASS/FAIL line.
// Exits nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <set>

#include <json.hpp>

#include "helpers.hpp"
#include "segsr/bicubic.hpp"
#include "segsr/trainer.hpp"

using namespace segsr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Failure {
    std::string what;
};

void expect(bool cond, const std::string& msg) {
    if (!cond) throw Failure{msg};
}

EncoderConfig stub_encoder(int depth, int width, int heads, int grid, int rank) {
    EncoderConfig c;
    c.patch_size = 16;
    c.depth = depth;
    c.width = width;
    c.heads = heads;
    c.mlp_ratio = 2;
    c.pretrain_grid = grid;
    c.lora_rank = rank;
    return c;
}

ExperimentConfig smoke_experiment(const std::string& root, int cf, int k) {
    ExperimentConfig c = ExperimentConfig::defaults();
    c.scale = 4;
    c.srnet.k = k;
    c.srnet.blocks_total = k;
    c.srnet.feat_channels = cf;
    c.srnet.attn_heads = 2;
    c.srnet.mlp_ratio = 2;
    c.encoder = stub_encoder(1, 32, 2, 2, 2);
    c.dataset.root = root;
    c.dataset.ratio_train = 1;
    c.dataset.ratio_test = 0;
    c.dataset.seed = 3;
    c.trainer.milestones = {};
    c.trainer.batch = 4;
    c.trainer.patch = 16; // HR side 64 = whole fixture image
    c.trainer.augment = false;
    c.trainer.eval_every = 1 << 30;
    c.trainer.checkpoint_every = 1 << 30;
    c.metrics.lpips = false;
    c.metrics.clipscore = false;
    return c;
}

void make_crops(const fs::path& root, int n = 4, int side = 64) {
    fs::create_directories(root / "fixture" / "crops");
    for (int i = 0; i < n; ++i)
        testutil::write_synth_png(root / "fixture" / "crops" / ("c" + std::to_string(i) + ".png"),
                                  side, side, 500 + i);
}

double train_set_psnr(const SegSrModel* model, const fs::path& root, int scale) {
    NoGradGuard ng;
    double acc = 0.0;
    int n = 0;
    for (const auto& e : fs::directory_iterator(root / "fixture" / "crops")) {
        Tensor hr = image_to_tensor(read_png(e.path().string()));
        Tensor lr = bicubic_resize(hr, hr.dim(1) / scale, hr.dim(2) / scale);
        Tensor pred = model ? model->forward(lr) : bicubic_resize(lr, hr.dim(1), hr.dim(2));
        for (double& v : pred.values()) v = std::min(std::max(v, 0.0), 1.0);
        acc += psnr(pred, hr);
        ++n;
    }
    return acc / n;
}

// ---------------------------------------------------------------------------

void criterion_identity_at_init(std::string& detail) {
    EncoderConfig with = stub_encoder(2, 32, 2, 4, 4);
    EncoderConfig without = with;
    without.targets = LoraTargets::None;
    SemanticEncoder adapted(with);
    SemanticEncoder bare(without);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        Tensor img = testutil::synth_image(64, 64, 700 + i);
        SemanticFeatures fa = adapted.encode(img);
        SemanticFeatures fb = bare.encode(img);
        for (int64_t j = 0; j < fa.local_feat.numel(); ++j)
            worst = std::max(worst, std::abs(fa.local_feat.data()[j] - fb.local_feat.data()[j]));
        for (int64_t j = 0; j < fa.global_feat.numel(); ++j)
            worst = std::max(worst, std::abs(fa.global_feat.data()[j] - fb.global_feat.data()[j]));
    }
    expect(worst <= 1e-6, "max-abs deviation " + std::to_string(worst));
    detail = "20 inputs, max-abs " + std::to_string(worst);
}

void criterion_frozen_partition(std::string& detail) {
    testutil::TempDir dir("acc_frozen");
    make_crops(dir.path());
    ExperimentConfig cfg = smoke_experiment((dir.path() / "fixture").string(), 16, 2);
    cfg.trainer.total_iters = 10;

    std::set<std::string> pending;
    {
        SegSrModel probe(cfg.model_config());
        for (const NamedTensor& p : probe.named_parameters())
            if (p.trainable) pending.insert(p.name);
    }
    size_t total_trainable = pending.size();

    TrainHooks hooks;
    hooks.after_backward = [&](int, const ParamList& params) {
        for (const NamedTensor& p : params) {
            if (!p.tensor.has_grad()) continue;
            for (double g : p.tensor.grad())
                if (g != 0.0) {
                    pending.erase(p.name);
                    break;
                }
        }
    };
    train(cfg, (dir.path() / "run").string(), "", &hooks);

    LoadedCheckpoint ck = load_checkpoint((dir.path() / "run" / "last.ckpt").string());
    SegSrModel fresh(cfg.model_config());
    expect(ck.model->frozen_hash() == fresh.frozen_hash(), "frozen-tensor hash changed");
    if (!pending.empty()) {
        std::string missing;
        for (const std::string& n : pending) missing += " " + n;
        expect(false, "tensors without any nonzero gradient:" + missing);
    }
    detail = "all " + std::to_string(total_trainable) +
             " trainable tensors received gradients; frozen hash unchanged";
}

void criterion_guidance_maps(std::string& detail) {
    Rng rng(900);
    int checked = 0;
    for (int k : {2, 6}) {
        SlmConfig sc;
        sc.k = k;
        sc.width = 16;
        sc.tied_fusion = true;
        sc.seed = 23 + k;
        DescriptorBank bank(sc);
        for (int i = 0; i < 25; ++i) {
            SemanticFeatures f;
            f.global_feat = testutil::random_tensor({1, 16}, rng, -2.0, 2.0);
            f.local_feat = testutil::random_tensor({16, 16}, rng, -2.0, 2.0);
            f.hc = 4;
            f.wc = 4;
            GuidanceMapSet maps = bank.localize(f, 8, 8);
            expect(static_cast<int>(maps.maps.size()) == k, "wrong map count");
            for (const Tensor& m : maps.maps)
                for (int64_t j = 0; j < m.numel(); ++j)
                    expect(m.data()[j] >= -1.0 && m.data()[j] <= 1.0,
                           "map value " + std::to_string(m.data()[j]) + " outside [-1,1]");
            ++checked;

            if (i == 0) {
                // permutation at tied-weight init must permute maps bit-exactly
                GuidanceMapSet before = bank.localize(f, 8, 8);
                std::vector<int> perm(k);
                for (int p = 0; p < k; ++p) perm[p] = (p + 1) % k;
                std::vector<double> permuted(bank.unit_desc_.numel());
                for (int p = 0; p < k; ++p)
                    for (int c = 0; c < 16; ++c)
                        permuted[p * 16 + c] = bank.unit_desc_.data()[perm[p] * 16 + c];
                std::vector<double> saved = bank.unit_desc_.values();
                bank.unit_desc_.values() = permuted;
                GuidanceMapSet after = bank.localize(f, 8, 8);
                bank.unit_desc_.values() = saved;
                for (int p = 0; p < k; ++p)
                    expect(after.maps[p].values() == before.maps[perm[p]].values(),
                           "permuted map " + std::to_string(p) + " is not bit-identical");
            }
        }
    }
    detail = std::to_string(checked) + " inputs across k in {2,6}, permutation exact";
}

void criterion_gradient_oracles(std::string& detail) {
    double worst = 0.0;
    { // metanet_fuse and gated_fuse at width 8
        SlmConfig sc;
        sc.k = 2;
        sc.width = 8;
        DescriptorBank bank(sc);
        Rng rng(910);
        Tensor ig = testutil::random_tensor({1, 8}, rng, -1, 1, true);
        auto rep = testutil::fd_check(
            [&] { return testutil::readout(bank.metanet_fuse(ig)); },
            {ig, bank.global_desc_, bank.mn_in_.weight, bank.mn_gate_.weight, bank.mn_out_.weight},
            1e-3, 8);
        worst = std::max(worst, rep.max_rel_err);
        Tensor pi = testutil::random_tensor({1, 8}, rng, -1, 1, true);
        Tensor pg = testutil::random_tensor({1, 8}, rng, -1, 1, true);
        rep = testutil::fd_check(
            [&] { return testutil::readout(bank.gated_fuse(pi, pg)); },
            {pi, pg, bank.fusion_[0].gate.weight, bank.fusion_[0].value.weight,
             bank.fusion_[0].out.weight},
            1e-3, 8);
        worst = std::max(worst, rep.max_rel_err);
    }
    { // modulate on a 2x2x3 instance
        LmmConfig lc;
        lc.in_channels = 1;
        lc.feat_channels = 3;
        Modulator lmm(lc);
        Rng rng(911);
        for (Conv2d* c : {&lmm.stem_, &lmm.gain_head_, &lmm.bias_head_})
            for (double& v : c->weight.values()) v = rng.uniform(-0.3, 0.3);
        Tensor feat = testutil::random_tensor({3, 2, 2}, rng, -1, 1, true);
        Tensor map = testutil::random_tensor({1, 2, 2}, rng, -1, 1, true);
        auto rep = testutil::fd_check(
            [&] { return testutil::readout(lmm.modulate(feat, map)); },
            {feat, map, lmm.stem_.weight, lmm.gain_head_.weight, lmm.bias_head_.weight}, 1e-3, 8);
        worst = std::max(worst, rep.max_rel_err);
    }
    { // 2-layer stub encoder, width 16, w.r.t. factor_a entries
        EncoderConfig ec = stub_encoder(2, 16, 2, 2, 2);
        ec.patch_size = 8;
        SemanticEncoder enc(ec);
        ParamList tp = enc.trainable_parameters();
        Rng rng(912);
        for (NamedTensor& p : tp)
            for (int64_t i = 0; i < p.tensor.numel(); ++i) p.tensor.data()[i] = rng.normal(0, 0.05);
        std::vector<Tensor> factor_a;
        for (NamedTensor& p : tp)
            if (p.name.find("lora_a") != std::string::npos) factor_a.push_back(p.tensor);
        Tensor img = testutil::synth_image(16, 16, 913);
        auto rep = testutil::fd_check(
            [&] {
                SemanticFeatures f = enc.encode(img);
                return testutil::readout(concat_rows({f.global_feat, f.local_feat}), 31);
            },
            factor_a, 1e-3, 4);
        worst = std::max(worst, rep.max_rel_err);
    }
    expect(worst <= 1e-4, "max relative error " + std::to_string(worst));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "max relative error %.3g", worst);
    detail = buf;
}

void criterion_metric_oracles(std::string& detail) {
    Rng rng(920);
    StubFeatureNet net(5);
    EncoderConfig ec = stub_encoder(1, 16, 2, 2, 2);
    ec.patch_size = 8;
    ClipScorer scorer(ec);

    // closed-form cases are exact
    Tensor x0 = testutil::random_tensor({3, 16, 16}, rng, 0.0, 1.0);
    expect(std::isinf(psnr(x0, x0)), "psnr(x,x) must be the infinity sentinel");
    expect(ssim(x0, x0) == 1.0, "ssim(x,x) must be exactly 1.0");
    expect(lpips(x0, x0, net) == 0.0, "lpips(x,x) must be exactly 0");
    expect(scorer.score(x0, x0) == 1.0, "clipscore(x,x) must be exactly 1.0");

    double worst_psnr = 0.0, worst_ssim = 0.0, worst_lpips = 0.0, worst_clip = 0.0;
    for (int t = 0; t < 25; ++t) {
        Tensor a = testutil::random_tensor({3, 16, 16}, rng, 0.0, 1.0);
        Tensor b = testutil::random_tensor({3, 16, 16}, rng, 0.0, 1.0);
        worst_psnr = std::max(worst_psnr, std::abs(psnr(a, b) - testutil::psnr_oracle(a, b)));
        worst_ssim = std::max(worst_ssim, std::abs(ssim(a, b) - testutil::ssim_oracle(a, b)));

        // lpips transcription oracle over the injected net's features
        auto fa = net.features(a);
        auto fb = net.features(b);
        double want = 0.0;
        for (size_t l = 0; l < fa.size(); ++l) {
            int c = fa[l].dim(0), h = fa[l].dim(1), w = fa[l].dim(2);
            double layer = 0.0;
            for (int p = 0; p < h * w; ++p) {
                double na = 1e-10, nb = 1e-10;
                for (int ch = 0; ch < c; ++ch) {
                    double va = fa[l].data()[ch * h * w + p];
                    double vb = fb[l].data()[ch * h * w + p];
                    na += va * va;
                    nb += vb * vb;
                }
                na = std::sqrt(na);
                nb = std::sqrt(nb);
                for (int ch = 0; ch < c; ++ch) {
                    double d = net.weights()[l][ch] * (fa[l].data()[ch * h * w + p] / na -
                                                       fb[l].data()[ch * h * w + p] / nb);
                    layer += d * d;
                }
            }
            want += layer / (h * w);
        }
        worst_lpips = std::max(worst_lpips, std::abs(lpips(a, b, net) - want));

        // clipscore vector-level oracle
        std::vector<double> ea = scorer.embed(a), eb = scorer.embed(b);
        double dot = 0, na = 0, nb = 0;
        for (size_t i = 0; i < ea.size(); ++i) {
            dot += ea[i] * eb[i];
            na += ea[i] * ea[i];
            nb += eb[i] * eb[i];
        }
        worst_clip = std::max(worst_clip,
                              std::abs(scorer.score(a, b) - dot / std::sqrt(na * nb)));
    }
    expect(worst_psnr < 1e-9, "psnr deviates " + std::to_string(worst_psnr));
    expect(worst_ssim < 1e-6, "ssim deviates " + std::to_string(worst_ssim));
    expect(worst_lpips < 1e-6, "lpips deviates " + std::to_string(worst_lpips));
    expect(worst_clip < 1e-6, "clipscore deviates " + std::to_string(worst_clip));
    char buf[128];
    std::snprintf(buf, sizeof(buf), "25 pairs; dev psnr %.1e ssim %.1e lpips %.1e clip %.1e",
                  worst_psnr, worst_ssim, worst_lpips, worst_clip);
    detail = buf;
}

void criterion_shape_law(std::string& detail) {
    int checked = 0;
    for (int scale : {2, 4}) {
        ModelConfig mc;
        mc.variant = AblationVariant::Full;
        mc.srnet.scale = scale;
        mc.srnet.k = 2;
        mc.srnet.blocks_total = 2;
        mc.srnet.feat_channels = 8;
        mc.srnet.attn_heads = 2;
        mc.srnet.mlp_ratio = 2;
        mc.encoder = stub_encoder(1, 16, 2, 2, 2);
        SegSrModel model(mc);
        NoGradGuard ng;
        for (int h : {32, 48, 64})
            for (int w : {32, 48, 64}) {
                Tensor out = model.forward(testutil::synth_image(h, w, 930 + h + w));
                expect(out.shape() == Shape{3, scale * h, scale * w},
                       "wrong output shape at " + std::to_string(h) + "x" + std::to_string(w) +
                           " s=" + std::to_string(scale));
                ++checked;
            }
    }
    detail = std::to_string(checked) + " (H,W,s) combinations exact";
}

void criterion_overfit_smoke(std::string& detail) {
    testutil::TempDir dir("acc_overfit");
    make_crops(dir.path());
    ExperimentConfig cfg = smoke_experiment((dir.path() / "fixture").string(), 16, 2);
    cfg.trainer.total_iters = 500;
    cfg.trainer.base_lr = 5e-3;
    cfg.trainer.milestones = {350};

    train(cfg, (dir.path() / "run").string());
    LoadedCheckpoint ck = load_checkpoint((dir.path() / "run" / "last.ckpt").string());

    double model_psnr = train_set_psnr(ck.model.get(), dir.path(), cfg.scale);
    double bicubic_psnr = train_set_psnr(nullptr, dir.path(), cfg.scale);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "model %.2f dB vs bicubic %.2f dB", model_psnr, bicubic_psnr);
    detail = buf;
    expect(model_psnr >= bicubic_psnr + 1.0, detail);
}

void criterion_ablation_matrix(std::string& detail) {
    testutil::TempDir dir("acc_ablation");
    make_crops(dir.path());
    std::vector<std::pair<std::string, int64_t>> counts;
    for (const char* variant : {"baseline", "sfem_additive", "sfem_lmm", "full"}) {
        ExperimentConfig cfg = smoke_experiment((dir.path() / "fixture").string(), 16, 2);
        cfg.variant = variant_from_string(variant);
        cfg.trainer.total_iters = 50;
        std::string out = (dir.path() / variant).string();
        TrainResult res = train(cfg, out);
        expect(std::isfinite(res.final_loss), std::string(variant) + " produced non-finite loss");
        json meta = json::parse(std::ifstream(fs::path(out) / "meta.json"));
        counts.emplace_back(variant, meta.at("trainable_params").get<int64_t>());
    }
    expect(counts[0].second < counts[1].second, "baseline !< +SFEM");
    expect(counts[1].second <= counts[2].second, "+SFEM !<= +SFEM+LMM");
    expect(counts[2].second < counts[3].second, "+SFEM+LMM !< full");
    char buf[128];
    std::snprintf(buf, sizeof(buf), "params %lld < %lld <= %lld < %lld",
                  static_cast<long long>(counts[0].second), static_cast<long long>(counts[1].second),
                  static_cast<long long>(counts[2].second), static_cast<long long>(counts[3].second));
    detail = buf;
}

void criterion_split_determinism(std::string& detail) {
    testutil::TempDir dir("acc_split");
    // UCMerced layout: 21 classes x 100 images
    ImageU8 dot;
    dot.width = 1;
    dot.height = 1;
    dot.rgb = {128, 128, 128};
    for (int c = 0; c < 21; ++c) {
        char cname[32];
        std::snprintf(cname, sizeof(cname), "class%02d", c);
        fs::create_directories(dir.path() / "data" / cname);
        for (int i = 0; i < 100; ++i) {
            char fname[32];
            std::snprintf(fname, sizeof(fname), "im%03d.png", i);
            write_png((dir.path() / "data" / cname / fname).string(), dot);
        }
    }
    DatasetManifest m1 = split_dataset((dir.path() / "data").string(), 3, 1, 42);
    expect(m1.classes.size() == 21, "expected 21 classes");
    for (const ClassSplit& c : m1.classes) {
        expect(c.train.size() == 75, c.name + ": train != 75");
        expect(c.test.size() == 25, c.name + ": test != 25");
    }
    expect(m1.train_count() == 1575 && m1.test_count() == 525, "totals != 1575/525");

    m1.save((dir.path() / "m1.json").string());
    DatasetManifest m2 = split_dataset((dir.path() / "data").string(), 3, 1, 42);
    m2.save((dir.path() / "m2.json").string());
    expect(testutil::same_file_bytes((dir.path() / "m1.json").string(),
                                     (dir.path() / "m2.json").string()),
           "manifests are not byte-identical");
    detail = "21 classes at 75/25, manifests byte-identical";
}

void criterion_schedule(std::string& detail) {
    Schedule uc{1e-4, {50000}, 0.5, 80000};
    expect(lr_at(uc, 49999) == 1e-4, "UCMerced iter 49999");
    expect(lr_at(uc, 50000) == 5e-5, "UCMerced iter 50000");
    Schedule aid{1e-4, {60000, 100000}, 0.5, 120000};
    expect(lr_at(aid, 0) == 1e-4, "AID iter 0");
    expect(lr_at(aid, 60000) == 5e-5, "AID iter 60000");
    expect(lr_at(aid, 110000) == 2.5e-5, "AID iter 110000");
    detail = "1e-4 -> 5e-5 at 50k; 1e-4 -> 5e-5 -> 2.5e-5 on the AID milestones";
}

struct Criterion {
    int id;
    const char* name;
    void (*run)(std::string&);
    double budget_s; // 0 = no budget
};

} // namespace

int main() {
    const Criterion criteria[] = {
        {1, "identity-at-init", criterion_identity_at_init, 10.0},
        {2, "frozen/trainable partition", criterion_frozen_partition, 60.0},
        {3, "guidance-map contract", criterion_guidance_maps, 0.0},
        {4, "gradient oracles", criterion_gradient_oracles, 0.0},
        {5, "metric oracles", criterion_metric_oracles, 0.0},
        {6, "pipeline shape law", criterion_shape_law, 0.0},
        {7, "overfit smoke", criterion_overfit_smoke, 300.0},
        {8, "ablation matrix", criterion_ablation_matrix, 0.0},
        {9, "split determinism", criterion_split_determinism, 0.0},
        {10, "schedule values", criterion_schedule, 0.0},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        std::string detail;
        auto t0 = std::chrono::steady_clock::now();
        bool ok = true;
        try {
            c.run(detail);
        } catch (const Failure& f) {
            ok = false;
            detail = f.what;
        } catch (const std::exception& e) {
            ok = false;
            detail = std::string("exception: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (ok && c.budget_s > 0.0 && secs > c.budget_s) {
            ok = false;
            detail = "exceeded the " + std::to_string(c.budget_s) + "s budget";
        }
        std::printf("[%s] %2d. %-28s (%6.2fs) %s\n", ok ? "PASS" : "FAIL", c.id, c.name, secs,
                    detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
