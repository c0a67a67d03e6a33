#include <doctest.h>

#include "helpers.hpp"
#include "segsr/encoder.hpp"
#include "segsr/trainer.hpp"

using namespace segsr;

namespace {

EncoderConfig small_cfg(LoraTargets targets = LoraTargets::AttnFfn) {
    EncoderConfig c;
    c.patch_size = 16;
    c.depth = 2;
    c.width = 32;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.pretrain_grid = 4;
    c.stub_seed = 7;
    c.targets = targets;
    c.lora_rank = 4;
    return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

} // namespace

TEST_CASE("lora_forward algebra") {
    Rng rng(1);
    SUBCASE("zero factor_b reproduces the frozen path exactly") {
        Tensor w = testutil::random_tensor({5, 4}, rng);
        LoraAdapter a(w, 2, rng);
        Tensor x = testutil::random_tensor({1, 4}, rng);
        Tensor frozen = matmul(x, w, true);
        Tensor adapted = lora_forward(a, x);
        CHECK(adapted.values() == frozen.values());
    }
    SUBCASE("rank-1 with zero frozen weight gives u (v^T x)") {
        Tensor w = Tensor::zeros({3, 3});
        LoraAdapter a(w, 1, rng);
        a.factor_a = Tensor::from_data({3, 1}, {1.0, 2.0, 3.0}, true);
        a.factor_b = Tensor::from_data({3, 1}, {0.5, -1.0, 2.0}, true);
        Tensor x = Tensor::from_data({1, 3}, {1.0, 1.0, 1.0});
        double vtx = 0.5 - 1.0 + 2.0;
        Tensor y = lora_forward(a, x);
        CHECK(y.data()[0] == doctest::Approx(1.0 * vtx));
        CHECK(y.data()[1] == doctest::Approx(2.0 * vtx));
        CHECK(y.data()[2] == doctest::Approx(3.0 * vtx));
    }
    SUBCASE("matches dense materialization of W + A B^T") {
        Tensor w = testutil::random_tensor({4, 4}, rng);
        LoraAdapter a(w, 2, rng);
        a.factor_a = testutil::random_tensor({4, 2}, rng, -0.5, 0.5, true);
        a.factor_b = testutil::random_tensor({4, 2}, rng, -0.5, 0.5, true);
        Tensor x = testutil::random_tensor({1, 4}, rng);
        // dense oracle
        std::vector<double> dense(16);
        for (int o = 0; o < 4; ++o)
            for (int i = 0; i < 4; ++i) {
                double ab = 0.0;
                for (int r = 0; r < 2; ++r) ab += a.factor_a.data()[o * 2 + r] * a.factor_b.data()[i * 2 + r];
                dense[o * 4 + i] = w.data()[o * 4 + i] + ab;
            }
        std::vector<double> want(4, 0.0);
        for (int o = 0; o < 4; ++o)
            for (int i = 0; i < 4; ++i) want[o] += dense[o * 4 + i] * x.data()[i];
        Tensor got = lora_forward(a, x);
        for (int o = 0; o < 4; ++o) CHECK(std::abs(got.data()[o] - want[o]) < 1e-6);
    }
    SUBCASE("constructor rejects rank >= min dimension") {
        Tensor w = testutil::random_tensor({4, 6}, rng);
        CHECK_THROWS_AS(LoraAdapter(w, 4, rng), Error);
        CHECK_THROWS_AS(LoraAdapter(w, 0, rng), Error);
        CHECK_NOTHROW(LoraAdapter(w, 3, rng));
    }
    SUBCASE("dimension mismatch raises") {
        Tensor w = testutil::random_tensor({4, 6}, rng);
        LoraAdapter a(w, 2, rng);
        CHECK_THROWS_AS(lora_forward(a, Tensor::zeros({1, 4})), Error);
    }
}

TEST_CASE("interpolate_positions") {
    Rng rng(2);
    SUBCASE("identity target returns the table unchanged") {
        Tensor table = testutil::random_tensor({4 * 4 + 1, 8}, rng);
        Tensor out = interpolate_positions(table, 4, 4, 4);
        CHECK(out.values() == table.values());
    }
    SUBCASE("constant table stays constant at any size") {
        Tensor table = Tensor::full({3 * 3 + 1, 4}, 0.25);
        Tensor out = interpolate_positions(table, 3, 7, 5);
        CHECK(out.shape() == Shape{36, 4});
        for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(0.25));
    }
    SUBCASE("2x2 ramp to 3x3 puts arithmetic means at midpoints") {
        // single channel, grid values [[0,1],[2,3]], class row = 9
        Tensor table = Tensor::from_data({5, 1}, {9.0, 0.0, 1.0, 2.0, 3.0});
        Tensor out = interpolate_positions(table, 2, 3, 3);
        std::vector<double> want = {9.0, 0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0};
        REQUIRE(out.numel() == 10);
        for (int i = 0; i < 10; ++i) CHECK(out.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
    SUBCASE("non-positive target raises") {
        Tensor table = Tensor::zeros({5, 2});
        CHECK_THROWS_AS(interpolate_positions(table, 2, 0, 3), Error);
    }
}

TEST_CASE("encode shapes, determinism and identity at init") {
    SemanticEncoder enc(small_cfg());
    Tensor img = testutil::synth_image(64, 64, 3);

    SUBCASE("64x64 upsampled input with patch 16 gives a 4x4 local grid") {
        SemanticFeatures f = enc.encode(img);
        CHECK(f.global_feat.shape() == Shape{1, 32});
        CHECK(f.local_feat.shape() == Shape{16, 32});
        CHECK(f.hc == 4);
        CHECK(f.wc == 4);
    }
    SUBCASE("256x256 input gives 16x16, matching (H*s)/patch") {
        Tensor big = testutil::synth_image(256, 256, 4);
        SemanticFeatures f = enc.encode(big);
        CHECK(f.hc == 16);
        CHECK(f.local_feat.dim(0) == 256);
    }
    SUBCASE("bit-stable across calls") {
        SemanticFeatures f1 = enc.encode(img);
        SemanticFeatures f2 = enc.encode(img);
        CHECK(f1.global_feat.values() == f2.global_feat.values());
        CHECK(f1.local_feat.values() == f2.local_feat.values());
    }
    SUBCASE("fresh adapters match the adapter-free encoder within 1e-6") {
        SemanticEncoder bare(small_cfg(LoraTargets::None));
        SemanticFeatures fa = enc.encode(img);
        SemanticFeatures fb = bare.encode(img);
        CHECK(max_abs_diff(fa.local_feat, fb.local_feat) <= 1e-6);
        CHECK(max_abs_diff(fa.global_feat, fb.global_feat) <= 1e-6);
    }
    SUBCASE("indivisible dimensions name the offender") {
        Tensor bad = testutil::synth_image(60, 64, 5);
        CHECK_THROWS_WITH_AS(enc.encode(bad), doctest::Contains("height 60"), Error);
        Tensor bad2 = testutil::synth_image(64, 40, 5);
        CHECK_THROWS_WITH_AS(enc.encode(bad2), doctest::Contains("width 40"), Error);
    }
}

TEST_CASE("multi-head attention matches a per-head transcription") {
    Rng rng(40);
    MultiHeadAttention mha;
    mha.heads = 2;
    auto plain = [&](int in, int out) {
        LoraLinear l;
        l.weight = testutil::random_tensor({out, in}, rng, -0.5, 0.5);
        l.bias = testutil::random_tensor({out}, rng, -0.2, 0.2);
        return l;
    };
    mha.q = plain(4, 4);
    mha.k = plain(4, 4);
    mha.v = plain(4, 4);
    mha.out = plain(4, 4);
    Tensor x = testutil::random_tensor({3, 4}, rng);
    Tensor got = mha.forward(x);

    // straight-line reference: project, split into 2 heads of width 2,
    // softmax(q k^T / sqrt(2)) v per head, concatenate, output-project
    auto lin = [](const LoraLinear& l, const std::vector<double>& v, int n, int c) {
        std::vector<double> y(static_cast<size_t>(n) * c);
        for (int r = 0; r < n; ++r)
            for (int o = 0; o < c; ++o) {
                double acc = l.bias.data()[o];
                for (int i = 0; i < c; ++i) acc += l.weight.data()[o * c + i] * v[r * c + i];
                y[r * c + o] = acc;
            }
        return y;
    };
    std::vector<double> q = lin(mha.q, x.values(), 3, 4);
    std::vector<double> k = lin(mha.k, x.values(), 3, 4);
    std::vector<double> v = lin(mha.v, x.values(), 3, 4);
    std::vector<double> mixed(12, 0.0);
    for (int h = 0; h < 2; ++h) {
        for (int r = 0; r < 3; ++r) {
            double s[3], mx = -1e300, den = 0.0;
            for (int j = 0; j < 3; ++j) {
                s[j] = (q[r * 4 + h * 2] * k[j * 4 + h * 2] +
                        q[r * 4 + h * 2 + 1] * k[j * 4 + h * 2 + 1]) /
                       std::sqrt(2.0);
                mx = std::max(mx, s[j]);
            }
            for (int j = 0; j < 3; ++j) {
                s[j] = std::exp(s[j] - mx);
                den += s[j];
            }
            for (int j = 0; j < 3; ++j)
                for (int c = 0; c < 2; ++c)
                    mixed[r * 4 + h * 2 + c] += s[j] / den * v[j * 4 + h * 2 + c];
        }
    }
    std::vector<double> want = lin(mha.out, mixed, 3, 4);
    for (int i = 0; i < 12; ++i) CHECK(got.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("trainable parameter partition") {
    SUBCASE("attn-only wraps 3 linears per block") {
        SemanticEncoder enc(small_cfg(LoraTargets::Attn));
        CHECK(enc.adapter_count() == 3 * 2);
        CHECK(enc.trainable_parameters().size() == 2u * 3 * 2);
    }
    SUBCASE("attn+ffn wraps 5 linears per block") {
        SemanticEncoder enc(small_cfg(LoraTargets::AttnFfn));
        CHECK(enc.adapter_count() == 5 * 2);
    }
    SUBCASE("adapter parameter count is r*(d_in+d_out) per wrapped linear") {
        SemanticEncoder enc(small_cfg(LoraTargets::Attn));
        int64_t n = 0;
        for (const NamedTensor& p : enc.trainable_parameters()) n += p.tensor.numel();
        CHECK(n == 3 * 2 * (4 * 32 + 4 * 32)); // q,k,v per block, square 32x32, rank 4
    }
    SUBCASE("optimizer steps leave frozen weights bit-identical") {
        SemanticEncoder enc(small_cfg());
        uint64_t before = enc.frozen_hash();
        Tensor img = testutil::synth_image(64, 64, 6);
        Adam adam(enc.trainable_parameters());
        for (int step = 0; step < 3; ++step) {
            adam.zero_grad();
            SemanticFeatures f = enc.encode(img);
            Tensor loss = mean_all(mul(f.local_feat, f.local_feat));
            loss.backward();
            adam.step(1e-2);
        }
        CHECK(enc.frozen_hash() == before);
    }
    SUBCASE("gradients hit adapters but never frozen tensors") {
        SemanticEncoder enc(small_cfg());
        Tensor img = testutil::synth_image(64, 64, 7);
        SemanticFeatures f = enc.encode(img);
        add(mean_all(f.local_feat), mean_all(f.global_feat)).backward();
        ParamList all;
        enc.collect(all, "encoder");
        bool adapter_hit = false;
        for (const NamedTensor& p : all) {
            if (!p.trainable) {
                CHECK_FALSE(p.tensor.has_grad());
            } else if (p.tensor.has_grad()) {
                for (double g : p.tensor.grad())
                    if (g != 0.0) adapter_hit = true;
            }
        }
        CHECK(adapter_hit);
    }
}

TEST_CASE("weight container round trip and failure paths") {
    testutil::TempDir dir("encw");
    EncoderConfig cfg = small_cfg();
    SemanticEncoder enc(cfg);
    std::string path = (dir.path() / "weights.swt").string();
    enc.save_weights(path);

    SUBCASE("loading the saved file reproduces outputs exactly") {
        EncoderConfig loaded_cfg = cfg;
        loaded_cfg.source = "file";
        loaded_cfg.weights_path = path;
        loaded_cfg.stub_seed = 999; // must not matter once the file loads
        SemanticEncoder loaded(loaded_cfg);
        Tensor img = testutil::synth_image(64, 64, 8);
        SemanticFeatures fa = enc.encode(img);
        SemanticFeatures fb = loaded.encode(img);
        CHECK(fa.local_feat.values() == fb.local_feat.values());
        CHECK(fa.global_feat.values() == fb.global_feat.values());
    }
    SUBCASE("missing file") {
        SemanticEncoder fresh(cfg);
        CHECK_THROWS_AS(fresh.load_pretrained((dir.path() / "nope.swt").string()), Error);
    }
    SUBCASE("truncated file leaves the encoder unchanged") {
        std::string trunc = (dir.path() / "trunc.swt").string();
        {
            std::ifstream in(path, std::ios::binary);
            std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
            std::ofstream out(trunc, std::ios::binary);
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        }
        SemanticEncoder fresh(cfg);
        Tensor img = testutil::synth_image(64, 64, 9);
        SemanticFeatures before = fresh.encode(img);
        CHECK_THROWS_WITH_AS(fresh.load_pretrained(trunc), doctest::Contains("truncated"), Error);
        SemanticFeatures after = fresh.encode(img);
        CHECK(before.local_feat.values() == after.local_feat.values());
    }
    SUBCASE("wrong shape names the tensor") {
        Container c = Container::load(path);
        ContainerEntry e = c.get("encoder.class_token");
        e.shape = {1, 16};
        e.f64.resize(16);
        c.entries["encoder.class_token"] = e;
        std::string bad = (dir.path() / "bad.swt").string();
        c.save(bad);
        SemanticEncoder fresh(cfg);
        CHECK_THROWS_WITH_AS(fresh.load_pretrained(bad), doctest::Contains("encoder.class_token"),
                             Error);
    }
}

TEST_CASE("finite differences through a 2-layer stub encoder") {
    EncoderConfig cfg = small_cfg();
    cfg.width = 16;
    cfg.heads = 2;
    cfg.depth = 2;
    cfg.patch_size = 8;
    cfg.pretrain_grid = 2;
    SemanticEncoder enc(cfg);

    // randomize factor_b so d/dA is informative
    ParamList tp = enc.trainable_parameters();
    Rng rng(11);
    for (NamedTensor& p : tp)
        for (int64_t i = 0; i < p.tensor.numel(); ++i) p.tensor.data()[i] = rng.normal(0.0, 0.05);

    Tensor img = testutil::synth_image(16, 16, 10);
    std::vector<Tensor> factor_a;
    for (NamedTensor& p : tp)
        if (p.name.find("lora_a") != std::string::npos) factor_a.push_back(p.tensor);
    REQUIRE(!factor_a.empty());

    auto forward = [&] {
        SemanticFeatures f = enc.encode(img);
        return testutil::readout(concat_rows({f.global_feat, f.local_feat}), 17);
    };
    auto rep = testutil::fd_check(forward, factor_a, 1e-3, /*max_entries=*/6);
    CHECK(rep.checked >= 6);
    CHECK(rep.max_rel_err <= 1e-4);
}
