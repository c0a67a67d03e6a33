#pragma once

#include <string>
#include <vector>

#include "segsr/tensor.hpp"

namespace segsr {

// Named view of a parameter tensor. `trainable` marks tensors the optimizer
// may touch; everything else is frozen and hash-checked in tests.
struct NamedTensor {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

using ParamList = std::vector<NamedTensor>;

inline void push_param(ParamList& out, const std::string& name, const Tensor& t, bool trainable) {
    out.push_back(NamedTensor{name, t, trainable});
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

struct Linear {
    Tensor weight; // [out, in]
    Tensor bias;   // [out], optional

    Linear() = default;
    Linear(int in, int out, Rng& rng, double stddev, bool with_bias = true, bool trainable = true) {
        weight = Tensor::randn({out, in}, rng, stddev, trainable);
        if (with_bias) bias = Tensor::zeros({out}, trainable);
    }

    Tensor forward(const Tensor& x) const {
        Tensor y = matmul(x, weight, /*trans_b=*/true);
        if (bias.defined()) y = add_rowvec(y, bias);
        return y;
    }

    void collect(ParamList& out, const std::string& prefix, bool trainable) const {
        push_param(out, prefix + ".weight", weight, trainable);
        if (bias.defined()) push_param(out, prefix + ".bias", bias, trainable);
    }
};

// ---------------------------------------------------------------------------
// Low-rank adapter: effective weight W + A B^T over a frozen W
// ---------------------------------------------------------------------------

struct LoraAdapter {
    Tensor frozen_weight; // [out, in], never trainable
    Tensor factor_a;      // [out, r]
    Tensor factor_b;      // [in, r], zero at construction
    int rank = 0;

    LoraAdapter() = default;

    // factor_b starts at zero so the effective weight equals frozen_weight.
    LoraAdapter(Tensor frozen, int r, Rng& adapter_rng, double a_stddev = 0.02) {
        int d_out = frozen.dim(0), d_in = frozen.dim(1);
        check(r >= 1, "LoraAdapter: rank must be positive");
        check(r < std::min(d_out, d_in),
              "LoraAdapter: rank " + std::to_string(r) + " must be < min(" + std::to_string(d_out) +
                  "," + std::to_string(d_in) + ")");
        frozen_weight = std::move(frozen);
        frozen_weight.set_requires_grad(false);
        rank = r;
        factor_a = Tensor::randn({d_out, r}, adapter_rng, a_stddev, true);
        factor_b = Tensor::zeros({d_in, r}, true);
    }

    void reinit(Rng& adapter_rng, double a_stddev = 0.02) {
        int d_out = frozen_weight.dim(0), d_in = frozen_weight.dim(1);
        factor_a = Tensor::randn({d_out, rank}, adapter_rng, a_stddev, true);
        factor_b = Tensor::zeros({d_in, rank}, true);
    }
};

// (W + A B^T) x, computed as the frozen path plus the low-rank path.
inline Tensor lora_forward(const LoraAdapter& a, const Tensor& x) {
    check(x.rank() >= 2 && x.shape().back() == a.frozen_weight.dim(1),
          "lora_forward: input width " +
              std::to_string(x.shape().back()) + " does not match adapter d_in " +
              std::to_string(a.frozen_weight.dim(1)));
    Tensor y = matmul(x, a.frozen_weight, /*trans_b=*/true);
    Tensor low = matmul(matmul(x, a.factor_b), a.factor_a, /*trans_b=*/true);
    return add(y, low);
}

// Linear whose weight may carry a low-rank adapter; bias stays frozen with
// the base weight.
struct LoraLinear {
    Tensor weight; // frozen [out, in]
    Tensor bias;   // frozen [out], optional
    bool has_adapter = false;
    LoraAdapter adapter;

    LoraLinear() = default;
    LoraLinear(int in, int out, Rng& rng, double stddev, bool with_bias) {
        weight = Tensor::randn({out, in}, rng, stddev, false);
        if (with_bias) bias = Tensor::zeros({out}, false);
    }

    void attach_adapter(int rank, Rng& adapter_rng) {
        adapter = LoraAdapter(weight, rank, adapter_rng);
        has_adapter = true;
    }

    Tensor forward(const Tensor& x) const {
        Tensor y;
        if (has_adapter)
            y = lora_forward(adapter, x);
        else
            y = matmul(x, weight, /*trans_b=*/true);
        if (bias.defined()) y = add_rowvec(y, bias);
        return y;
    }

    void collect(ParamList& out, const std::string& prefix) const {
        push_param(out, prefix + ".weight", weight, false);
        if (bias.defined()) push_param(out, prefix + ".bias", bias, false);
        if (has_adapter) {
            push_param(out, prefix + ".lora_a", adapter.factor_a, true);
            push_param(out, prefix + ".lora_b", adapter.factor_b, true);
        }
    }
};

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

struct Conv2d {
    Tensor weight; // [out, in, k, k]
    Tensor bias;   // [out]
    int stride = 1;
    int pad = 0;

    Conv2d() = default;

    enum class Init { He, Normal02, Zero };

    Conv2d(int in, int out, int k, int stride_, int pad_, Rng& rng, Init init = Init::He,
           bool trainable = true)
        : stride(stride_), pad(pad_) {
        double stddev = 0.0;
        switch (init) {
            case Init::He: stddev = std::sqrt(2.0 / (static_cast<double>(in) * k * k)); break;
            case Init::Normal02: stddev = 0.02; break;
            case Init::Zero: stddev = 0.0; break;
        }
        if (stddev > 0.0)
            weight = Tensor::randn({out, in, k, k}, rng, stddev, trainable);
        else
            weight = Tensor::zeros({out, in, k, k}, trainable);
        bias = Tensor::zeros({out}, trainable);
    }

    Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }

    void collect(ParamList& out, const std::string& prefix, bool trainable) const {
        push_param(out, prefix + ".weight", weight, trainable);
        push_param(out, prefix + ".bias", bias, trainable);
    }
};

// LN with frozen affine parameters (transformer-style, last-dim).
struct LayerNorm {
    Tensor gamma, beta;
    double eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(int c, bool trainable = false) {
        gamma = Tensor::full({c}, 1.0, trainable);
        beta = Tensor::zeros({c}, trainable);
    }

    Tensor forward(const Tensor& x) const { return layernorm_lastdim(x, gamma, beta, eps); }

    void collect(ParamList& out, const std::string& prefix, bool trainable) const {
        push_param(out, prefix + ".gamma", gamma, trainable);
        push_param(out, prefix + ".beta", beta, trainable);
    }
};

// Multi-head scaled dot-product self-attention over [T, C] tokens (or
// [B, T, C] batched). QKV projections are LoraLinear so encoder fine-tuning
// can adapt them; the output projection never carries an adapter.
struct MultiHeadAttention {
    LoraLinear q, k, v, out;
    int heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(int c, int heads_, Rng& rng, double stddev) : heads(heads_) {
        check(c % heads_ == 0, "MultiHeadAttention: width not divisible by head count");
        q = LoraLinear(c, c, rng, stddev, true);
        k = LoraLinear(c, c, rng, stddev, true);
        v = LoraLinear(c, c, rng, stddev, true);
        out = LoraLinear(c, c, rng, stddev, true);
    }

    Tensor forward(const Tensor& x) const;

    void collect(ParamList& o, const std::string& prefix) const {
        q.collect(o, prefix + ".q");
        k.collect(o, prefix + ".k");
        v.collect(o, prefix + ".v");
        out.collect(o, prefix + ".out");
    }
};

} // namespace segsr
