#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "segsr/common.hpp"
#include "segsr/rng.hpp"

namespace segsr {

// Dense row-major tensor of doubles with reverse-mode autodiff.
//
// A Tensor is a cheap handle to a graph node. Ops build the graph lazily;
// nodes whose inputs carry no gradient (or ops run under NoGradGuard) are
// recorded as plain leaves, so frozen branches and inference cost nothing
// extra. backward() on a scalar accumulates into the .grad of every
// requires_grad leaf reachable from it.

using Shape = std::vector<int>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // lazily allocated, same size as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buf() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

// While a guard is alive, no graph edges are recorded.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& s, bool requires_grad = false);
    static Tensor full(const Shape& s, double v, bool requires_grad = false);
    static Tensor from_data(const Shape& s, std::vector<double> data, bool requires_grad = false);
    static Tensor randn(const Shape& s, Rng& rng, double stddev = 1.0, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[i]; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }

    double* data() { return n_->value.data(); }
    const double* data() const { return n_->value.data(); }
    std::vector<double>& values() { return n_->value; }
    const std::vector<double>& values() const { return n_->value; }
    double item() const;

    bool requires_grad() const { return n_ && n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }
    const std::vector<double>& grad() const { return n_->grad; }
    std::vector<double>& grad_mut() { return n_->grad; }
    bool has_grad() const { return n_ && !n_->grad.empty(); }
    void clear_grad() { n_->grad.clear(); }

    // Reverse pass from a scalar ([1]-shaped) tensor.
    void backward(double seed = 1.0) const;

    std::shared_ptr<Node> node() const { return n_; }
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

private:
    std::shared_ptr<Node> n_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);       // equal shapes, or b scalar-shaped
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);       // equal shapes, or b scalar-shaped
Tensor div(const Tensor& a, const Tensor& b);       // equal shapes, or b scalar-shaped
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }

// ---- linear algebra ----
// a: [..., K] (leading dims flattened), b: [K, N] or [N, K] when trans_b.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b = false);
// Batched: a [B, M, K], b [B, K, N] ([B, N, K] when trans_b).
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);
Tensor add_rowvec(const Tensor& x, const Tensor& b); // x [..., C] + b [C] / [1, C]

// ---- reductions / normalization ----
Tensor sum_all(const Tensor& a);    // -> [1]
Tensor mean_all(const Tensor& a);   // -> [1]
Tensor sum_lastdim(const Tensor& a); // [..., C] -> [..., 1]
Tensor softmax_lastdim(const Tensor& a);
// LN over the last dim; gamma/beta optional (pass undefined Tensor for none).
Tensor layernorm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
// LN across channels at each spatial position of a [C, H, W] map, no affine.
Tensor layernorm_chw(const Tensor& x, double eps);

// ---- shape ops ----
Tensor concat_rows(const std::vector<Tensor>& parts); // [r_i, C] -> [sum r, C]
Tensor slice_rows(const Tensor& x, int r0, int r1);   // rows [r0, r1)
Tensor concat_cols(const std::vector<Tensor>& parts); // [..., c_i] -> [..., sum c]
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor chw_to_tokens(const Tensor& x);                // [C,H,W] -> [H*W, C]
Tensor tokens_to_chw(const Tensor& t, int h, int w);  // [h*w, C] -> [C,h,w]

// ---- image / conv ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
Tensor pixel_shuffle(const Tensor& x, int s);         // [C*s*s, H, W] -> [C, sH, sW]
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w, bool align_corners = false);
Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right); // zero pad
Tensor crop2d(const Tensor& x, int top, int bottom, int left, int right);
Tensor roll2d(const Tensor& x, int dy, int dx);       // cyclic shift over H, W
Tensor window_partition(const Tensor& x, int win);    // [C,H,W] -> [nWin, win*win, C]
Tensor window_merge(const Tensor& t, int c, int h, int w, int win);
Tensor global_avg_pool(const Tensor& x);              // [C,H,W] -> [1, C]
Tensor mul_channels(const Tensor& x, const Tensor& s); // [C,H,W] * s [1, C]

// Single-head self-attention without projections fused into one op:
// softmax(x Wq^T (x Wk^T)^T / sqrt(C)) (x Wv^T). Row-order independent:
// reductions run in extended precision so permuting input rows permutes
// output rows bit-exactly.
Tensor slm_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv);

} // namespace segsr
