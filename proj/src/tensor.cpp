#include "segsr/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace segsr {

namespace {

thread_local int g_no_grad_depth = 0;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

std::string shape_str(const Shape& s) {
    std::string r = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

std::shared_ptr<Node> new_leaf(Shape s, std::vector<double> v, bool rg) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(s);
    n->value = std::move(v);
    n->requires_grad = rg;
    return n;
}

bool any_requires(const std::vector<const Tensor*>& ts) {
    for (const Tensor* t : ts)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

// Creates the result node; wires parents + backward only when tracing.
Tensor make_op(Shape s, std::vector<double> v, const std::vector<const Tensor*>& parents,
               std::function<void(Node&)> bwd) {
    auto n = new_leaf(std::move(s), std::move(v), false);
    if (g_no_grad_depth == 0 && any_requires(parents)) {
        n->requires_grad = true;
        for (const Tensor* p : parents) n->parents.push_back(p->node());
        n->backward_fn = std::move(bwd);
    }
    return Tensor(n);
}

int last_dim(const Shape& s) { return s.back(); }

int64_t rows_of(const Shape& s) { // product of all but last dim
    int64_t r = 1;
    for (size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
    return r;
}

} // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Tensor Tensor::zeros(const Shape& s, bool rg) {
    return Tensor(new_leaf(s, std::vector<double>(numel_of(s), 0.0), rg));
}

Tensor Tensor::full(const Shape& s, double v, bool rg) {
    return Tensor(new_leaf(s, std::vector<double>(numel_of(s), v), rg));
}

Tensor Tensor::from_data(const Shape& s, std::vector<double> data, bool rg) {
    check(static_cast<int64_t>(data.size()) == numel_of(s),
          "from_data: size mismatch for shape " + shape_str(s));
    return Tensor(new_leaf(s, std::move(data), rg));
}

Tensor Tensor::randn(const Shape& s, Rng& rng, double stddev, bool rg) {
    std::vector<double> v(numel_of(s));
    for (double& x : v) x = rng.normal(0.0, stddev);
    return Tensor(new_leaf(s, std::move(v), rg));
}

double Tensor::item() const {
    check(numel() == 1, "item: tensor is not scalar-shaped");
    return n_->value[0];
}

void Tensor::backward(double seed) const {
    check(defined() && numel() == 1, "backward: root must be a scalar tensor");
    if (!n_->requires_grad) return;

    // Post-order DFS, then run backward functions in reverse.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{n_.get(), 0}};
    seen.insert(n_.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    n_->grad_buf()[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

// Shapes must match exactly, or b must be scalar-shaped (numel 1).
enum class BMode { Same, ScalarB };

BMode binary_mode(const Tensor& a, const Tensor& b, const char* op) {
    if (b.numel() == 1 && a.numel() != 1) return BMode::ScalarB;
    check(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    return BMode::Same;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    BMode m = binary_mode(a, b, "add");
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    if (m == BMode::Same)
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] + pb[i];
    else
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] + pb[0];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {&a, &b}, [an, bn, m](Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            auto& ga = an->grad_buf();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buf();
            if (m == BMode::Same)
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            else
                for (size_t i = 0; i < g.size(); ++i) gb[0] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    BMode m = binary_mode(a, b, "sub");
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    if (m == BMode::Same)
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] - pb[i];
    else
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] - pb[0];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {&a, &b}, [an, bn, m](Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            auto& ga = an->grad_buf();
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buf();
            if (m == BMode::Same)
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            else
                for (size_t i = 0; i < g.size(); ++i) gb[0] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    BMode m = binary_mode(a, b, "mul");
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    if (m == BMode::Same)
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] * pb[i];
    else
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] * pb[0];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {&a, &b}, [an, bn, m](Node& self) {
        const auto& g = self.grad;
        const double* va = an->value.data();
        const double* vb = bn->value.data();
        if (an->requires_grad) {
            auto& ga = an->grad_buf();
            if (m == BMode::Same)
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
            else
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[0];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buf();
            if (m == BMode::Same)
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
            else
                for (size_t i = 0; i < g.size(); ++i) gb[0] += g[i] * va[i];
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    BMode m = binary_mode(a, b, "div");
    std::vector<double> out(a.numel());
    const double* pa = a.data();
    const double* pb = b.data();
    if (m == BMode::Same)
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] / pb[i];
    else
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = pa[i] / pb[0];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {&a, &b}, [an, bn, m](Node& self) {
        const auto& g = self.grad;
        const double* va = an->value.data();
        const double* vb = bn->value.data();
        if (an->requires_grad) {
            auto& ga = an->grad_buf();
            if (m == BMode::Same)
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / vb[i];
            else
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / vb[0];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buf();
            if (m == BMode::Same)
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
            else
                for (size_t i = 0; i < g.size(); ++i) gb[0] -= g[i] * va[i] / (vb[0] * vb[0]);
        }
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] + c;
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {&a}, [an](Node& self) {
        auto& ga = an->grad_buf();
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

Tensor mul_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] * c;
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {&a}, [an, c](Node& self) {
        auto& ga = an->grad_buf();
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * c;
    });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor abs(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::abs(a.data()[i]);
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {&a}, [an](Node& self) {
        auto& ga = an->grad_buf();
        const double* v = an->value.data();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            double s = v[i] > 0.0 ? 1.0 : (v[i] < 0.0 ? -1.0 : 0.0);
            ga[i] += self.grad[i] * s;
        }
    });
}

Tensor sqrt(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::sqrt(a.data()[i]);
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {&a}, [an](Node& self) {
        auto& ga = an->grad_buf();
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * 0.5 / self.value[i];
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {&a}, [an](Node& self) {
        auto& ga = an->grad_buf();
        const double* v = an->value.data();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (v[i] > 0.0) ga[i] += self.grad[i];
    });
}

Tensor gelu(const Tensor& a) {
    // Exact erf form.
    std::vector<double> out(a.numel());
    const double inv_sqrt2 = 0.7071067811865475244;
    for (int64_t i = 0; i < a.numel(); ++i) {
        double x = a.data()[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {&a}, [an, inv_sqrt2](Node& self) {
        auto& ga = an->grad_buf();
        const double* v = an->value.data();
        const double inv_sqrt2pi = 0.3989422804014326779;
        for (size_t i = 0; i < self.grad.size(); ++i) {
            double x = v[i];
            double d = 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
            ga[i] += self.grad[i] * d;
        }
    });
}

Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {&a}, [an](Node& self) {
        auto& ga = an->grad_buf();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            double s = self.value[i];
            ga[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_b) {
    check(a.rank() >= 2 && b.rank() == 2, "matmul: a must be rank>=2, b rank 2");
    int64_t m = rows_of(a.shape());
    int k = last_dim(a.shape());
    int kb = trans_b ? b.dim(1) : b.dim(0);
    int n = trans_b ? b.dim(0) : b.dim(1);
    check(k == kb, "matmul: inner dim mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));

    std::vector<double> out(m * n);
    {
        CMap A(a.data(), m, k);
        CMap B(b.data(), b.dim(0), b.dim(1));
        MMap C(out.data(), m, n);
        if (trans_b)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A * B;
    }
    Shape os(a.shape().begin(), a.shape().end() - 1);
    os.push_back(n);
    auto an = a.node(), bn = b.node();
    return make_op(std::move(os), std::move(out), {&a, &b}, [an, bn, m, k, n, trans_b](Node& self) {
        CMap G(self.grad.data(), m, n);
        if (an->requires_grad) {
            MMap GA(an->grad_buf().data(), m, k);
            CMap B(bn->value.data(), trans_b ? n : k, trans_b ? k : n);
            if (trans_b)
                GA.noalias() += G * B;
            else
                GA.noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
            CMap A(an->value.data(), m, k);
            MMap GB(bn->grad_buf().data(), trans_b ? n : k, trans_b ? k : n);
            if (trans_b)
                GB.noalias() += G.transpose() * A;
            else
                GB.noalias() += A.transpose() * G;
        }
    });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
    check(a.rank() == 3 && b.rank() == 3, "bmm: rank-3 tensors required");
    int bs = a.dim(0), m = a.dim(1), k = a.dim(2);
    check(b.dim(0) == bs, "bmm: batch mismatch");
    int kb = trans_b ? b.dim(2) : b.dim(1);
    int n = trans_b ? b.dim(1) : b.dim(2);
    check(k == kb, "bmm: inner dim mismatch");

    std::vector<double> out(static_cast<size_t>(bs) * m * n);
    for (int i = 0; i < bs; ++i) {
        CMap A(a.data() + static_cast<int64_t>(i) * m * k, m, k);
        CMap B(b.data() + static_cast<int64_t>(i) * (trans_b ? n * k : k * n), trans_b ? n : k,
               trans_b ? k : n);
        MMap C(out.data() + static_cast<int64_t>(i) * m * n, m, n);
        if (trans_b)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A * B;
    }
    auto an = a.node(), bn = b.node();
    return make_op({bs, m, n}, std::move(out), {&a, &b}, [an, bn, bs, m, k, n, trans_b](Node& self) {
        for (int i = 0; i < bs; ++i) {
            CMap G(self.grad.data() + static_cast<int64_t>(i) * m * n, m, n);
            const double* bval = bn->value.data() + static_cast<int64_t>(i) * k * n;
            const double* aval = an->value.data() + static_cast<int64_t>(i) * m * k;
            if (an->requires_grad) {
                MMap GA(an->grad_buf().data() + static_cast<int64_t>(i) * m * k, m, k);
                CMap B(bval, trans_b ? n : k, trans_b ? k : n);
                if (trans_b)
                    GA.noalias() += G * B;
                else
                    GA.noalias() += G * B.transpose();
            }
            if (bn->requires_grad) {
                CMap A(aval, m, k);
                MMap GB(bn->grad_buf().data() + static_cast<int64_t>(i) * k * n, trans_b ? n : k,
                        trans_b ? k : n);
                if (trans_b)
                    GB.noalias() += G.transpose() * A;
                else
                    GB.noalias() += A.transpose() * G;
            }
        }
    });
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    int c = last_dim(x.shape());
    check(b.numel() == c, "add_rowvec: bias length mismatch");
    int64_t rows = rows_of(x.shape());
    std::vector<double> out(x.numel());
    const double* px = x.data();
    const double* pb = b.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < c; ++i) out[r * c + i] = px[r * c + i] + pb[i];
    auto xn = x.node(), bn = b.node();
    return make_op(x.shape(), std::move(out), {&x, &b}, [xn, bn, rows, c](Node& self) {
        if (xn->requires_grad) {
            auto& gx = xn->grad_buf();
            for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buf();
            for (int64_t r = 0; r < rows; ++r)
                for (int i = 0; i < c; ++i) gb[i] += self.grad[r * c + i];
        }
    });
}

// ---------------------------------------------------------------------------
// reductions / normalization
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += a.data()[i];
    auto an = a.node();
    return make_op({1}, {s}, {&a}, [an](Node& self) {
        auto& ga = an->grad_buf();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[0];
    });
}

Tensor mean_all(const Tensor& a) {
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += a.data()[i];
    double inv = 1.0 / static_cast<double>(a.numel());
    auto an = a.node();
    return make_op({1}, {s * inv}, {&a}, [an, inv](Node& self) {
        auto& ga = an->grad_buf();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[0] * inv;
    });
}

Tensor sum_lastdim(const Tensor& a) {
    int c = last_dim(a.shape());
    int64_t rows = rows_of(a.shape());
    std::vector<double> out(rows, 0.0);
    for (int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < c; ++i) out[r] += a.data()[r * c + i];
    Shape os(a.shape().begin(), a.shape().end() - 1);
    os.push_back(1);
    auto an = a.node();
    return make_op(std::move(os), std::move(out), {&a}, [an, rows, c](Node& self) {
        auto& ga = an->grad_buf();
        for (int64_t r = 0; r < rows; ++r)
            for (int i = 0; i < c; ++i) ga[r * c + i] += self.grad[r];
    });
}

Tensor softmax_lastdim(const Tensor& a) {
    int c = last_dim(a.shape());
    int64_t rows = rows_of(a.shape());
    std::vector<double> out(a.numel());
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = a.data() + r * c;
        double mx = row[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, row[i]);
        double den = 0.0;
        for (int i = 0; i < c; ++i) {
            double e = std::exp(row[i] - mx);
            out[r * c + i] = e;
            den += e;
        }
        for (int i = 0; i < c; ++i) out[r * c + i] /= den;
    }
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {&a}, [an, rows, c](Node& self) {
        auto& ga = an->grad_buf();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * c;
            const double* g = self.grad.data() + r * c;
            double dot = 0.0;
            for (int i = 0; i < c; ++i) dot += g[i] * y[i];
            for (int i = 0; i < c; ++i) ga[r * c + i] += y[i] * (g[i] - dot);
        }
    });
}

namespace {

// Shared LN kernel over contiguous groups of size c; gamma/beta may be null.
struct LnAux {
    std::vector<double> mean, inv_std;
};

Tensor layernorm_groups(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        int64_t rows, int c, int64_t stride_r, int64_t stride_c, Shape out_shape) {
    // stride-aware: element (r, i) sits at r*stride_r + i*stride_c
    auto aux = std::make_shared<LnAux>();
    aux->mean.resize(rows);
    aux->inv_std.resize(rows);
    std::vector<double> out(x.numel());
    const double* px = x.data();
    const double* pg = gamma.defined() ? gamma.data() : nullptr;
    const double* pb = beta.defined() ? beta.data() : nullptr;
    for (int64_t r = 0; r < rows; ++r) {
        double m = 0.0;
        for (int i = 0; i < c; ++i) m += px[r * stride_r + i * stride_c];
        m /= c;
        double var = 0.0;
        for (int i = 0; i < c; ++i) {
            double d = px[r * stride_r + i * stride_c] - m;
            var += d * d;
        }
        var /= c;
        double is = 1.0 / std::sqrt(var + eps);
        aux->mean[r] = m;
        aux->inv_std[r] = is;
        for (int i = 0; i < c; ++i) {
            int64_t idx = r * stride_r + i * stride_c;
            double xh = (px[idx] - m) * is;
            if (pg) xh = xh * pg[i] + (pb ? pb[i] : 0.0);
            out[idx] = xh;
        }
    }
    auto xn = x.node();
    auto gn = gamma.defined() ? gamma.node() : nullptr;
    auto bn = beta.defined() ? beta.node() : nullptr;
    std::vector<const Tensor*> parents{&x};
    if (gamma.defined()) {
        parents.push_back(&gamma);
        parents.push_back(&beta);
    }
    return make_op(std::move(out_shape), std::move(out), parents,
                   [xn, gn, bn, aux, rows, c, stride_r, stride_c](Node& self) {
        const double* px = xn->value.data();
        const double* pg = gn ? gn->value.data() : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
            double m = aux->mean[r];
            double is = aux->inv_std[r];
            // dy w.r.t. normalized value
            double sum_d = 0.0, sum_dx = 0.0;
            for (int i = 0; i < c; ++i) {
                int64_t idx = r * stride_r + i * stride_c;
                double xh = (px[idx] - m) * is;
                double d = self.grad[idx] * (pg ? pg[i] : 1.0);
                sum_d += d;
                sum_dx += d * xh;
            }
            if (xn->requires_grad) {
                auto& gx = xn->grad_buf();
                for (int i = 0; i < c; ++i) {
                    int64_t idx = r * stride_r + i * stride_c;
                    double xh = (px[idx] - m) * is;
                    double d = self.grad[idx] * (pg ? pg[i] : 1.0);
                    gx[idx] += is * (d - sum_d / c - xh * sum_dx / c);
                }
            }
            if (gn && gn->requires_grad) {
                auto& gg = gn->grad_buf();
                for (int i = 0; i < c; ++i) {
                    int64_t idx = r * stride_r + i * stride_c;
                    double xh = (px[idx] - m) * is;
                    gg[i] += self.grad[idx] * xh;
                }
            }
            if (bn && bn->requires_grad) {
                auto& gb = bn->grad_buf();
                for (int i = 0; i < c; ++i) gb[i] += self.grad[r * stride_r + i * stride_c];
            }
        }
    });
}

} // namespace

Tensor layernorm_lastdim(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    int c = last_dim(x.shape());
    if (gamma.defined()) {
        check(gamma.numel() == c && beta.defined() && beta.numel() == c,
              "layernorm: affine parameter length mismatch");
    }
    return layernorm_groups(x, gamma, beta, eps, rows_of(x.shape()), c, c, 1, x.shape());
}

Tensor layernorm_chw(const Tensor& x, double eps) {
    check(x.rank() == 3, "layernorm_chw: [C,H,W] expected");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    // groups run across channels: element (pos, ch) at ch*H*W + pos
    return layernorm_groups(x, Tensor(), Tensor(), eps, static_cast<int64_t>(h) * w, c, 1,
                            static_cast<int64_t>(h) * w, x.shape());
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat_rows: no inputs");
    int c = last_dim(parts[0].shape());
    int total = 0;
    for (const Tensor& p : parts) {
        check(p.rank() == 2 && p.dim(1) == c, "concat_rows: incompatible shapes");
        total += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total) * c);
    for (const Tensor& p : parts) out.insert(out.end(), p.data(), p.data() + p.numel());

    std::vector<std::shared_ptr<Node>> nodes;
    bool rg = false;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        rg = rg || p.requires_grad();
    }
    auto n = new_leaf({total, c}, std::move(out), false);
    if (grad_enabled() && rg) {
        n->requires_grad = true;
        n->parents = nodes;
        n->backward_fn = [nodes](Node& self) {
            int64_t off = 0;
            for (auto& p : nodes) {
                int64_t sz = static_cast<int64_t>(p->value.size());
                if (p->requires_grad) {
                    auto& gp = p->grad_buf();
                    for (int64_t i = 0; i < sz; ++i) gp[i] += self.grad[off + i];
                }
                off += sz;
            }
        };
    }
    return Tensor(n);
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
    check(x.rank() == 2 && r0 >= 0 && r1 <= x.dim(0) && r0 < r1, "slice_rows: bad range");
    int c = x.dim(1);
    std::vector<double> out(x.data() + static_cast<int64_t>(r0) * c,
                            x.data() + static_cast<int64_t>(r1) * c);
    auto xn = x.node();
    return make_op({r1 - r0, c}, std::move(out), {&x}, [xn, r0, c](Node& self) {
        auto& gx = xn->grad_buf();
        for (size_t i = 0; i < self.grad.size(); ++i) gx[static_cast<int64_t>(r0) * c + i] += self.grad[i];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat_cols: no inputs");
    int64_t rows = rows_of(parts[0].shape());
    int total = 0;
    for (const Tensor& p : parts) {
        check(rows_of(p.shape()) == rows, "concat_cols: row count mismatch");
        total += last_dim(p.shape());
    }
    std::vector<double> out(rows * total);
    int off = 0;
    for (const Tensor& p : parts) {
        int c = last_dim(p.shape());
        for (int64_t r = 0; r < rows; ++r)
            std::memcpy(out.data() + r * total + off, p.data() + r * c, sizeof(double) * c);
        off += c;
    }
    Shape os(parts[0].shape().begin(), parts[0].shape().end() - 1);
    os.push_back(total);

    std::vector<std::shared_ptr<Node>> nodes;
    bool rg = false;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        rg = rg || p.requires_grad();
    }
    auto n = new_leaf(std::move(os), std::move(out), false);
    if (grad_enabled() && rg) {
        n->requires_grad = true;
        n->parents = nodes;
        n->backward_fn = [nodes, rows, total](Node& self) {
            int off = 0;
            for (auto& p : nodes) {
                int c = p->shape.back();
                if (p->requires_grad) {
                    auto& gp = p->grad_buf();
                    for (int64_t r = 0; r < rows; ++r)
                        for (int i = 0; i < c; ++i) gp[r * c + i] += self.grad[r * total + off + i];
                }
                off += c;
            }
        };
    }
    return Tensor(n);
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
    int c = last_dim(x.shape());
    check(c0 >= 0 && c1 <= c && c0 < c1, "slice_cols: bad range");
    int64_t rows = rows_of(x.shape());
    int w = c1 - c0;
    std::vector<double> out(rows * w);
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(out.data() + r * w, x.data() + r * c + c0, sizeof(double) * w);
    Shape os(x.shape().begin(), x.shape().end() - 1);
    os.push_back(w);
    auto xn = x.node();
    return make_op(std::move(os), std::move(out), {&x}, [xn, rows, c, c0, w](Node& self) {
        auto& gx = xn->grad_buf();
        for (int64_t r = 0; r < rows; ++r)
            for (int i = 0; i < w; ++i) gx[r * c + c0 + i] += self.grad[r * w + i];
    });
}

Tensor chw_to_tokens(const Tensor& x) {
    check(x.rank() == 3, "chw_to_tokens: [C,H,W] expected");
    int c = x.dim(0);
    int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    std::vector<double> out(x.numel());
    for (int ch = 0; ch < c; ++ch)
        for (int64_t p = 0; p < hw; ++p) out[p * c + ch] = x.data()[ch * hw + p];
    auto xn = x.node();
    return make_op({static_cast<int>(hw), c}, std::move(out), {&x}, [xn, c, hw](Node& self) {
        auto& gx = xn->grad_buf();
        for (int ch = 0; ch < c; ++ch)
            for (int64_t p = 0; p < hw; ++p) gx[ch * hw + p] += self.grad[p * c + ch];
    });
}

Tensor tokens_to_chw(const Tensor& t, int h, int w) {
    check(t.rank() == 2 && t.dim(0) == h * w, "tokens_to_chw: token count mismatch");
    int c = t.dim(1);
    int64_t hw = static_cast<int64_t>(h) * w;
    std::vector<double> out(t.numel());
    for (int ch = 0; ch < c; ++ch)
        for (int64_t p = 0; p < hw; ++p) out[ch * hw + p] = t.data()[p * c + ch];
    auto tn = t.node();
    return make_op({c, h, w}, std::move(out), {&t}, [tn, c, hw](Node& self) {
        auto& gt = tn->grad_buf();
        for (int ch = 0; ch < c; ++ch)
            for (int64_t p = 0; p < hw; ++p) gt[p * c + ch] += self.grad[ch * hw + p];
    });
}

// ---------------------------------------------------------------------------
// image / conv
// ---------------------------------------------------------------------------

namespace {

void im2col(const double* x, int cin, int h, int w, int kh, int kw, int stride, int pad, int oh,
            int ow, double* cols) {
    // cols: [cin*kh*kw, oh*ow] row-major
    int64_t on = static_cast<int64_t>(oh) * ow;
    for (int c = 0; c < cin; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                double* dst = cols + (static_cast<int64_t>(c) * kh * kw + ky * kw + kx) * on;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst + static_cast<int64_t>(oy) * ow, dst + static_cast<int64_t>(oy + 1) * ow, 0.0);
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride - pad + kx;
                        dst[static_cast<int64_t>(oy) * ow + ox] =
                            (ix >= 0 && ix < w) ? x[(static_cast<int64_t>(c) * h + iy) * w + ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, double* gx) {
    int64_t on = static_cast<int64_t>(oh) * ow;
    for (int c = 0; c < cin; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const double* src = cols + (static_cast<int64_t>(c) * kh * kw + ky * kw + kx) * on;
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w)
                            gx[(static_cast<int64_t>(c) * h + iy) * w + ix] += src[static_cast<int64_t>(oy) * ow + ox];
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    check(x.rank() == 3 && w.rank() == 4, "conv2d: x [C,H,W], w [Cout,Cin,kh,kw] expected");
    int cin = x.dim(0), h = x.dim(1), ww = x.dim(2);
    int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    check(w.dim(1) == cin, "conv2d: channel mismatch x " + std::to_string(cin) + " vs w " +
                               std::to_string(w.dim(1)));
    int oh = (h + 2 * pad - kh) / stride + 1;
    int ow = (ww + 2 * pad - kw) / stride + 1;
    check(oh >= 1 && ow >= 1, "conv2d: output would be empty");
    if (bias.defined()) check(bias.numel() == cout, "conv2d: bias length mismatch");

    int64_t kdim = static_cast<int64_t>(cin) * kh * kw;
    int64_t on = static_cast<int64_t>(oh) * ow;
    std::vector<double> cols(kdim * on);
    im2col(x.data(), cin, h, ww, kh, kw, stride, pad, oh, ow, cols.data());
    std::vector<double> out(static_cast<size_t>(cout) * on);
    {
        CMap W(w.data(), cout, kdim);
        CMap Cls(cols.data(), kdim, on);
        MMap O(out.data(), cout, on);
        O.noalias() = W * Cls;
    }
    if (bias.defined()) {
        for (int co = 0; co < cout; ++co) {
            double b = bias.data()[co];
            for (int64_t i = 0; i < on; ++i) out[co * on + i] += b;
        }
    }
    auto xn = x.node(), wn = w.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    std::vector<const Tensor*> parents{&x, &w};
    if (bias.defined()) parents.push_back(&bias);
    return make_op({cout, oh, ow}, std::move(out), parents,
                   [xn, wn, bn, cin, h, ww, cout, kh, kw, stride, pad, oh, ow, kdim, on](Node& self) {
        // im2col is recomputed here to keep forward nodes small
        std::vector<double> cols(kdim * on);
        im2col(xn->value.data(), cin, h, ww, kh, kw, stride, pad, oh, ow, cols.data());
        CMap G(self.grad.data(), cout, on);
        if (wn->requires_grad) {
            CMap Cls(cols.data(), kdim, on);
            MMap GW(wn->grad_buf().data(), cout, kdim);
            GW.noalias() += G * Cls.transpose();
        }
        if (bn && bn->requires_grad) {
            auto& gb = bn->grad_buf();
            for (int co = 0; co < cout; ++co) {
                double s = 0.0;
                for (int64_t i = 0; i < on; ++i) s += self.grad[co * on + i];
                gb[co] += s;
            }
        }
        if (xn->requires_grad) {
            std::vector<double> gcols(kdim * on);
            CMap W(wn->value.data(), cout, kdim);
            MMap GC(gcols.data(), kdim, on);
            GC.noalias() = W.transpose() * G;
            col2im_add(gcols.data(), cin, h, ww, kh, kw, stride, pad, oh, ow, xn->grad_buf().data());
        }
    });
}

Tensor pixel_shuffle(const Tensor& x, int s) {
    check(x.rank() == 3, "pixel_shuffle: [C,H,W] expected");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    check(s >= 1, "pixel_shuffle: scale must be >= 1");
    check(c % (s * s) == 0, "pixel_shuffle: channels " + std::to_string(c) +
                                " not divisible by s^2 = " + std::to_string(s * s));
    int co = c / (s * s);
    int ho = h * s, wo = w * s;
    std::vector<double> out(x.numel());
    for (int oc = 0; oc < co; ++oc)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                int iy = oy / s, dy = oy % s;
                int ix = ox / s, dx = ox % s;
                int ic = oc * s * s + dy * s + dx;
                out[(static_cast<int64_t>(oc) * ho + oy) * wo + ox] =
                    x.data()[(static_cast<int64_t>(ic) * h + iy) * w + ix];
            }
    auto xn = x.node();
    return make_op({co, ho, wo}, std::move(out), {&x}, [xn, s, co, h, w, ho, wo](Node& self) {
        auto& gx = xn->grad_buf();
        for (int oc = 0; oc < co; ++oc)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    int iy = oy / s, dy = oy % s;
                    int ix = ox / s, dx = ox % s;
                    int ic = oc * s * s + dy * s + dx;
                    gx[(static_cast<int64_t>(ic) * h + iy) * w + ix] +=
                        self.grad[(static_cast<int64_t>(oc) * ho + oy) * wo + ox];
                }
    });
}

namespace {

struct BilinearTaps {
    std::vector<int> i0, i1;
    std::vector<double> w0, w1;
};

BilinearTaps bilinear_axis(int in, int out, bool align) {
    BilinearTaps t;
    t.i0.resize(out);
    t.i1.resize(out);
    t.w0.resize(out);
    t.w1.resize(out);
    for (int o = 0; o < out; ++o) {
        double src;
        if (align)
            src = out == 1 ? 0.0 : static_cast<double>(o) * (in - 1) / (out - 1);
        else
            src = (o + 0.5) * in / out - 0.5;
        src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
        int i0 = static_cast<int>(std::floor(src));
        int i1 = std::min(i0 + 1, in - 1);
        double f = src - i0;
        t.i0[o] = i0;
        t.i1[o] = i1;
        t.w0[o] = 1.0 - f;
        t.w1[o] = f;
    }
    return t;
}

} // namespace

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w, bool align_corners) {
    check(x.rank() == 3, "bilinear_resize: [C,H,W] expected");
    check(out_h >= 1 && out_w >= 1, "bilinear_resize: non-positive target size");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto ty = std::make_shared<BilinearTaps>(bilinear_axis(h, out_h, align_corners));
    auto tx = std::make_shared<BilinearTaps>(bilinear_axis(w, out_w, align_corners));
    std::vector<double> out(static_cast<size_t>(c) * out_h * out_w);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = x.data() + static_cast<int64_t>(ch) * h * w;
        double* dst = out.data() + static_cast<int64_t>(ch) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                double v = ty->w0[oy] * (tx->w0[ox] * src[ty->i0[oy] * w + tx->i0[ox]] +
                                         tx->w1[ox] * src[ty->i0[oy] * w + tx->i1[ox]]) +
                           ty->w1[oy] * (tx->w0[ox] * src[ty->i1[oy] * w + tx->i0[ox]] +
                                         tx->w1[ox] * src[ty->i1[oy] * w + tx->i1[ox]]);
                dst[static_cast<int64_t>(oy) * out_w + ox] = v;
            }
    }
    auto xn = x.node();
    return make_op({c, out_h, out_w}, std::move(out), {&x},
                   [xn, ty, tx, c, h, w, out_h, out_w](Node& self) {
        auto& gx = xn->grad_buf();
        for (int ch = 0; ch < c; ++ch) {
            double* g = gx.data() + static_cast<int64_t>(ch) * h * w;
            const double* go = self.grad.data() + static_cast<int64_t>(ch) * out_h * out_w;
            for (int oy = 0; oy < out_h; ++oy)
                for (int ox = 0; ox < out_w; ++ox) {
                    double gv = go[static_cast<int64_t>(oy) * out_w + ox];
                    g[ty->i0[oy] * w + tx->i0[ox]] += gv * ty->w0[oy] * tx->w0[ox];
                    g[ty->i0[oy] * w + tx->i1[ox]] += gv * ty->w0[oy] * tx->w1[ox];
                    g[ty->i1[oy] * w + tx->i0[ox]] += gv * ty->w1[oy] * tx->w0[ox];
                    g[ty->i1[oy] * w + tx->i1[ox]] += gv * ty->w1[oy] * tx->w1[ox];
                }
        }
    });
}

Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right) {
    check(x.rank() == 3, "pad2d: [C,H,W] expected");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int ho = h + top + bottom, wo = w + left + right;
    std::vector<double> out(static_cast<size_t>(c) * ho * wo, 0.0);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            std::memcpy(out.data() + (static_cast<int64_t>(ch) * ho + y + top) * wo + left,
                        x.data() + (static_cast<int64_t>(ch) * h + y) * w, sizeof(double) * w);
    auto xn = x.node();
    return make_op({c, ho, wo}, std::move(out), {&x}, [xn, c, h, w, ho, wo, top, left](Node& self) {
        auto& gx = xn->grad_buf();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    gx[(static_cast<int64_t>(ch) * h + y) * w + xx] +=
                        self.grad[(static_cast<int64_t>(ch) * ho + y + top) * wo + left + xx];
    });
}

Tensor crop2d(const Tensor& x, int top, int bottom, int left, int right) {
    check(x.rank() == 3, "crop2d: [C,H,W] expected");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int ho = h - top - bottom, wo = w - left - right;
    check(ho >= 1 && wo >= 1, "crop2d: crop exceeds size");
    std::vector<double> out(static_cast<size_t>(c) * ho * wo);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y)
            std::memcpy(out.data() + (static_cast<int64_t>(ch) * ho + y) * wo,
                        x.data() + (static_cast<int64_t>(ch) * h + y + top) * w + left,
                        sizeof(double) * wo);
    auto xn = x.node();
    return make_op({c, ho, wo}, std::move(out), {&x}, [xn, c, h, w, ho, wo, top, left](Node& self) {
        auto& gx = xn->grad_buf();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < ho; ++y)
                for (int xx = 0; xx < wo; ++xx)
                    gx[(static_cast<int64_t>(ch) * h + y + top) * w + left + xx] +=
                        self.grad[(static_cast<int64_t>(ch) * ho + y) * wo + xx];
    });
}

Tensor roll2d(const Tensor& x, int dy, int dx) {
    check(x.rank() == 3, "roll2d: [C,H,W] expected");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto wrap = [](int v, int n) { return ((v % n) + n) % n; };
    std::vector<double> out(x.numel());
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                out[(static_cast<int64_t>(ch) * h + y) * w + xx] =
                    x.data()[(static_cast<int64_t>(ch) * h + wrap(y - dy, h)) * w + wrap(xx - dx, w)];
    auto xn = x.node();
    return make_op(x.shape(), std::move(out), {&x}, [xn, c, h, w, dy, dx, wrap](Node& self) {
        auto& gx = xn->grad_buf();
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    gx[(static_cast<int64_t>(ch) * h + wrap(y - dy, h)) * w + wrap(xx - dx, w)] +=
                        self.grad[(static_cast<int64_t>(ch) * h + y) * w + xx];
    });
}

Tensor window_partition(const Tensor& x, int win) {
    check(x.rank() == 3, "window_partition: [C,H,W] expected");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    check(h % win == 0 && w % win == 0, "window_partition: size not divisible by window");
    int nh = h / win, nw = w / win, nwin = nh * nw, t = win * win;
    std::vector<double> out(x.numel());
    for (int bw = 0; bw < nwin; ++bw) {
        int by = bw / nw, bx = bw % nw;
        for (int ty = 0; ty < win; ++ty)
            for (int tx = 0; tx < win; ++tx)
                for (int ch = 0; ch < c; ++ch)
                    out[(static_cast<int64_t>(bw) * t + ty * win + tx) * c + ch] =
                        x.data()[(static_cast<int64_t>(ch) * h + by * win + ty) * w + bx * win + tx];
    }
    auto xn = x.node();
    return make_op({nwin, t, c}, std::move(out), {&x}, [xn, c, h, w, win, nw, nwin, t](Node& self) {
        auto& gx = xn->grad_buf();
        for (int bw = 0; bw < nwin; ++bw) {
            int by = bw / nw, bx = bw % nw;
            for (int ty = 0; ty < win; ++ty)
                for (int tx = 0; tx < win; ++tx)
                    for (int ch = 0; ch < c; ++ch)
                        gx[(static_cast<int64_t>(ch) * h + by * win + ty) * w + bx * win + tx] +=
                            self.grad[(static_cast<int64_t>(bw) * t + ty * win + tx) * c + ch];
        }
    });
}

Tensor window_merge(const Tensor& tns, int c, int h, int w, int win) {
    check(tns.rank() == 3, "window_merge: [nWin, win*win, C] expected");
    int nh = h / win, nw = w / win, nwin = nh * nw, t = win * win;
    check(tns.dim(0) == nwin && tns.dim(1) == t && tns.dim(2) == c, "window_merge: shape mismatch");
    std::vector<double> out(static_cast<size_t>(c) * h * w);
    for (int bw = 0; bw < nwin; ++bw) {
        int by = bw / nw, bx = bw % nw;
        for (int ty = 0; ty < win; ++ty)
            for (int tx = 0; tx < win; ++tx)
                for (int ch = 0; ch < c; ++ch)
                    out[(static_cast<int64_t>(ch) * h + by * win + ty) * w + bx * win + tx] =
                        tns.data()[(static_cast<int64_t>(bw) * t + ty * win + tx) * c + ch];
    }
    auto xn = tns.node();
    return make_op({c, h, w}, std::move(out), {&tns}, [xn, c, h, w, win, nw, nwin, t](Node& self) {
        auto& gx = xn->grad_buf();
        for (int bw = 0; bw < nwin; ++bw) {
            int by = bw / nw, bx = bw % nw;
            for (int ty = 0; ty < win; ++ty)
                for (int tx = 0; tx < win; ++tx)
                    for (int ch = 0; ch < c; ++ch)
                        gx[(static_cast<int64_t>(bw) * t + ty * win + tx) * c + ch] +=
                            self.grad[(static_cast<int64_t>(ch) * h + by * win + ty) * w + bx * win + tx];
        }
    });
}

Tensor global_avg_pool(const Tensor& x) {
    check(x.rank() == 3, "global_avg_pool: [C,H,W] expected");
    int c = x.dim(0);
    int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    std::vector<double> out(c, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int64_t i = 0; i < hw; ++i) s += x.data()[ch * hw + i];
        out[ch] = s / hw;
    }
    auto xn = x.node();
    return make_op({1, c}, std::move(out), {&x}, [xn, c, hw](Node& self) {
        auto& gx = xn->grad_buf();
        for (int ch = 0; ch < c; ++ch) {
            double g = self.grad[ch] / hw;
            for (int64_t i = 0; i < hw; ++i) gx[ch * hw + i] += g;
        }
    });
}

Tensor mul_channels(const Tensor& x, const Tensor& s) {
    check(x.rank() == 3 && s.numel() == x.dim(0), "mul_channels: scale length mismatch");
    int c = x.dim(0);
    int64_t hw = static_cast<int64_t>(x.dim(1)) * x.dim(2);
    std::vector<double> out(x.numel());
    for (int ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < hw; ++i) out[ch * hw + i] = x.data()[ch * hw + i] * s.data()[ch];
    auto xn = x.node(), sn = s.node();
    return make_op(x.shape(), std::move(out), {&x, &s}, [xn, sn, c, hw](Node& self) {
        if (xn->requires_grad) {
            auto& gx = xn->grad_buf();
            for (int ch = 0; ch < c; ++ch)
                for (int64_t i = 0; i < hw; ++i) gx[ch * hw + i] += self.grad[ch * hw + i] * sn->value[ch];
        }
        if (sn->requires_grad) {
            auto& gs = sn->grad_buf();
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                for (int64_t i = 0; i < hw; ++i) acc += self.grad[ch * hw + i] * xn->value[ch * hw + i];
                gs[ch] += acc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// fused SLM attention
// ---------------------------------------------------------------------------

namespace {

// Per-row projection with scalar loops. Each output row depends only on its
// own input row, so permuting input rows permutes outputs bit-exactly
// (vectorized GEMM tail handling would not guarantee that).
void project_rows(const double* x, const double* w, int n, int c, double* out) {
    for (int r = 0; r < n; ++r)
        for (int o = 0; o < c; ++o) {
            double acc = 0.0;
            for (int i = 0; i < c; ++i) acc += x[r * c + i] * w[o * c + i];
            out[r * c + o] = acc;
        }
}

} // namespace

Tensor slm_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
    check(x.rank() == 2, "slm_attention: [n,C] tokens expected");
    int n = x.dim(0), c = x.dim(1);
    check(n >= 1, "slm_attention: empty token sequence");
    for (const Tensor* w : {&wq, &wk, &wv})
        check(w->rank() == 2 && w->dim(0) == c && w->dim(1) == c, "slm_attention: weight must be [C,C]");

    auto q = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * c);
    auto k = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * c);
    auto v = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * c);
    project_rows(x.data(), wq.data(), n, c, q->data());
    project_rows(x.data(), wk.data(), n, c, k->data());
    project_rows(x.data(), wv.data(), n, c, v->data());

    double scale = 1.0 / std::sqrt(static_cast<double>(c));
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * n);
    std::vector<double> out(static_cast<size_t>(n) * c);
    std::vector<double> escore(n);
    for (int r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int i = 0; i < c; ++i) s += (*q)[r * c + i] * (*k)[j * c + i];
            s *= scale;
            escore[j] = s;
            mx = std::max(mx, s);
        }
        // extended-precision reductions keep results independent of row order
        __float128 den = 0;
        for (int j = 0; j < n; ++j) {
            escore[j] = std::exp(escore[j] - mx);
            den += static_cast<__float128>(escore[j]);
        }
        double dend = static_cast<double>(den);
        for (int j = 0; j < n; ++j) (*probs)[r * n + j] = escore[j] / dend;
        for (int i = 0; i < c; ++i) {
            __float128 acc = 0;
            for (int j = 0; j < n; ++j)
                acc += static_cast<__float128>((*probs)[r * n + j] * (*v)[j * c + i]);
            out[r * c + i] = static_cast<double>(acc);
        }
    }

    auto xn = x.node();
    auto qn = wq.node(), kn = wk.node(), vn = wv.node();
    return make_op({n, c}, std::move(out), {&x, &wq, &wk, &wv},
                   [xn, qn, kn, vn, q, k, v, probs, n, c, scale](Node& self) {
        // standard attention backward in plain double arithmetic
        std::vector<double> dq(static_cast<size_t>(n) * c, 0.0), dk(dq), dv(dq);
        std::vector<double> dp(static_cast<size_t>(n) * n, 0.0);
        const double* g = self.grad.data();
        // dV = P^T G ; dP = G V^T
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < c; ++i) {
                double acc = 0.0;
                for (int r = 0; r < n; ++r) acc += (*probs)[r * n + j] * g[r * c + i];
                dv[j * c + i] = acc;
            }
        for (int r = 0; r < n; ++r)
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int i = 0; i < c; ++i) acc += g[r * c + i] * (*v)[j * c + i];
                dp[r * n + j] = acc;
            }
        // dS = P o (dP - rowdot)
        for (int r = 0; r < n; ++r) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += dp[r * n + j] * (*probs)[r * n + j];
            for (int j = 0; j < n; ++j) dp[r * n + j] = (*probs)[r * n + j] * (dp[r * n + j] - dot) * scale;
        }
        // dQ = dS K ; dK = dS^T Q
        for (int r = 0; r < n; ++r)
            for (int i = 0; i < c; ++i) {
                double acc = 0.0;
                for (int j = 0; j < n; ++j) acc += dp[r * n + j] * (*k)[j * c + i];
                dq[r * c + i] = acc;
            }
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < c; ++i) {
                double acc = 0.0;
                for (int r = 0; r < n; ++r) acc += dp[r * n + j] * (*q)[r * c + i];
                dk[j * c + i] = acc;
            }
        // project back through the three linears
        auto backprop_linear = [&](const std::vector<double>& dy, const std::shared_ptr<Node>& wn_) {
            if (xn->requires_grad) {
                auto& gx = xn->grad_buf();
                const double* w = wn_->value.data();
                for (int r = 0; r < n; ++r)
                    for (int i = 0; i < c; ++i) {
                        double acc = 0.0;
                        for (int o = 0; o < c; ++o) acc += dy[r * c + o] * w[o * c + i];
                        gx[r * c + i] += acc;
                    }
            }
            if (wn_->requires_grad) {
                auto& gw = wn_->grad_buf();
                for (int o = 0; o < c; ++o)
                    for (int i = 0; i < c; ++i) {
                        double acc = 0.0;
                        for (int r = 0; r < n; ++r) acc += dy[r * c + o] * xn->value[r * c + i];
                        gw[o * c + i] += acc;
                    }
            }
        };
        backprop_linear(dq, qn);
        backprop_linear(dk, kn);
        backprop_linear(dv, vn);
    });
}

} // namespace segsr
