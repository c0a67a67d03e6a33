#include "segsr/nn.hpp"

namespace segsr {

Tensor MultiHeadAttention::forward(const Tensor& x) const {
    int c = x.shape().back();
    int dh = c / heads;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor qq = q.forward(x);
    Tensor kk = k.forward(x);
    Tensor vv = v.forward(x);

    const bool batched = x.rank() == 3;
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(qq, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(kk, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(vv, h * dh, (h + 1) * dh);
        Tensor scores;
        if (batched)
            scores = bmm(qh, kh, /*trans_b=*/true);
        else
            scores = matmul(qh, kh, /*trans_b=*/true);
        scores = mul_scalar(scores, scale);
        Tensor probs = softmax_lastdim(scores);
        Tensor mixed = batched ? bmm(probs, vh) : matmul(probs, vh);
        head_outs.push_back(mixed);
    }
    Tensor merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    return out.forward(merged);
}

} // namespace segsr
