#include "camal/regularizers.hpp"

#include "camal/common.hpp"

namespace camal::reg {

AlphaBetaBatch alpha_beta(const Tensor& H, const Tensor& M) {
    if (H.shape() != M.shape())
        throw ShapeError("alpha_beta: attention " + shape_str(H.shape()) + " vs mask " +
                         shape_str(M.shape()));
    if (H.rank() != 3) throw ShapeError("alpha_beta expects BxHxW");
    int64_t B = H.dim(0), hw = H.dim(1) * H.dim(2);

    // per-sample mask pixel counts; masks are data, so these are constants
    std::vector<float> in_count(static_cast<size_t>(B), 0.0f);
    const float* m = M.data();
    for (int64_t b = 0; b < B; ++b) {
        float c = 0.0f;
        for (int64_t i = 0; i < hw; ++i) c += m[b * hw + i];
        in_count[static_cast<size_t>(b)] = c;
        if (c == 0.0f || c == static_cast<float>(hw))
            throw DomainError("degenerate mask in sample " + std::to_string(b) +
                              " (all zeros or all ones); reject at load time");
    }
    std::vector<float> out_count(static_cast<size_t>(B));
    for (int64_t b = 0; b < B; ++b)
        out_count[static_cast<size_t>(b)] = static_cast<float>(hw) - in_count[static_cast<size_t>(b)];

    Tensor H2 = reshape(H, {B, hw});
    Tensor M2 = reshape(M, {B, hw});
    Tensor Mc = sub(ones({B, hw}), M2);
    Tensor in_sum = sum_keepdims(mul(H2, M2), {1});    // Bx1
    Tensor out_sum = sum_keepdims(mul(H2, Mc), {1});   // Bx1
    Tensor alpha = div(reshape(in_sum, {B}), from_data({B}, std::move(in_count)));
    Tensor beta = div(reshape(out_sum, {B}), from_data({B}, std::move(out_count)));
    return {alpha, beta};
}

Tensor camal_term(const AlphaBetaBatch& ab) {
    if (!ab.alpha.defined() || ab.alpha.numel() == 0) throw DomainError("empty batch");
    return mean_all(sub(ab.beta, ab.alpha));
}

Tensor suppress_only_term(const Tensor& H, const Tensor& M) {
    return mean_all(alpha_beta(H, M).beta);
}

Tensor total_loss(const Tensor& task_loss, const Tensor& camal, float lambda) {
    if (lambda < 0.0f) throw ConfigError("lambda must be nonnegative");
    return add(task_loss, mul_scalar(camal, lambda));
}

}  // namespace camal::reg
