#include "camal/nn.hpp"

#include <cmath>

namespace camal::nn {

Tensor normal_init(const Shape& s, float stddev, Rng& rng) {
    std::vector<float> v(static_cast<size_t>(numel_of(s)));
    for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
    Tensor t = from_data(s, std::move(v));
    t.set_requires_grad(true);
    return t;
}

Tensor kaiming_init(const Shape& s, int64_t fan_in, Rng& rng) {
    return normal_init(s, std::sqrt(2.0f / static_cast<float>(fan_in)), rng);
}

Linear::Linear(int64_t in, int64_t out, Rng& rng, float stddev) {
    if (stddev < 0.0f) stddev = std::sqrt(2.0f / static_cast<float>(in));
    W = normal_init({out, in}, stddev, rng);
    b = zeros({out});
    b.set_requires_grad(true);
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = matmul(x, permute(W, {1, 0}));
    return add(y, reshape(b, {1, b.dim(0)}));
}

void Linear::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".weight", W);
    out.emplace_back(prefix + ".bias", b);
}

Conv2d::Conv2d(int cin_, int cout_, int k, int stride_, int pad_, Rng& rng)
    : cin(cin_), cout(cout_), kh(k), kw(k), stride(stride_), pad(pad_) {
    W = kaiming_init({cout, static_cast<int64_t>(cin) * kh * kw}, static_cast<int64_t>(cin) * kh * kw,
                     rng);
    b = zeros({cout});
    b.set_requires_grad(true);
}

Tensor Conv2d::forward(const Tensor& x) const {
    int64_t B = x.dim(0), H = x.dim(2), Wd = x.dim(3);
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (Wd + 2 * pad - kw) / stride + 1;
    int64_t CKK = static_cast<int64_t>(cin) * kh * kw, L = Ho * Wo;
    Tensor cols = im2col(x, kh, kw, stride, pad);            // B x CKK x L
    Tensor flat = reshape(permute(cols, {1, 0, 2}), {CKK, B * L});
    Tensor y = matmul(W, flat);                              // Cout x (B*L)
    y = permute(reshape(y, {cout, B, L}), {1, 0, 2});        // B x Cout x L
    y = reshape(y, {B, cout, Ho, Wo});
    return add(y, reshape(b, {1, cout, 1, 1}));
}

void Conv2d::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".weight", W);
    out.emplace_back(prefix + ".bias", b);
}

LayerNorm::LayerNorm(int64_t dim) {
    gamma = ones({dim});
    gamma.set_requires_grad(true);
    beta = zeros({dim});
    beta.set_requires_grad(true);
}

Tensor LayerNorm::forward(const Tensor& x) const {
    int last = static_cast<int>(x.rank()) - 1;
    Tensor mu = mean_keepdims(x, {last});
    Tensor xc = sub(x, mu);
    Tensor var = mean_keepdims(mul(xc, xc), {last});
    Tensor xn = div(xc, sqrt_op(add_scalar(var, eps)));
    return add(mul(xn, gamma), beta);
}

void LayerNorm::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

AdamW::AdamW(std::vector<Tensor> params, float lr, float weight_decay, float beta1, float beta2,
             float eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
        v_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    }
}

void AdamW::step(const std::vector<Tensor>& grads) {
    if (grads.size() != params_.size()) throw Error("AdamW: gradient count mismatch");
    ++t_;
    float bc1 = 1.0f - std::pow(b1_, static_cast<float>(t_));
    float bc2 = 1.0f - std::pow(b2_, static_cast<float>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        float* p = params_[i].mutable_data();
        const float* g = grads[i].data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        int64_t n = params_[i].numel();
        for (int64_t j = 0; j < n; ++j) {
            p[j] -= lr_ * wd_ * p[j];
            m[j] = b1_ * m[j] + (1.0f - b1_) * g[j];
            v[j] = b2_ * v[j] + (1.0f - b2_) * g[j] * g[j];
            float mh = m[j] / bc1;
            float vh = v[j] / bc2;
            p[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

}  // namespace camal::nn
