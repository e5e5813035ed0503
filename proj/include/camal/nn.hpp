#pragma once

#include <string>
#include <utility>
#include <vector>

#include "camal/rng.hpp"
#include "camal/tensor.hpp"

namespace camal::nn {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

Tensor normal_init(const Shape& s, float stddev, Rng& rng);
Tensor kaiming_init(const Shape& s, int64_t fan_in, Rng& rng);

// y = x @ W^T + b, x: BxIn
struct Linear {
    Tensor W;  // Out x In
    Tensor b;  // Out
    Linear() = default;
    Linear(int64_t in, int64_t out, Rng& rng, float stddev = -1.0f);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

// 3x3-style conv over BxCxHxW via im2col + sgemm
struct Conv2d {
    Tensor W;  // Cout x (Cin*kh*kw)
    Tensor b;  // Cout
    int cin = 0, cout = 0, kh = 0, kw = 0, stride = 1, pad = 0;
    Conv2d() = default;
    Conv2d(int cin, int cout, int k, int stride, int pad, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

// layer norm over the last axis
struct LayerNorm {
    Tensor gamma, beta;
    float eps = 1e-5f;
    LayerNorm() = default;
    explicit LayerNorm(int64_t dim);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedParams& out) const;
};

// AdamW with decoupled weight decay
class AdamW {
public:
    AdamW(std::vector<Tensor> params, float lr, float weight_decay, float beta1 = 0.9f,
          float beta2 = 0.999f, float eps = 1e-8f);
    void step(const std::vector<Tensor>& grads);
    int64_t steps_taken() const { return t_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_, v_;
    float lr_, wd_, b1_, b2_, eps_;
    int64_t t_ = 0;
};

}  // namespace camal::nn
