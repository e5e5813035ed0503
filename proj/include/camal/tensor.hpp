#pragma once

// Eager float32 arrays with reverse-mode autodiff.
//
// Backward functions are expressed through the same recorded ops, so the
// result of grad() can itself be differentiated (create_graph). Training
// needs this: the auxiliary objective is a function of feature-map
// gradients, and optimizing it differentiates through the first backward
// pass.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "camal/common.hpp"

namespace camal {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

namespace autograd {

bool grad_enabled();
void set_grad_enabled(bool on);

struct GradModeGuard {
    bool prev;
    explicit GradModeGuard(bool on);
    ~GradModeGuard();
};
struct NoGradGuard : GradModeGuard {
    NoGradGuard() : GradModeGuard(false) {}
};

// One backward graph traversal == one call to camal::grad(). Exposed so the
// trainer can assert how many traversals a step performed.
uint64_t backward_pass_count();
void reset_backward_pass_count();

}  // namespace autograd

struct Node {
    std::vector<float> values;
    Shape shape;
    bool requires_grad = false;
    std::vector<Tensor> parents;
    // Maps the upstream gradient to gradients w.r.t. each parent (undefined
    // Tensor for parents that do not require grad).
    std::function<std::vector<Tensor>(const Tensor&)> vjp;
    const char* op = "leaf";
};

class Tensor {
public:
    Tensor() = default;

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int64_t dim(size_t i) const { return n_->shape[i]; }
    size_t rank() const { return n_->shape.size(); }
    int64_t numel() const { return static_cast<int64_t>(n_->values.size()); }

    const float* data() const { return n_->values.data(); }
    float* mutable_data() { return n_->values.data(); }
    const std::vector<float>& values() const { return n_->values; }

    bool requires_grad() const { return n_ && n_->requires_grad; }
    Tensor& set_requires_grad(bool on);

    float item() const;

    Node* node() const { return n_.get(); }

    static Tensor from_node(std::shared_ptr<Node> n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<Node> n_;
};

// ---- construction ----
Tensor zeros(const Shape& s);
Tensor ones(const Shape& s);
Tensor full(const Shape& s, float v);
Tensor from_data(const Shape& s, std::vector<float> v);
Tensor scalar_tensor(float v);  // shape {1}
// Constant copy of x's values (never requires grad).
Tensor constant_like(const Tensor& x);

// ---- elementwise (broadcasting, numpy rules) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);
Tensor relu(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor sqrt_op(const Tensor& a);
Tensor tanh_op(const Tensor& a);

// ---- structure ----
Tensor reshape(const Tensor& a, const Shape& s);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor broadcast_to(const Tensor& a, const Shape& s);
// Reduce-sum a down to `s` (adjoint of broadcast_to); composition of ops.
Tensor sum_to(const Tensor& a, const Shape& s);

// ---- reductions ----
Tensor sum_keepdims(const Tensor& a, const std::vector<int>& axes);
Tensor sum_all(const Tensor& a);   // shape {1}
Tensor mean_all(const Tensor& a);  // shape {1}
Tensor mean_keepdims(const Tensor& a, const std::vector<int>& axes);
// Per-row extrema of a 2D tensor, shape {B,1}; gradient flows to the first
// attaining element of each row.
Tensor row_max(const Tensor& a2d);
Tensor row_min(const Tensor& a2d);
// Detached max over the last axis (keepdims); for softmax/logsumexp
// stabilization where the shift contributes zero true gradient.
Tensor max_lastdim_const(const Tensor& a);

// ---- linear algebra ----
Tensor matmul(const Tensor& a2d, const Tensor& b2d);
Tensor bmm(const Tensor& a3d, const Tensor& b3d);

// ---- indexing ----
// out[b] = x[b, idx[b]]
Tensor take_per_row(const Tensor& x2d, const std::vector<int64_t>& idx);
// out[b, idx[b]] = v[b], zero elsewhere; adjoint of take_per_row
Tensor put_per_row(const Tensor& v1d, const std::vector<int64_t>& idx, int64_t cols);

// ---- convolution building blocks ----
// x: B x C x H x W  ->  B x (C*kh*kw) x (Ho*Wo)
Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad);
// adjoint scatter back to B x C x H x W
Tensor col2im(const Tensor& cols, const Shape& x_shape, int kh, int kw, int stride, int pad);

// ---- interpolation ----
// x: B x h x w -> B x H x W, bilinear, corner alignment off. Output values
// are clamped to [0,1] in the forward (guards float round-off only; inputs
// are attention maps by contract). Upscaling only.
Tensor bilinear_upsample(const Tensor& x, int64_t H, int64_t W);

// ---- graph control ----
Tensor detach(const Tensor& a);

// Gradients of a scalar `output` w.r.t. `inputs` via one reverse traversal.
// create_graph records the backward computation so the results are
// differentiable. With allow_unused, inputs with no path get zeros;
// otherwise such inputs raise LinkageError.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph = false, bool allow_unused = false);

// ---- composed helpers ----
Tensor softmax_lastdim(const Tensor& x);
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int64_t>& labels);
Tensor mse_mean(const Tensor& pred, const Tensor& target);

bool all_finite(const Tensor& t);

}  // namespace camal
