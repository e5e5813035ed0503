#include "camal/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cblas.h>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace camal {

int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace autograd {

namespace {
thread_local bool g_grad_enabled = true;
thread_local uint64_t g_backward_passes = 0;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

GradModeGuard::GradModeGuard(bool on) : prev(g_grad_enabled) { g_grad_enabled = on; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = prev; }

uint64_t backward_pass_count() { return g_backward_passes; }
void reset_backward_pass_count() { g_backward_passes = 0; }

void bump_backward_pass_count() { ++g_backward_passes; }

}  // namespace autograd

Tensor& Tensor::set_requires_grad(bool on) {
    if (!n_) throw Error("set_requires_grad on undefined tensor");
    if (on && n_->vjp) throw Error("set_requires_grad: only leaf tensors can be marked");
    n_->requires_grad = on;
    return *this;
}

float Tensor::item() const {
    if (!n_ || n_->values.size() != 1) throw ShapeError("item() requires a single-element tensor");
    return n_->values[0];
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

namespace {

std::shared_ptr<Node> new_node(Shape s, std::vector<float> v) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(s);
    n->values = std::move(v);
    return n;
}

Tensor make_leaf(Shape s, std::vector<float> v) {
    if (numel_of(s) != static_cast<int64_t>(v.size()))
        throw ShapeError("tensor data size does not match shape " + shape_str(s));
    return Tensor::from_node(new_node(std::move(s), std::move(v)));
}

// Record an op result. Outside grad mode, or when no parent requires grad,
// the node is emitted as a constant (no parents, no vjp) so graphs do not
// grow during evaluation.
Tensor make_op(Shape s, std::vector<float> v, std::vector<Tensor> parents,
               std::function<std::vector<Tensor>(const Tensor&)> vjp, const char* op) {
    auto n = new_node(std::move(s), std::move(v));
    bool track = autograd::grad_enabled();
    if (track) {
        bool any = false;
        for (const auto& p : parents) any = any || p.requires_grad();
        track = any;
    }
    if (track) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->vjp = std::move(vjp);
        n->op = op;
    }
    return Tensor::from_node(std::move(n));
}

}  // namespace

Tensor zeros(const Shape& s) { return make_leaf(s, std::vector<float>(numel_of(s), 0.0f)); }
Tensor ones(const Shape& s) { return make_leaf(s, std::vector<float>(numel_of(s), 1.0f)); }
Tensor full(const Shape& s, float v) { return make_leaf(s, std::vector<float>(numel_of(s), v)); }
Tensor from_data(const Shape& s, std::vector<float> v) { return make_leaf(s, std::move(v)); }
Tensor scalar_tensor(float v) { return make_leaf({1}, {v}); }
Tensor constant_like(const Tensor& x) { return make_leaf(x.shape(), x.values()); }

// ---------------------------------------------------------------------------
// broadcasting machinery
// ---------------------------------------------------------------------------

namespace {

struct BCast {
    Shape out;
    std::vector<int64_t> stride_a, stride_b;  // 0 on broadcast axes
};

BCast make_bcast(const Shape& a, const Shape& b) {
    size_t r = std::max(a.size(), b.size());
    BCast bc;
    bc.out.resize(r);
    bc.stride_a.resize(r);
    bc.stride_b.resize(r);
    // natural strides, right-aligned
    std::vector<int64_t> sa(r, 0), sb(r, 0), da(r, 1), db(r, 1);
    for (size_t i = 0; i < a.size(); ++i) da[r - a.size() + i] = a[i];
    for (size_t i = 0; i < b.size(); ++i) db[r - b.size() + i] = b[i];
    int64_t acc = 1;
    for (size_t i = r; i-- > 0;) { sa[i] = acc; acc *= da[i]; }
    acc = 1;
    for (size_t i = r; i-- > 0;) { sb[i] = acc; acc *= db[i]; }
    for (size_t i = 0; i < r; ++i) {
        if (da[i] == db[i]) bc.out[i] = da[i];
        else if (da[i] == 1) bc.out[i] = db[i];
        else if (db[i] == 1) bc.out[i] = da[i];
        else
            throw ShapeError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
        bc.stride_a[i] = (da[i] == 1 && bc.out[i] != 1) ? 0 : sa[i];
        bc.stride_b[i] = (db[i] == 1 && bc.out[i] != 1) ? 0 : sb[i];
    }
    return bc;
}

template <class F>
std::vector<float> ew_bcast(const Tensor& a, const Tensor& b, Shape* out_shape, F f) {
    // fast paths
    if (a.shape() == b.shape()) {
        *out_shape = a.shape();
        std::vector<float> out(a.numel());
        const float* pa = a.data();
        const float* pb = b.data();
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = f(pa[i], pb[i]);
        return out;
    }
    if (b.numel() == 1) {
        *out_shape = a.shape();
        std::vector<float> out(a.numel());
        const float* pa = a.data();
        float vb = b.data()[0];
        for (int64_t i = 0; i < a.numel(); ++i) out[i] = f(pa[i], vb);
        return out;
    }
    if (a.numel() == 1) {
        *out_shape = b.shape();
        std::vector<float> out(b.numel());
        float va = a.data()[0];
        const float* pb = b.data();
        for (int64_t i = 0; i < b.numel(); ++i) out[i] = f(va, pb[i]);
        return out;
    }
    BCast bc = make_bcast(a.shape(), b.shape());
    *out_shape = bc.out;
    int64_t n = numel_of(bc.out);
    std::vector<float> out(static_cast<size_t>(n));
    size_t r = bc.out.size();
    std::vector<int64_t> idx(r, 0);
    const float* pa = a.data();
    const float* pb = b.data();
    int64_t oa = 0, ob = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
        out[static_cast<size_t>(lin)] = f(pa[oa], pb[ob]);
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            oa += bc.stride_a[d];
            ob += bc.stride_b[d];
            if (idx[d] < bc.out[d]) break;
            idx[d] = 0;
            oa -= bc.stride_a[d] * bc.out[d];
            ob -= bc.stride_b[d] * bc.out[d];
        }
    }
    return out;
}

template <class F>
Tensor unary_op(const Tensor& a, F f, std::function<std::vector<Tensor>(const Tensor&)> vjp,
                const char* name) {
    std::vector<float> out(a.numel());
    const float* p = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) out[i] = f(p[i]);
    return make_op(a.shape(), std::move(out), {a}, std::move(vjp), name);
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    Shape s;
    auto v = ew_bcast(a, b, &s, [](float x, float y) { return x + y; });
    Shape as = a.shape(), bs = b.shape();
    return make_op(s, std::move(v), {a, b},
                   [as, bs](const Tensor& u) -> std::vector<Tensor> {
                       return {sum_to(u, as), sum_to(u, bs)};
                   },
                   "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    Shape s;
    auto v = ew_bcast(a, b, &s, [](float x, float y) { return x - y; });
    Shape as = a.shape(), bs = b.shape();
    return make_op(s, std::move(v), {a, b},
                   [as, bs](const Tensor& u) -> std::vector<Tensor> {
                       return {sum_to(u, as), sum_to(neg(u), bs)};
                   },
                   "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    Shape s;
    auto v = ew_bcast(a, b, &s, [](float x, float y) { return x * y; });
    Shape as = a.shape(), bs = b.shape();
    return make_op(s, std::move(v), {a, b},
                   [a, b, as, bs](const Tensor& u) -> std::vector<Tensor> {
                       Tensor ga, gb;
                       if (a.requires_grad()) ga = sum_to(mul(u, b), as);
                       if (b.requires_grad()) gb = sum_to(mul(u, a), bs);
                       return {ga, gb};
                   },
                   "mul");
}

Tensor div(const Tensor& a, const Tensor& b) {
    Shape s;
    auto v = ew_bcast(a, b, &s, [](float x, float y) { return x / y; });
    Shape as = a.shape(), bs = b.shape();
    return make_op(s, std::move(v), {a, b},
                   [a, b, as, bs](const Tensor& u) -> std::vector<Tensor> {
                       Tensor ga, gb;
                       if (a.requires_grad()) ga = sum_to(div(u, b), as);
                       if (b.requires_grad()) gb = sum_to(neg(div(mul(u, a), mul(b, b))), bs);
                       return {ga, gb};
                   },
                   "div");
}

Tensor neg(const Tensor& a) {
    return unary_op(a, [](float x) { return -x; },
                    [](const Tensor& u) -> std::vector<Tensor> { return {neg(u)}; }, "neg");
}

Tensor add_scalar(const Tensor& a, float s) {
    return unary_op(a, [s](float x) { return x + s; },
                    [](const Tensor& u) -> std::vector<Tensor> { return {u}; }, "add_scalar");
}

Tensor mul_scalar(const Tensor& a, float s) {
    return unary_op(a, [s](float x) { return x * s; },
                    [s](const Tensor& u) -> std::vector<Tensor> { return {mul_scalar(u, s)}; },
                    "mul_scalar");
}

Tensor relu(const Tensor& a) {
    // mask captured as a constant; relu'' = 0 a.e. so this is valid for
    // higher-order gradients as well
    auto mask = std::make_shared<std::vector<float>>(a.numel());
    std::vector<float> out(a.numel());
    const float* p = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) {
        bool pos = p[i] > 0.0f;
        (*mask)[i] = pos ? 1.0f : 0.0f;
        out[i] = pos ? p[i] : 0.0f;
    }
    Shape s = a.shape();
    return make_op(s, std::move(out), {a},
                   [mask, s](const Tensor& u) -> std::vector<Tensor> {
                       return {mul(u, from_data(s, *mask))};
                   },
                   "relu");
}

Tensor exp_op(const Tensor& a) {
    return unary_op(a, [](float x) { return std::exp(x); },
                    [a](const Tensor& u) -> std::vector<Tensor> { return {mul(u, exp_op(a))}; },
                    "exp");
}

Tensor log_op(const Tensor& a) {
    return unary_op(a, [](float x) { return std::log(x); },
                    [a](const Tensor& u) -> std::vector<Tensor> { return {div(u, a)}; }, "log");
}

Tensor sqrt_op(const Tensor& a) {
    return unary_op(a, [](float x) { return std::sqrt(x); },
                    [a](const Tensor& u) -> std::vector<Tensor> {
                        return {mul_scalar(div(u, sqrt_op(a)), 0.5f)};
                    },
                    "sqrt");
}

Tensor tanh_op(const Tensor& a) {
    return unary_op(a, [](float x) { return std::tanh(x); },
                    [a](const Tensor& u) -> std::vector<Tensor> {
                        Tensor t = tanh_op(a);
                        return {mul(u, sub(ones(a.shape()), mul(t, t)))};
                    },
                    "tanh");
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, const Shape& s) {
    if (numel_of(s) != a.numel())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(s));
    Shape as = a.shape();
    return make_op(s, a.values(), {a},
                   [as](const Tensor& u) -> std::vector<Tensor> { return {reshape(u, as)}; },
                   "reshape");
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
    size_t r = a.rank();
    if (perm.size() != r) throw ShapeError("permute rank mismatch");
    Shape out_shape(r);
    for (size_t i = 0; i < r; ++i) out_shape[i] = a.dim(static_cast<size_t>(perm[i]));
    std::vector<int64_t> in_strides(r, 1), out_strides_of_in(r);
    for (size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * a.dim(i + 1);
    // stride in input space for each output axis
    for (size_t i = 0; i < r; ++i) out_strides_of_in[i] = in_strides[static_cast<size_t>(perm[i])];
    int64_t n = a.numel();
    std::vector<float> out(static_cast<size_t>(n));
    std::vector<int64_t> idx(r, 0);
    const float* p = a.data();
    int64_t off = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
        out[static_cast<size_t>(lin)] = p[off];
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            off += out_strides_of_in[d];
            if (idx[d] < out_shape[d]) break;
            idx[d] = 0;
            off -= out_strides_of_in[d] * out_shape[d];
        }
    }
    std::vector<int> inv(r);
    for (size_t i = 0; i < r; ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    return make_op(out_shape, std::move(out), {a},
                   [inv](const Tensor& u) -> std::vector<Tensor> { return {permute(u, inv)}; },
                   "permute");
}

namespace {

// zero-filled tensor of `full_len` along `axis`, with `a` written at `start`;
// adjoint of slice
Tensor pad_axis(const Tensor& a, int axis, int64_t start, int64_t full_len) {
    Shape s = a.shape();
    int64_t seg = s[static_cast<size_t>(axis)];
    Shape out_shape = s;
    out_shape[static_cast<size_t>(axis)] = full_len;
    int64_t inner = 1, outer = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    for (size_t i = 0; i < static_cast<size_t>(axis); ++i) outer *= s[i];
    std::vector<float> out(static_cast<size_t>(outer * full_len * inner), 0.0f);
    const float* p = a.data();
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + (o * full_len + start) * inner, p + o * seg * inner,
                    static_cast<size_t>(seg * inner) * sizeof(float));
    return make_op(out_shape, std::move(out), {a},
                   [axis, start, seg](const Tensor& u) -> std::vector<Tensor> {
                       return {slice(u, axis, start, seg)};
                   },
                   "pad_axis");
}

}  // namespace

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
    Shape s = a.shape();
    int64_t full = s[static_cast<size_t>(axis)];
    if (start < 0 || len < 0 || start + len > full) throw ShapeError("slice out of range");
    Shape out_shape = s;
    out_shape[static_cast<size_t>(axis)] = len;
    int64_t inner = 1, outer = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    for (size_t i = 0; i < static_cast<size_t>(axis); ++i) outer *= s[i];
    std::vector<float> out(static_cast<size_t>(outer * len * inner));
    const float* p = a.data();
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * len * inner, p + (o * full + start) * inner,
                    static_cast<size_t>(len * inner) * sizeof(float));
    return make_op(out_shape, std::move(out), {a},
                   [axis, start, full](const Tensor& u) -> std::vector<Tensor> {
                       return {pad_axis(u, axis, start, full)};
                   },
                   "slice");
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    Shape s = parts[0].shape();
    int64_t total = 0;
    for (const auto& p : parts) {
        Shape ps = p.shape();
        for (size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != axis && ps[i] != s[i])
                throw ShapeError("concat shape mismatch");
        total += ps[static_cast<size_t>(axis)];
    }
    Shape out_shape = s;
    out_shape[static_cast<size_t>(axis)] = total;
    int64_t inner = 1, outer = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
    for (size_t i = 0; i < static_cast<size_t>(axis); ++i) outer *= s[i];
    std::vector<float> out(static_cast<size_t>(outer * total * inner));
    int64_t off = 0;
    for (const auto& p : parts) {
        int64_t seg = p.dim(static_cast<size_t>(axis));
        const float* q = p.data();
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * total + off) * inner, q + o * seg * inner,
                        static_cast<size_t>(seg * inner) * sizeof(float));
        off += seg;
    }
    std::vector<int64_t> segs;
    for (const auto& p : parts) segs.push_back(p.dim(static_cast<size_t>(axis)));
    return make_op(out_shape, std::move(out), parts,
                   [segs, axis](const Tensor& u) -> std::vector<Tensor> {
                       std::vector<Tensor> gs;
                       int64_t pos = 0;
                       for (int64_t seg : segs) {
                           gs.push_back(slice(u, axis, pos, seg));
                           pos += seg;
                       }
                       return gs;
                   },
                   "concat");
}

Tensor broadcast_to(const Tensor& a, const Shape& s) {
    if (a.shape() == s) return a;
    Shape dummy;
    Tensor z = zeros(s);
    auto v = ew_bcast(a, z, &dummy, [](float x, float) { return x; });
    if (dummy != s) throw ShapeError("broadcast_to: " + shape_str(a.shape()) + " -> " + shape_str(s));
    Shape as = a.shape();
    return make_op(s, std::move(v), {a},
                   [as](const Tensor& u) -> std::vector<Tensor> { return {sum_to(u, as)}; },
                   "broadcast_to");
}

Tensor sum_to(const Tensor& a, const Shape& s) {
    if (a.shape() == s) return a;
    size_t r = a.rank();
    Shape padded(r, 1);
    if (s.size() > r) throw ShapeError("sum_to target rank exceeds source");
    for (size_t i = 0; i < s.size(); ++i) padded[r - s.size() + i] = s[i];
    std::vector<int> axes;
    for (size_t i = 0; i < r; ++i) {
        if (padded[i] == a.dim(i)) continue;
        if (padded[i] == 1) axes.push_back(static_cast<int>(i));
        else
            throw ShapeError("sum_to: " + shape_str(a.shape()) + " -> " + shape_str(s));
    }
    Tensor red = axes.empty() ? a : sum_keepdims(a, axes);
    return reshape(red, s);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum_keepdims(const Tensor& a, const std::vector<int>& axes) {
    size_t r = a.rank();
    std::vector<bool> reduced(r, false);
    for (int ax : axes) {
        if (ax < 0 || static_cast<size_t>(ax) >= r) throw ShapeError("sum axis out of range");
        reduced[static_cast<size_t>(ax)] = true;
    }
    Shape out_shape = a.shape();
    for (size_t i = 0; i < r; ++i)
        if (reduced[i]) out_shape[i] = 1;
    // output strides in reduced space
    std::vector<int64_t> ostr(r, 0);
    int64_t acc = 1;
    for (size_t i = r; i-- > 0;) {
        ostr[i] = reduced[i] ? 0 : acc;
        if (!reduced[i]) acc *= a.dim(i);
    }
    // rebuild: strides over out_shape
    {
        int64_t a2 = 1;
        for (size_t i = r; i-- > 0;) {
            if (out_shape[i] == 1) ostr[i] = 0;
            else {
                ostr[i] = a2;
                a2 *= out_shape[i];
            }
        }
    }
    std::vector<float> out(static_cast<size_t>(numel_of(out_shape)), 0.0f);
    const float* p = a.data();
    std::vector<int64_t> idx(r, 0);
    int64_t ooff = 0;
    int64_t n = a.numel();
    for (int64_t lin = 0; lin < n; ++lin) {
        out[static_cast<size_t>(ooff)] += p[lin];
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            ooff += ostr[d];
            if (idx[d] < a.dim(d)) break;
            idx[d] = 0;
            ooff -= ostr[d] * a.dim(d);
        }
    }
    Shape as = a.shape();
    return make_op(out_shape, std::move(out), {a},
                   [as](const Tensor& u) -> std::vector<Tensor> { return {broadcast_to(u, as)}; },
                   "sum");
}

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    const float* p = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) acc += p[i];
    Shape as = a.shape();
    return make_op({1}, {static_cast<float>(acc)}, {a},
                   [as](const Tensor& u) -> std::vector<Tensor> {
                       return {broadcast_to(reshape(u, Shape(as.size(), 1)), as)};
                   },
                   "sum_all");
}

Tensor mean_all(const Tensor& a) { return mul_scalar(sum_all(a), 1.0f / static_cast<float>(a.numel())); }

Tensor mean_keepdims(const Tensor& a, const std::vector<int>& axes) {
    Tensor s = sum_keepdims(a, axes);
    return mul_scalar(s, static_cast<float>(numel_of(s.shape())) / static_cast<float>(a.numel()));
}

namespace {

Tensor row_extreme(const Tensor& a, bool maximum, const char* name) {
    if (a.rank() != 2) throw ShapeError(std::string(name) + " expects a 2D tensor");
    int64_t B = a.dim(0), R = a.dim(1);
    if (R < 1) throw ShapeError(std::string(name) + " over empty rows");
    auto idx = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B));
    std::vector<float> out(static_cast<size_t>(B));
    const float* p = a.data();
    for (int64_t b = 0; b < B; ++b) {
        const float* row = p + b * R;
        int64_t best = 0;
        for (int64_t j = 1; j < R; ++j) {
            if (maximum ? (row[j] > row[best]) : (row[j] < row[best])) best = j;
        }
        (*idx)[static_cast<size_t>(b)] = best;
        out[static_cast<size_t>(b)] = row[best];
    }
    return make_op({B, 1}, std::move(out), {a},
                   [idx, B, R](const Tensor& u) -> std::vector<Tensor> {
                       return {put_per_row(reshape(u, {B}), *idx, R)};
                   },
                   name);
}

}  // namespace

Tensor row_max(const Tensor& a) { return row_extreme(a, true, "row_max"); }
Tensor row_min(const Tensor& a) { return row_extreme(a, false, "row_min"); }

Tensor max_lastdim_const(const Tensor& a) {
    size_t r = a.rank();
    int64_t last = a.dim(r - 1);
    int64_t rows = a.numel() / last;
    std::vector<float> out(static_cast<size_t>(rows));
    const float* p = a.data();
    for (int64_t b = 0; b < rows; ++b) {
        float m = p[b * last];
        for (int64_t j = 1; j < last; ++j) m = std::max(m, p[b * last + j]);
        out[static_cast<size_t>(b)] = m;
    }
    Shape s = a.shape();
    s[r - 1] = 1;
    return make_leaf(s, std::move(out));
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

namespace {

void sgemm_rm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, const float* A, const float* B,
              float* C) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(M), static_cast<int>(N), static_cast<int>(K), 1.0f, A,
                static_cast<int>(ta ? M : K), B, static_cast<int>(tb ? K : N), 0.0f, C,
                static_cast<int>(N));
}

std::vector<int> transpose2d_perm{1, 0};

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    std::vector<float> out(static_cast<size_t>(M * N));
    sgemm_rm(false, false, M, N, K, a.data(), b.data(), out.data());
    return make_op({M, N}, std::move(out), {a, b},
                   [a, b](const Tensor& u) -> std::vector<Tensor> {
                       Tensor ga, gb;
                       if (a.requires_grad()) ga = matmul(u, permute(b, transpose2d_perm));
                       if (b.requires_grad()) gb = matmul(permute(a, transpose2d_perm), u);
                       return {ga, gb};
                   },
                   "matmul");
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("bmm shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    int64_t P = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    std::vector<float> out(static_cast<size_t>(P * M * N));
    for (int64_t p = 0; p < P; ++p)
        sgemm_rm(false, false, M, N, K, a.data() + p * M * K, b.data() + p * K * N,
                 out.data() + p * M * N);
    std::vector<int> tl{0, 2, 1};
    return make_op({P, M, N}, std::move(out), {a, b},
                   [a, b, tl](const Tensor& u) -> std::vector<Tensor> {
                       Tensor ga, gb;
                       if (a.requires_grad()) ga = bmm(u, permute(b, tl));
                       if (b.requires_grad()) gb = bmm(permute(a, tl), u);
                       return {ga, gb};
                   },
                   "bmm");
}

// ---------------------------------------------------------------------------
// indexing
// ---------------------------------------------------------------------------

Tensor take_per_row(const Tensor& x, const std::vector<int64_t>& idx) {
    if (x.rank() != 2) throw ShapeError("take_per_row expects 2D");
    int64_t B = x.dim(0), C = x.dim(1);
    if (static_cast<int64_t>(idx.size()) != B) throw ShapeError("take_per_row index count");
    for (int64_t i : idx)
        if (i < 0 || i >= C)
            throw IndexError("index " + std::to_string(i) + " out of range for " +
                             std::to_string(C) + " columns");
    auto ix = std::make_shared<std::vector<int64_t>>(idx);
    std::vector<float> out(static_cast<size_t>(B));
    const float* p = x.data();
    for (int64_t b = 0; b < B; ++b) out[static_cast<size_t>(b)] = p[b * C + idx[static_cast<size_t>(b)]];
    return make_op({B}, std::move(out), {x},
                   [ix, C](const Tensor& u) -> std::vector<Tensor> {
                       return {put_per_row(u, *ix, C)};
                   },
                   "take_per_row");
}

Tensor put_per_row(const Tensor& v, const std::vector<int64_t>& idx, int64_t cols) {
    if (v.rank() != 1) throw ShapeError("put_per_row expects 1D values");
    int64_t B = v.dim(0);
    if (static_cast<int64_t>(idx.size()) != B) throw ShapeError("put_per_row index count");
    auto ix = std::make_shared<std::vector<int64_t>>(idx);
    std::vector<float> out(static_cast<size_t>(B * cols), 0.0f);
    const float* p = v.data();
    for (int64_t b = 0; b < B; ++b) out[static_cast<size_t>(b * cols + idx[static_cast<size_t>(b)])] = p[b];
    return make_op({B, cols}, std::move(out), {v},
                   [ix](const Tensor& u) -> std::vector<Tensor> {
                       return {take_per_row(u, *ix)};
                   },
                   "put_per_row");
}

// ---------------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------------

namespace {

void conv_out_size(int64_t H, int64_t W, int kh, int kw, int stride, int pad, int64_t* Ho,
                   int64_t* Wo) {
    *Ho = (H + 2 * pad - kh) / stride + 1;
    *Wo = (W + 2 * pad - kw) / stride + 1;
    if (*Ho < 1 || *Wo < 1) throw ShapeError("convolution output would be empty");
}

}  // namespace

Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad) {
    if (x.rank() != 4) throw ShapeError("im2col expects BxCxHxW");
    int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    int64_t Ho, Wo;
    conv_out_size(H, W, kh, kw, stride, pad, &Ho, &Wo);
    int64_t CKK = C * kh * kw, L = Ho * Wo;
    std::vector<float> out(static_cast<size_t>(B * CKK * L), 0.0f);
    const float* p = x.data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int ki = 0; ki < kh; ++ki)
                for (int kj = 0; kj < kw; ++kj) {
                    int64_t row = ((c * kh + ki) * kw + kj);
                    float* dst = out.data() + (b * CKK + row) * L;
                    const float* src = p + (b * C + c) * H * W;
                    for (int64_t oy = 0; oy < Ho; ++oy) {
                        int64_t iy = oy * stride - pad + ki;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t ox = 0; ox < Wo; ++ox) {
                            int64_t ix = ox * stride - pad + kj;
                            if (ix < 0 || ix >= W) continue;
                            dst[oy * Wo + ox] = src[iy * W + ix];
                        }
                    }
                }
    Shape xs = x.shape();
    return make_op({B, CKK, L}, std::move(out), {x},
                   [xs, kh, kw, stride, pad](const Tensor& u) -> std::vector<Tensor> {
                       return {col2im(u, xs, kh, kw, stride, pad)};
                   },
                   "im2col");
}

Tensor col2im(const Tensor& cols, const Shape& x_shape, int kh, int kw, int stride, int pad) {
    int64_t B = x_shape[0], C = x_shape[1], H = x_shape[2], W = x_shape[3];
    int64_t Ho, Wo;
    conv_out_size(H, W, kh, kw, stride, pad, &Ho, &Wo);
    int64_t CKK = C * kh * kw, L = Ho * Wo;
    if (cols.rank() != 3 || cols.dim(0) != B || cols.dim(1) != CKK || cols.dim(2) != L)
        throw ShapeError("col2im input shape mismatch");
    std::vector<float> out(static_cast<size_t>(numel_of(x_shape)), 0.0f);
    const float* p = cols.data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int ki = 0; ki < kh; ++ki)
                for (int kj = 0; kj < kw; ++kj) {
                    int64_t row = ((c * kh + ki) * kw + kj);
                    const float* src = p + (b * CKK + row) * L;
                    float* dst = out.data() + (b * C + c) * H * W;
                    for (int64_t oy = 0; oy < Ho; ++oy) {
                        int64_t iy = oy * stride - pad + ki;
                        if (iy < 0 || iy >= H) continue;
                        for (int64_t ox = 0; ox < Wo; ++ox) {
                            int64_t ix = ox * stride - pad + kj;
                            if (ix < 0 || ix >= W) continue;
                            dst[iy * W + ix] += src[oy * Wo + ox];
                        }
                    }
                }
    return make_op(x_shape, std::move(out), {cols},
                   [kh, kw, stride, pad](const Tensor& u) -> std::vector<Tensor> {
                       return {im2col(u, kh, kw, stride, pad)};
                   },
                   "col2im");
}

// ---------------------------------------------------------------------------
// bilinear interpolation
// ---------------------------------------------------------------------------

namespace {

struct LerpTable {
    std::vector<int64_t> lo, hi;
    std::vector<float> w;  // weight of hi
};

LerpTable make_lerp(int64_t in, int64_t out) {
    LerpTable t;
    t.lo.resize(static_cast<size_t>(out));
    t.hi.resize(static_cast<size_t>(out));
    t.w.resize(static_cast<size_t>(out));
    double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        double fl = std::floor(src);
        int64_t lo = static_cast<int64_t>(fl);
        float w = static_cast<float>(src - fl);
        int64_t hi = lo + 1;
        if (lo < 0) { lo = 0; }
        if (hi > in - 1) { hi = in - 1; }
        if (lo > in - 1) { lo = in - 1; }
        t.lo[static_cast<size_t>(o)] = lo;
        t.hi[static_cast<size_t>(o)] = hi;
        t.w[static_cast<size_t>(o)] = w;
    }
    return t;
}

Tensor bilinear_adjoint(const Tensor& u, int64_t h, int64_t w);

Tensor bilinear_forward(const Tensor& x, int64_t H, int64_t W, bool clamp01) {
    if (x.rank() != 3) throw ShapeError("bilinear_upsample expects BxHxW");
    int64_t B = x.dim(0), h = x.dim(1), w = x.dim(2);
    LerpTable ty = make_lerp(h, H), tx = make_lerp(w, W);
    std::vector<float> out(static_cast<size_t>(B * H * W));
    const float* p = x.data();
    for (int64_t b = 0; b < B; ++b) {
        const float* src = p + b * h * w;
        float* dst = out.data() + b * H * W;
        for (int64_t oy = 0; oy < H; ++oy) {
            int64_t y0 = ty.lo[static_cast<size_t>(oy)], y1 = ty.hi[static_cast<size_t>(oy)];
            float wy = ty.w[static_cast<size_t>(oy)];
            for (int64_t ox = 0; ox < W; ++ox) {
                int64_t x0 = tx.lo[static_cast<size_t>(ox)], x1 = tx.hi[static_cast<size_t>(ox)];
                float wx = tx.w[static_cast<size_t>(ox)];
                float top = src[y0 * w + x0] * (1.0f - wx) + src[y0 * w + x1] * wx;
                float bot = src[y1 * w + x0] * (1.0f - wx) + src[y1 * w + x1] * wx;
                float v = top * (1.0f - wy) + bot * wy;
                if (clamp01) v = std::min(1.0f, std::max(0.0f, v));
                dst[oy * W + ox] = v;
            }
        }
    }
    return make_op({B, H, W}, std::move(out), {x},
                   [h, w](const Tensor& u) -> std::vector<Tensor> {
                       return {bilinear_adjoint(u, h, w)};
                   },
                   "bilinear_up");
}

Tensor bilinear_adjoint(const Tensor& u, int64_t h, int64_t w) {
    int64_t B = u.dim(0), H = u.dim(1), W = u.dim(2);
    LerpTable ty = make_lerp(h, H), tx = make_lerp(w, W);
    std::vector<float> out(static_cast<size_t>(B * h * w), 0.0f);
    const float* p = u.data();
    for (int64_t b = 0; b < B; ++b) {
        const float* src = p + b * H * W;
        float* dst = out.data() + b * h * w;
        for (int64_t oy = 0; oy < H; ++oy) {
            int64_t y0 = ty.lo[static_cast<size_t>(oy)], y1 = ty.hi[static_cast<size_t>(oy)];
            float wy = ty.w[static_cast<size_t>(oy)];
            for (int64_t ox = 0; ox < W; ++ox) {
                int64_t x0 = tx.lo[static_cast<size_t>(ox)], x1 = tx.hi[static_cast<size_t>(ox)];
                float wx = tx.w[static_cast<size_t>(ox)];
                float g = src[oy * W + ox];
                dst[y0 * w + x0] += g * (1.0f - wx) * (1.0f - wy);
                dst[y0 * w + x1] += g * wx * (1.0f - wy);
                dst[y1 * w + x0] += g * (1.0f - wx) * wy;
                dst[y1 * w + x1] += g * wx * wy;
            }
        }
    }
    return make_op({B, h, w}, std::move(out), {u},
                   [H, W](const Tensor& g) -> std::vector<Tensor> {
                       return {bilinear_forward(g, H, W, false)};
                   },
                   "bilinear_adjoint");
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, int64_t H, int64_t W) {
    if (H < x.dim(1) || W < x.dim(2))
        throw ShapeError("bilinear_upsample does not downscale (" + shape_str(x.shape()) + " -> " +
                         std::to_string(H) + "x" + std::to_string(W) + ")");
    return bilinear_forward(x, H, W, true);
}

// ---------------------------------------------------------------------------
// graph control
// ---------------------------------------------------------------------------

Tensor detach(const Tensor& a) { return constant_like(a); }

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs, bool create_graph,
                         bool allow_unused) {
    autograd::bump_backward_pass_count();
    if (!output.defined()) throw Error("grad of undefined tensor");
    if (output.numel() != 1) throw ShapeError("grad expects a scalar output");

    // topological order over the requires_grad subgraph
    std::vector<Node*> topo;
    if (output.requires_grad()) {
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, size_t>> stack;
        stack.emplace_back(output.node(), 0);
        seen.insert(output.node());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next].node();
                ++next;
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                topo.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::unordered_map<Node*, Tensor> grads;
    if (output.requires_grad()) grads[output.node()] = ones(output.shape());

    {
        autograd::GradModeGuard mode(create_graph);
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            Node* n = *it;
            auto gi = grads.find(n);
            if (gi == grads.end() || !n->vjp) continue;
            std::vector<Tensor> pgs = n->vjp(gi->second);
            if (pgs.size() != n->parents.size()) throw Error(std::string("vjp arity: ") + n->op);
            for (size_t i = 0; i < pgs.size(); ++i) {
                if (!pgs[i].defined()) continue;
                Node* p = n->parents[i].node();
                if (!p->requires_grad) continue;
                auto slot = grads.find(p);
                if (slot == grads.end()) grads[p] = pgs[i];
                else slot->second = add(slot->second, pgs[i]);
            }
        }
    }

    std::vector<Tensor> result;
    result.reserve(inputs.size());
    for (const auto& in : inputs) {
        auto it = grads.find(in.node());
        if (it != grads.end()) {
            result.push_back(it->second);
        } else if (allow_unused) {
            result.push_back(zeros(in.shape()));
        } else {
            throw LinkageError(
                "no gradient path from output to input; the input is detached from the scalar's "
                "computation");
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// composed helpers
// ---------------------------------------------------------------------------

Tensor softmax_lastdim(const Tensor& x) {
    Tensor m = max_lastdim_const(x);
    Tensor e = exp_op(sub(x, m));
    Tensor s = sum_keepdims(e, {static_cast<int>(x.rank()) - 1});
    return div(e, s);
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int64_t>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy expects BxC logits");
    int64_t B = logits.dim(0);
    if (static_cast<int64_t>(labels.size()) != B) throw ShapeError("label count mismatch");
    Tensor m = max_lastdim_const(logits);
    Tensor z = sub(logits, m);
    Tensor lse = log_op(sum_keepdims(exp_op(z), {1}));  // Bx1
    Tensor zy = take_per_row(z, labels);                // B
    return mean_all(sub(reshape(lse, {B}), zy));
}

Tensor mse_mean(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) throw ShapeError("mse shape mismatch");
    Tensor d = sub(pred, target);
    return mean_all(mul(d, d));
}

bool all_finite(const Tensor& t) {
    const float* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

}  // namespace camal
