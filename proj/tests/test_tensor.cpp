#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "camal/rng.hpp"
#include "camal/tensor.hpp"
#include "gradcheck.hpp"

using namespace camal;

namespace {

Tensor rand_tensor(const Shape& s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<float> v(static_cast<size_t>(numel_of(s)));
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return from_data(s, std::move(v));
}

}  // namespace

TEST_CASE("elementwise forward values") {
    Tensor a = from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = from_data({2, 2}, {10, 20, 30, 40});
    CHECK(add(a, b).values() == std::vector<float>{11, 22, 33, 44});
    CHECK(sub(b, a).values() == std::vector<float>{9, 18, 27, 36});
    CHECK(mul(a, a).values() == std::vector<float>{1, 4, 9, 16});
    CHECK(div(b, a).values() == std::vector<float>{10, 10, 10, 10});
    CHECK(relu(from_data({3}, {-1, 0, 2})).values() == std::vector<float>{0, 0, 2});
}

TEST_CASE("broadcasting rules") {
    Tensor a = from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor row = from_data({1, 3}, {10, 20, 30});
    Tensor col = from_data({2, 1}, {100, 200});
    CHECK(add(a, row).values() == std::vector<float>{11, 22, 33, 14, 25, 36});
    CHECK(add(a, col).values() == std::vector<float>{101, 102, 103, 204, 205, 206});
    CHECK(add(a, scalar_tensor(1)).values() == std::vector<float>{2, 3, 4, 5, 6, 7});
    CHECK_THROWS_AS(add(from_data({2}, {1, 2}), from_data({3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("matmul against hand arithmetic") {
    Tensor a = from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = from_data({3, 2}, {7, 8, 9, 10, 11, 12});
    Tensor c = matmul(a, b);
    CHECK(c.values() == std::vector<float>{58, 64, 139, 154});
    Tensor bm = bmm(reshape(a, {1, 2, 3}), reshape(b, {1, 3, 2}));
    CHECK(bm.values() == std::vector<float>{58, 64, 139, 154});
}

TEST_CASE("permute and reshape round trips") {
    Tensor a = rand_tensor({2, 3, 4}, 11);
    Tensor p = permute(a, {2, 0, 1});
    CHECK(p.shape() == Shape{4, 2, 3});
    Tensor back = permute(p, {1, 2, 0});
    CHECK(back.values() == a.values());
    CHECK(reshape(reshape(a, {24}), {2, 3, 4}).values() == a.values());
}

TEST_CASE("reductions") {
    Tensor a = from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(sum_all(a).item() == 21.0f);
    CHECK(mean_all(a).item() == doctest::Approx(3.5));
    Tensor s0 = sum_keepdims(a, {0});
    CHECK(s0.shape() == Shape{1, 3});
    CHECK(s0.values() == std::vector<float>{5, 7, 9});
    Tensor s1 = sum_keepdims(a, {1});
    CHECK(s1.values() == std::vector<float>{6, 15});
    CHECK(row_max(a).values() == std::vector<float>{3, 6});
    CHECK(row_min(a).values() == std::vector<float>{1, 4});
}

TEST_CASE("concat and slice") {
    Tensor a = from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = from_data({2, 1}, {9, 9});
    Tensor c = concat({a, b}, 1);
    CHECK(c.shape() == Shape{2, 3});
    CHECK(c.values() == std::vector<float>{1, 2, 9, 3, 4, 9});
    CHECK(slice(c, 1, 0, 2).values() == a.values());
    CHECK(slice(c, 1, 2, 1).values() == b.values());
}

TEST_CASE("take/put per row") {
    Tensor x = from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(take_per_row(x, {2, 0}).values() == std::vector<float>{3, 4});
    CHECK_THROWS_AS(take_per_row(x, {3, 0}), IndexError);
    Tensor p = put_per_row(from_data({2}, {7, 8}), {1, 2}, 3);
    CHECK(p.values() == std::vector<float>{0, 7, 0, 0, 0, 8});
}

TEST_CASE("softmax and cross entropy forward") {
    Tensor l = from_data({1, 3}, {1, 2, 3});
    Tensor p = softmax_lastdim(l);
    double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(p.data()[0] == doctest::Approx(std::exp(1.0) / z));
    CHECK(p.data()[2] == doctest::Approx(std::exp(3.0) / z));
    Tensor ce = cross_entropy_mean(l, {2});
    CHECK(ce.item() == doctest::Approx(-std::log(std::exp(3.0) / z)));
}

TEST_CASE("first-order gradients match finite differences") {
    Tensor x = rand_tensor({2, 3}, 42, 0.2, 1.5);
    testutil::gradcheck([](const Tensor& t) { return sum_all(mul(t, t)); }, x);
    testutil::gradcheck([](const Tensor& t) { return sum_all(div(ones({2, 3}), t)); }, x);
    testutil::gradcheck([](const Tensor& t) { return sum_all(log_op(t)); }, x);
    testutil::gradcheck([](const Tensor& t) { return sum_all(exp_op(t)); }, x);
    testutil::gradcheck([](const Tensor& t) { return sum_all(sqrt_op(t)); }, x);
    testutil::gradcheck([](const Tensor& t) { return sum_all(tanh_op(t)); }, x);
    testutil::gradcheck([](const Tensor& t) { return mean_all(softmax_lastdim(t)); }, x);
    testutil::gradcheck(
        [](const Tensor& t) { return sum_all(matmul(t, permute(t, {1, 0}))); }, x);
    testutil::gradcheck([](const Tensor& t) { return cross_entropy_mean(t, {0, 2}); }, x);
    testutil::gradcheck(
        [](const Tensor& t) { return sum_all(mul(broadcast_to(sum_keepdims(t, {1}), {2, 3}), t)); },
        x);
}

TEST_CASE("gradients through structure ops") {
    Tensor x = rand_tensor({2, 2, 4}, 7);
    testutil::gradcheck(
        [](const Tensor& t) { return sum_all(mul(permute(t, {2, 0, 1}), permute(t, {2, 0, 1}))); },
        x);
    testutil::gradcheck(
        [](const Tensor& t) {
            Tensor s = slice(t, 2, 1, 2);
            return sum_all(mul(s, s));
        },
        x);
    testutil::gradcheck(
        [](const Tensor& t) {
            Tensor c = concat({t, mul_scalar(t, 2.0f)}, 1);
            return sum_all(mul(c, c));
        },
        x);
}

TEST_CASE("gradients through im2col and bilinear upsample") {
    Tensor x = rand_tensor({1, 2, 4, 4}, 9);
    testutil::gradcheck(
        [](const Tensor& t) {
            Tensor c = im2col(t, 3, 3, 2, 1);
            return sum_all(mul(c, c));
        },
        x);
    Tensor m = rand_tensor({2, 3, 3}, 10, 0.0, 1.0);
    testutil::gradcheck(
        [](const Tensor& t) {
            Tensor u = bilinear_upsample(t, 7, 5);
            return sum_all(mul(u, u));
        },
        m);
}

TEST_CASE("gradients through row extrema flow to the attaining element") {
    Tensor x = from_data({1, 4}, {1, 5, 2, 3});
    x.set_requires_grad(true);
    Tensor g = grad(sum_all(row_max(x)), {x})[0];
    CHECK(g.values() == std::vector<float>{0, 1, 0, 0});
    Tensor g2 = grad(sum_all(row_min(x)), {x})[0];
    CHECK(g2.values() == std::vector<float>{1, 0, 0, 0});
}

TEST_CASE("second-order gradients (differentiating through a backward pass)") {
    Tensor x = rand_tensor({2, 3}, 5, 0.3, 1.2);
    // f = sum(x^3): grad = 3x^2, s = sum(9x^4), ds/dx = 36x^3
    auto cube = [](const Tensor& t) { return sum_all(mul(mul(t, t), t)); };
    {
        Tensor xx = from_data(x.shape(), x.values());
        xx.set_requires_grad(true);
        Tensor y = cube(xx);
        Tensor g = grad(y, {xx}, /*create_graph=*/true)[0];
        Tensor s = sum_all(mul(g, g));
        Tensor gg = grad(s, {xx})[0];
        for (int64_t i = 0; i < xx.numel(); ++i) {
            double v = xx.data()[i];
            CHECK(gg.data()[i] == doctest::Approx(36.0 * v * v * v).epsilon(1e-3));
        }
    }
    testutil::gradcheck_second_order(cube, x);
    testutil::gradcheck_second_order(
        [](const Tensor& t) { return sum_all(exp_op(mul_scalar(t, 0.5f))); }, x);
    testutil::gradcheck_second_order([](const Tensor& t) { return cross_entropy_mean(t, {1, 0}); },
                                     x);
    testutil::gradcheck_second_order(
        [](const Tensor& t) {
            Tensor c = im2col(reshape(t, {1, 1, 2, 3}), 2, 2, 1, 0);
            Tensor s = sum_keepdims(c, {1});
            return sum_all(mul(s, mul(s, s)));
        },
        x);
}

TEST_CASE("linearity of gradients in the upstream seed") {
    // scaling the target scalar scales the gradient
    Tensor x = rand_tensor({3, 3}, 21);
    Tensor x1 = from_data(x.shape(), x.values());
    x1.set_requires_grad(true);
    Tensor y1 = sum_all(mul(x1, x1));
    Tensor g1 = grad(y1, {x1})[0];
    Tensor x2 = from_data(x.shape(), x.values());
    x2.set_requires_grad(true);
    Tensor y2 = mul_scalar(sum_all(mul(x2, x2)), 3.0f);
    Tensor g2 = grad(y2, {x2})[0];
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(g2.data()[i] == doctest::Approx(3.0 * g1.data()[i]).epsilon(1e-5));
}

TEST_CASE("grad bookkeeping") {
    Tensor x = from_data({2}, {1, 2});
    x.set_requires_grad(true);
    Tensor y = sum_all(mul(x, x));

    SUBCASE("backward pass counter increments once per grad call") {
        uint64_t before = autograd::backward_pass_count();
        (void)grad(y, {x});
        CHECK(autograd::backward_pass_count() == before + 1);
    }
    SUBCASE("detached inputs raise a linkage error") {
        Tensor z = detach(x);
        CHECK_THROWS_AS(grad(y, {z}), LinkageError);
    }
    SUBCASE("allow_unused yields zeros") {
        Tensor unused = from_data({2}, {5, 5});
        unused.set_requires_grad(true);
        Tensor g = grad(y, {unused}, false, /*allow_unused=*/true)[0];
        CHECK(g.values() == std::vector<float>{0, 0});
    }
    SUBCASE("no-grad mode records nothing") {
        autograd::NoGradGuard ng;
        Tensor q = mul(x, x);
        CHECK_FALSE(q.requires_grad());
    }
}

TEST_CASE("fan-out accumulates gradients") {
    Tensor x = from_data({2}, {3, 4});
    x.set_requires_grad(true);
    Tensor y = sum_all(add(mul(x, x), mul_scalar(x, 2.0f)));  // d/dx = 2x + 2
    Tensor g = grad(y, {x})[0];
    CHECK(g.values() == std::vector<float>{8, 10});
}

TEST_CASE("bilinear upsample semantics") {
    // constant map stays constant at any size
    Tensor c = full({1, 2, 2}, 0.25f);
    Tensor u = bilinear_upsample(c, 5, 9);
    for (int64_t i = 0; i < u.numel(); ++i) CHECK(u.data()[i] == doctest::Approx(0.25));
    // 1x1 map broadcasts its value
    Tensor one = full({1, 1, 1}, 0.7f);
    Tensor u1 = bilinear_upsample(one, 4, 4);
    for (int64_t i = 0; i < u1.numel(); ++i) CHECK(u1.data()[i] == doctest::Approx(0.7));
    // downscale requests are refused
    CHECK_THROWS_AS(bilinear_upsample(c, 1, 4), ShapeError);
}

TEST_CASE("bilinear upsample matches the textbook formula") {
    // independent oracle: direct evaluation of corner-alignment-off bilinear
    Rng rng(33);
    int64_t h = 3, w = 4, H = 7, W = 9;
    std::vector<float> src(static_cast<size_t>(h * w));
    for (auto& v : src) v = static_cast<float>(rng.uniform(0.0, 1.0));
    Tensor t = from_data({1, h, w}, src);
    Tensor u = bilinear_upsample(t, H, W);
    for (int64_t oy = 0; oy < H; ++oy)
        for (int64_t ox = 0; ox < W; ++ox) {
            double sy = (oy + 0.5) * (static_cast<double>(h) / H) - 0.5;
            double sx = (ox + 0.5) * (static_cast<double>(w) / W) - 0.5;
            double y0 = std::floor(sy), x0 = std::floor(sx);
            double wy = sy - y0, wx = sx - x0;
            auto at = [&](double yy, double xx) {
                int64_t yi = std::min<int64_t>(h - 1, std::max<int64_t>(0, (int64_t)yy));
                int64_t xi = std::min<int64_t>(w - 1, std::max<int64_t>(0, (int64_t)xx));
                return static_cast<double>(src[static_cast<size_t>(yi * w + xi)]);
            };
            double expect = (at(y0, x0) * (1 - wx) + at(y0, x0 + 1) * wx) * (1 - wy) +
                            (at(y0 + 1, x0) * (1 - wx) + at(y0 + 1, x0 + 1) * wx) * wy;
            CHECK(u.data()[oy * W + ox] == doctest::Approx(expect).epsilon(1e-5));
        }
    // monotone columns for the spec's 2x2 -> 2x4 example
    Tensor m = from_data({1, 2, 2}, {0, 1, 0, 1});
    Tensor mu = bilinear_upsample(m, 2, 4);
    for (int64_t row = 0; row < 2; ++row)
        for (int64_t col = 1; col < 4; ++col)
            CHECK(mu.data()[row * 4 + col] >= mu.data()[row * 4 + col - 1]);
}
