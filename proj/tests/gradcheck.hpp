#pragma once

// finite-difference gradient checking for test use

#include <cmath>
#include <functional>
#include <string>

#include "camal/tensor.hpp"

namespace camal::testutil {

// Compares grad(f(x), x) against central differences. Works on small inputs;
// float32 limits accuracy, so tolerances are loose by design.
inline void gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                      double eps = 3e-3, double atol = 2e-3, double rtol = 5e-2) {
    auto eval = [&](std::vector<float> vals) {
        Tensor xx = from_data(x0.shape(), std::move(vals));
        xx.set_requires_grad(true);
        return static_cast<double>(f(xx).item());
    };

    Tensor x = from_data(x0.shape(), x0.values());
    x.set_requires_grad(true);
    Tensor y = f(x);
    if (y.numel() != 1) throw std::runtime_error("gradcheck needs a scalar function");
    Tensor g = grad(y, {x})[0];

    for (int64_t i = 0; i < x.numel(); ++i) {
        std::vector<float> vp = x0.values(), vm = x0.values();
        vp[static_cast<size_t>(i)] += static_cast<float>(eps);
        vm[static_cast<size_t>(i)] -= static_cast<float>(eps);
        double fd = (eval(vp) - eval(vm)) / (2.0 * eps);
        double an = g.data()[i];
        double err = std::abs(fd - an);
        double allow = atol + rtol * std::max(std::abs(fd), std::abs(an));
        if (err > allow)
            throw std::runtime_error("gradcheck failed at index " + std::to_string(i) +
                                     ": analytic=" + std::to_string(an) +
                                     " fd=" + std::to_string(fd));
    }
}

// Checks gradients of s(x) = sum(grad(f,x)^2), i.e. differentiates through a
// backward pass.
inline void gradcheck_second_order(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                                   double eps = 3e-3, double atol = 4e-3, double rtol = 8e-2) {
    auto s = [&](const Tensor& x) {
        Tensor y = f(x);
        Tensor g = grad(y, {x}, /*create_graph=*/true)[0];
        return sum_all(mul(g, g));
    };
    gradcheck(s, x0, eps, atol, rtol);
}

}  // namespace camal::testutil
