#pragma once
// Central finite differences against the autodiff tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "cgt/tensor.hpp"

namespace gradcheck {

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// gradient is ~0 from dividing roundoff by roundoff.
inline double rel_error(double a, double n, double floor = 1e-6) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

struct Result {
    double max_rel = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

// Numerical d f / d x[i] by central differences; restores x[i].
inline double numeric(const std::function<double()>& f, cgt::Tensor& x, std::size_t i, double h) {
    auto d = x.mutable_data();
    const double old = d[i];
    d[i] = old + h;
    const double up = f();
    d[i] = old - h;
    const double down = f();
    d[i] = old;
    return (up - down) / (2.0 * h);
}

// Builds the loss with `build`, backpropagates once, then compares every
// entry (or `max_per_tensor` of them: the largest analytic ones plus a
// seeded random pick) of every input against central differences.
inline Result check(const std::function<cgt::Tensor()>& build, std::vector<std::pair<std::string, cgt::Tensor>> inputs,
                    double h = 1e-6, std::size_t max_per_tensor = 0, double floor = 1e-6, std::uint64_t seed = 1) {
    for (auto& [name, t] : inputs) t.zero_grad();
    build().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& [name, t] : inputs) {
        analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                           : std::vector<double>(t.numel(), 0.0));
    }
    auto f = [&] {
        cgt::NoGradGuard ng;
        return build().item();
    };
    std::mt19937_64 rng(seed);
    Result r;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        auto& [name, t] = inputs[p];
        std::vector<std::size_t> idx(t.numel());
        std::iota(idx.begin(), idx.end(), 0);
        if (max_per_tensor && idx.size() > max_per_tensor) {
            const auto& g = analytic[p];
            const std::size_t top = max_per_tensor / 2;
            std::partial_sort(idx.begin(), idx.begin() + top, idx.end(),
                              [&](std::size_t a, std::size_t b) { return std::abs(g[a]) > std::abs(g[b]); });
            std::shuffle(idx.begin() + top, idx.end(), rng);
            idx.resize(max_per_tensor);
        }
        for (auto i : idx) {
            const double n = numeric(f, t, i, h);
            const double e = rel_error(analytic[p][i], n, floor);
            ++r.checked;
            if (e > r.max_rel) {
                r.max_rel = e;
                r.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[p][i]) +
                          " numeric " + std::to_string(n);
            }
        }
    }
    return r;
}

inline cgt::Tensor random_tensor(cgt::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                 bool requires_grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(cgt::numel_of(shape));
    for (auto& x : v) x = u(rng);
    return cgt::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Moves entries away from 0 so |x| and relu(x) are smooth within a step.
inline void nudge_from_zero(cgt::Tensor& t, double margin = 0.05) {
    for (auto& x : t.mutable_data()) {
        if (std::abs(x) < margin) x = x < 0 ? -margin : margin;
    }
}

}  // namespace gradcheck
