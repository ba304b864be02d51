#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "degan/tensor.hpp"

namespace testing {

inline degan::Tensor randn(const degan::Shape& shape, std::mt19937_64& rng, bool requires_grad = false,
                           double stddev = 1.0) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<double> v(degan::shape_numel(shape));
    for (auto& x : v) x = d(rng);
    return degan::Tensor(shape, std::move(v), requires_grad);
}

inline degan::Tensor integers(const degan::Shape& shape, std::mt19937_64& rng, int lo = -4, int hi = 4) {
    std::uniform_int_distribution<int> d(lo, hi);
    std::vector<double> v(degan::shape_numel(shape));
    for (auto& x : v) x = d(rng);
    return degan::Tensor(shape, std::move(v));
}

// Weighted sum so each output coordinate carries its own upstream gradient.
inline degan::Tensor probe(const degan::Tensor& out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return degan::sum(degan::mul(out, randn(out.shape(), rng)));
}

inline std::vector<double> values(const degan::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace testing
