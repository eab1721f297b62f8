#pragma once

// Independent brute-force reference implementations used to check the
// library's fast paths. Deliberately naive; clarity over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "csmf/matrix.hpp"

namespace oracles {

inline csmf::Matrix naive_matmul(const csmf::Matrix& a, const csmf::Matrix& b) {
    csmf::Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j)
            for (std::size_t k = 0; k < a.cols; ++k) c(i, j) += a(i, k) * b(k, j);
    return c;
}

// Maximal ascending-magnitude prefix whose cumulative mass stays within
// mass_fraction of the total; zero-total groups keep only the first element.
inline std::vector<std::uint8_t> cpp_oracle(std::span<const double> magnitudes,
                                            double mass_fraction) {
    std::vector<std::size_t> order(magnitudes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return magnitudes[a] < magnitudes[b]; });
    double total = 0.0;
    for (double m : magnitudes) total += m;

    std::vector<std::uint8_t> prune(magnitudes.size(), 0);
    if (magnitudes.empty()) return prune;
    if (total == 0.0) {
        for (std::size_t j = 1; j < order.size(); ++j) prune[order[j]] = 1;
        return prune;
    }
    double cum = 0.0;
    for (std::size_t idx : order) {
        cum += magnitudes[idx];
        if (cum <= mass_fraction * total) prune[idx] = 1;
        else break;
    }
    return prune;
}

// Full sort by (score desc, id asc).
inline std::vector<std::int64_t> naive_topk(std::span<const double> scores,
                                            std::span<const std::int64_t> ids, std::size_t k) {
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    });
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < order.size() && i < k; ++i) out.push_back(ids[order[i]]);
    return out;
}

inline std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j - 1)) / 2.0 + 1.0;
        for (std::size_t t = i; t < j; ++t) r[order[t]] = mid;
        i = j;
    }
    return r;
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
    const std::vector<double> ra = ranks(a);
    const std::vector<double> rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

inline double rel_err(double got, double want) {
    const double scale = std::max({std::fabs(got), std::fabs(want), 1e-12});
    return std::fabs(got - want) / scale;
}

} // namespace oracles
