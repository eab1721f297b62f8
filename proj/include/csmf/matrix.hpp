#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "csmf/rng.hpp"

namespace csmf {

/// Dense row-major matrix of doubles. Deliberately minimal: a value carrier
/// with checked dimensions, not a linear-algebra layer.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

    std::size_t size() const { return values.size(); }
    void zero() { values.assign(values.size(), 0.0); }

    bool operator==(const Matrix&) const = default;
};

/// C = A * B with a fixed left-to-right accumulation order per output cell,
/// so results are bit-reproducible across runs of the same build.
Matrix matmul(const Matrix& a, const Matrix& b);

/// rows x cols matrix of independent N(0, scale^2) draws. Advances the stream
/// by exactly rows*cols draws.
Matrix gaussian_init(RngStream& rng, std::size_t rows, std::size_t cols, double scale);

} // namespace csmf
