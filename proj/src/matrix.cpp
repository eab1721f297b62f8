#include "csmf/matrix.hpp"

#include <string>

#include "csmf/errors.hpp"

namespace csmf {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(a.cols) +
                         " vs " + std::to_string(b.rows) + ")");
    }
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += a(i, k) * b(k, j);
            }
            c(i, j) = acc;
        }
    }
    return c;
}

Matrix gaussian_init(RngStream& rng, std::size_t rows, std::size_t cols, double scale) {
    if (scale <= 0.0) throw ConfigError("gaussian_init: scale must be positive");
    Matrix m(rows, cols);
    for (double& v : m.values) v = rng.next_gaussian() * scale;
    return m;
}

} // namespace csmf
