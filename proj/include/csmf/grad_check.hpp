#pragma once

#include <functional>
#include <span>
#include <vector>

namespace csmf {

/// Central-difference gradient of f at x: g_i = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
/// Throws NumericError if any evaluation is non-finite and ConfigError if eps <= 0.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double eps = 1e-5);

} // namespace csmf
