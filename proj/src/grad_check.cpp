#include "csmf/grad_check.hpp"

#include <cmath>

#include "csmf/errors.hpp"

namespace csmf {

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double eps) {
    if (eps <= 0.0) throw ConfigError("finite_diff_grad: eps must be positive");
    std::vector<double> probe(x.begin(), x.end());
    std::vector<double> grad(x.size(), 0.0);
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe[i];
        probe[i] = saved + eps;
        const double hi = f(probe);
        probe[i] = saved - eps;
        const double lo = f(probe);
        probe[i] = saved;
        if (!std::isfinite(hi) || !std::isfinite(lo)) {
            throw NumericError("finite_diff_grad: objective returned a non-finite value");
        }
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    return grad;
}

} // namespace csmf
