#include "csmf/masked_layer.hpp"

#include <string>

#include "csmf/errors.hpp"

namespace csmf {
namespace {

void check_input_width(const MaskedLayer& layer, std::size_t width) {
    if (width != layer.in_width()) {
        throw ShapeError("layer: input width " + std::to_string(width) + " does not match " +
                         std::to_string(layer.in_width()));
    }
}

double forward_unit(const MaskedLayer& layer, std::span<const double> x, std::size_t o,
                    Stage prefix) {
    const std::size_t in = layer.in_width();
    const double* w = layer.weights.values.data() + o * in;
    double acc = 0.0;
    if (layer.structural) {
        // Structural connectivity guarantees that every parameter reaching an
        // active unit either contributes under the prefix or holds exactly 0,
        // so the plain dot product is already the masked result.
        for (std::size_t k = 0; k < in; ++k) acc += w[k] * x[k];
        acc += layer.bias[o];
    } else {
        const ParamState* ws = layer.weight_state.data() + o * in;
        for (std::size_t k = 0; k < in; ++k) {
            acc += ws[k].contributes(prefix) ? w[k] * x[k] : 0.0;
        }
        acc += layer.bias_state[o].contributes(prefix) ? layer.bias[o] : 0.0;
    }
    if (layer.activation == Activation::Relu && acc < 0.0) acc = 0.0;
    return acc;
}

} // namespace

MaskedLayer build_layer(std::vector<Stage> in_stages, const BlockLayout& out_layout,
                        RngStream& rng, double init_scale, Activation activation,
                        bool structural) {
    out_layout.validate();
    if (in_stages.empty()) throw ConfigError("build_layer: layer needs at least one input");

    MaskedLayer layer;
    layer.weights = gaussian_init(rng, out_layout.width(), in_stages.size(), init_scale);
    {
        Matrix b = gaussian_init(rng, out_layout.width(), 1, init_scale);
        layer.bias = std::move(b.values);
    }
    layer.weight_state.assign(layer.weights.size(), ParamState::trainable(Stage::Exposure));
    layer.bias_state.assign(layer.bias.size(), ParamState::trainable(Stage::Exposure));
    layer.in_stages = std::move(in_stages);
    layer.out_layout = out_layout;
    layer.activation = activation;
    layer.structural = structural;

    if (structural) {
        for (std::size_t o = 0; o < layer.out_width(); ++o) {
            const Stage out_stage = out_layout.stage_of(o);
            for (std::size_t i = 0; i < layer.in_width(); ++i) {
                if (layer.in_stages[i] > out_stage) {
                    layer.weights(o, i) = 0.0;
                    layer.wstate(o, i) = ParamState::structural_zero();
                }
            }
        }
    }
    return layer;
}

MaskedLayer build_layer(const BlockLayout& in_layout, const BlockLayout& out_layout,
                        RngStream& rng, double init_scale, Activation activation,
                        bool structural) {
    in_layout.validate();
    return build_layer(in_layout.unit_stages(), out_layout, rng, init_scale, activation,
                       structural);
}

std::vector<double> layer_forward(const MaskedLayer& layer, std::span<const double> input,
                                  Stage active_prefix) {
    check_input_width(layer, input.size());
    std::vector<double> out(layer.out_width(), 0.0);
    const std::size_t live = layer.out_layout.prefix_width(active_prefix);
    for (std::size_t o = 0; o < live; ++o) {
        out[o] = forward_unit(layer, input, o, active_prefix);
    }
    return out;
}

Matrix layer_forward_batch(const MaskedLayer& layer, const Matrix& inputs, Stage active_prefix) {
    check_input_width(layer, inputs.cols);
    Matrix out(inputs.rows, layer.out_width());
    const std::size_t live = layer.out_layout.prefix_width(active_prefix);
    for (std::size_t r = 0; r < inputs.rows; ++r) {
        std::span<const double> x = inputs.row(r);
        double* y = out.values.data() + r * out.cols;
        for (std::size_t o = 0; o < live; ++o) {
            y[o] = forward_unit(layer, x, o, active_prefix);
        }
    }
    return out;
}

Matrix layer_backward_batch(const MaskedLayer& layer, const Matrix& inputs, const Matrix& outputs,
                            const Matrix& grad_out, Stage active_prefix, LayerGrads& acc) {
    check_input_width(layer, inputs.cols);
    if (grad_out.rows != inputs.rows || grad_out.cols != layer.out_width() ||
        outputs.rows != inputs.rows || outputs.cols != layer.out_width()) {
        throw ShapeError("layer_backward: gradient/output shape mismatch");
    }
    if (acc.weights.rows == 0) acc.init_like(layer);

    const std::size_t in = layer.in_width();
    const std::size_t out_w = layer.out_width();
    const std::size_t live = layer.out_layout.prefix_width(active_prefix);

    // Upstream gradient through the activation and the unit mask.
    Matrix dz(grad_out.rows, out_w);
    for (std::size_t r = 0; r < grad_out.rows; ++r) {
        for (std::size_t o = 0; o < live; ++o) {
            double g = grad_out(r, o);
            if (layer.activation == Activation::Relu && outputs(r, o) <= 0.0) g = 0.0;
            dz(r, o) = g;
        }
    }

    LayerGrads local;
    local.init_like(layer);
    Matrix dx(inputs.rows, in);
    for (std::size_t r = 0; r < inputs.rows; ++r) {
        const double* x = inputs.values.data() + r * in;
        const double* dzr = dz.values.data() + r * out_w;
        double* dxr = dx.values.data() + r * in;
        for (std::size_t o = 0; o < live; ++o) {
            const double g = dzr[o];
            if (g == 0.0) continue;
            const double* w = layer.weights.values.data() + o * in;
            double* dw = local.weights.values.data() + o * in;
            if (layer.structural) {
                for (std::size_t k = 0; k < in; ++k) {
                    dw[k] += g * x[k];
                    dxr[k] += g * w[k];
                }
            } else {
                const ParamState* ws = layer.weight_state.data() + o * in;
                for (std::size_t k = 0; k < in; ++k) {
                    dw[k] += g * x[k];
                    dxr[k] += ws[k].contributes(active_prefix) ? g * w[k] : 0.0;
                }
            }
            local.bias[o] += g;
        }
    }

    // The contract: gradients exist only for parameters trainable within the
    // prefix. Everything else is exactly 0.
    for (std::size_t o = 0; o < out_w; ++o) {
        for (std::size_t k = 0; k < in; ++k) {
            if (layer.wstate(o, k).accepts_grad(active_prefix)) {
                acc.weights(o, k) += local.weights(o, k);
            }
        }
        if (layer.bias_state[o].accepts_grad(active_prefix)) {
            acc.bias[o] += local.bias[o];
        }
    }
    return dx;
}

LayerBackwardResult layer_backward(const MaskedLayer& layer, std::span<const double> input,
                                   std::span<const double> grad_out, Stage active_prefix) {
    Matrix x(1, input.size());
    std::copy(input.begin(), input.end(), x.values.begin());
    Matrix y(1, layer.out_width());
    {
        std::vector<double> fwd = layer_forward(layer, input, active_prefix);
        std::copy(fwd.begin(), fwd.end(), y.values.begin());
    }
    if (grad_out.size() != layer.out_width()) {
        throw ShapeError("layer_backward: grad_out width mismatch");
    }
    Matrix dy(1, grad_out.size());
    std::copy(grad_out.begin(), grad_out.end(), dy.values.begin());

    LayerBackwardResult result;
    result.grads.init_like(layer);
    Matrix dx = layer_backward_batch(layer, x, y, dy, active_prefix, result.grads);
    result.grad_in.assign(dx.values.begin(), dx.values.end());
    return result;
}

} // namespace csmf
