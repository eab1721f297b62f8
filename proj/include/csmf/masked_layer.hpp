#pragma once

#include <span>
#include <vector>

#include "csmf/matrix.hpp"
#include "csmf/param_state.hpp"
#include "csmf/stage.hpp"

namespace csmf {

enum class Activation : std::uint8_t {
    Relu = 0,
    Identity = 1,
};

/// Fully-connected layer whose units are partitioned into per-stage blocks and
/// whose every parameter carries a lifecycle state.
///
/// With `structural` connectivity, a weight from input unit a to output unit b
/// exists only when stage(a) <= stage(b). That triangular rule is what makes a
/// pass masked to a stage prefix produce bit-identical values on that prefix no
/// matter how the later blocks evolve. With `structural = false` the layer is
/// dense and prefix masking filters by parameter lifecycle stage instead,
/// which is only an approximation of the committed-prefix scores.
struct MaskedLayer {
    Matrix weights;                       // out x in
    std::vector<double> bias;             // out
    std::vector<ParamState> weight_state; // out*in, row-major alongside weights
    std::vector<ParamState> bias_state;   // out
    std::vector<Stage> in_stages;         // per input unit
    BlockLayout out_layout;
    Activation activation = Activation::Relu;
    bool structural = true;

    std::size_t in_width() const { return weights.cols; }
    std::size_t out_width() const { return weights.rows; }

    ParamState& wstate(std::size_t out, std::size_t in) {
        return weight_state[out * weights.cols + in];
    }
    const ParamState& wstate(std::size_t out, std::size_t in) const {
        return weight_state[out * weights.cols + in];
    }
};

/// Gradients aligned with one layer's parameters.
struct LayerGrads {
    Matrix weights;
    std::vector<double> bias;

    void init_like(const MaskedLayer& layer) {
        weights = Matrix(layer.out_width(), layer.in_width());
        bias.assign(layer.out_width(), 0.0);
    }
};

/// Build a layer with gaussian-initialized parameters. Structurally forbidden
/// positions are zeroed and marked; everything else starts Trainable(exposure),
/// since the exposure stage trains the whole parameter space before the first
/// commit hands capacity down the cascade.
MaskedLayer build_layer(std::vector<Stage> in_stages, const BlockLayout& out_layout,
                        RngStream& rng, double init_scale,
                        Activation activation = Activation::Relu, bool structural = true);
MaskedLayer build_layer(const BlockLayout& in_layout, const BlockLayout& out_layout,
                        RngStream& rng, double init_scale,
                        Activation activation = Activation::Relu, bool structural = true);

/// activation(W x + b) with every output unit beyond `active_prefix` exactly 0
/// and every parameter that does not contribute under the prefix excluded.
std::vector<double> layer_forward(const MaskedLayer& layer, std::span<const double> input,
                                  Stage active_prefix);
Matrix layer_forward_batch(const MaskedLayer& layer, const Matrix& inputs, Stage active_prefix);

struct LayerBackwardResult {
    std::vector<double> grad_in;
    LayerGrads grads;
};

/// Single-example backward pass. Parameter gradients are exactly 0 for every
/// parameter that is not Trainable at a stage within the prefix; grad_in flows
/// only through parameters that contribute under the prefix.
LayerBackwardResult layer_backward(const MaskedLayer& layer, std::span<const double> input,
                                   std::span<const double> grad_out, Stage active_prefix);

/// Batched backward. `outputs` must be the forward result for `inputs` under
/// the same prefix. Accumulates parameter gradients into `acc` and returns the
/// input gradients.
Matrix layer_backward_batch(const MaskedLayer& layer, const Matrix& inputs, const Matrix& outputs,
                            const Matrix& grad_out, Stage active_prefix, LayerGrads& acc);

} // namespace csmf
