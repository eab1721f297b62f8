#pragma once

#include <cstdint>

#include "csmf/errors.hpp"
#include "csmf/stage.hpp"

namespace csmf {

/// Lifecycle of a single parameter.
///
/// StructuralZero  forbidden by the block-connectivity rule; value is always 0.
/// Trainable(s)    owned by stage s's optimizer.
/// Frozen(s)       retained at stage s's commit; never changes again.
/// ZeroLocked      pruned into the already-committed prefix; value is always 0.
enum class ParamKind : std::uint8_t {
    StructuralZero = 0,
    Trainable = 1,
    Frozen = 2,
    ZeroLocked = 3,
};

struct ParamState {
    ParamKind kind = ParamKind::Trainable;
    Stage stage = Stage::Exposure; // meaningful for Trainable and Frozen only

    static ParamState structural_zero() { return {ParamKind::StructuralZero, Stage::Exposure}; }
    static ParamState trainable(Stage s) { return {ParamKind::Trainable, s}; }
    static ParamState frozen(Stage s) { return {ParamKind::Frozen, s}; }
    static ParamState zero_locked() { return {ParamKind::ZeroLocked, Stage::Exposure}; }

    bool zero_valued() const {
        return kind == ParamKind::StructuralZero || kind == ParamKind::ZeroLocked;
    }
    /// Whether the value participates in a pass masked to `prefix`.
    bool contributes(Stage prefix) const {
        return !zero_valued() && stage <= prefix;
    }
    /// Whether a gradient may flow into this parameter under `prefix`.
    bool accepts_grad(Stage prefix) const {
        return kind == ParamKind::Trainable && stage <= prefix;
    }

    std::uint8_t to_byte() const {
        switch (kind) {
        case ParamKind::StructuralZero: return 0;
        case ParamKind::Trainable: return static_cast<std::uint8_t>(1 + stage_index(stage));
        case ParamKind::Frozen: return static_cast<std::uint8_t>(4 + stage_index(stage));
        case ParamKind::ZeroLocked: return 7;
        }
        return 0;
    }

    static ParamState from_byte(std::uint8_t b) {
        if (b == 0) return structural_zero();
        if (b >= 1 && b <= 3) return trainable(static_cast<Stage>(b - 1));
        if (b >= 4 && b <= 6) return frozen(static_cast<Stage>(b - 4));
        if (b == 7) return zero_locked();
        throw ParseError("ParamState: invalid state byte " + std::to_string(b));
    }

    bool operator==(const ParamState&) const = default;
};

} // namespace csmf
