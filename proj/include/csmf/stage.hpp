#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace csmf {

/// Funnel stages in cascade order. Every later stage's score builds on the
/// earlier stages' output segments, so ordinal comparisons are meaningful.
enum class Stage : std::uint8_t {
    Exposure = 0,
    Click = 1,
    Conversion = 2,
};

inline constexpr std::size_t kStageCount = 3;
inline constexpr std::array<Stage, kStageCount> kStages = {Stage::Exposure, Stage::Click,
                                                           Stage::Conversion};

inline std::size_t stage_index(Stage s) { return static_cast<std::size_t>(s); }

const char* stage_name(Stage s);
Stage next_stage(Stage s); // LifecycleError past Conversion

/// Partition of a layer's units (or an embedding's coordinates) into one
/// contiguous block per stage, in cascade order. The exposure block must be
/// non-empty; later blocks may be empty.
struct BlockLayout {
    std::array<std::size_t, kStageCount> sizes{};

    BlockLayout() = default;
    BlockLayout(std::size_t exposure, std::size_t click, std::size_t conversion)
        : sizes{exposure, click, conversion} {}

    std::size_t width() const { return sizes[0] + sizes[1] + sizes[2]; }
    std::size_t size(Stage s) const { return sizes[stage_index(s)]; }
    std::size_t offset(Stage s) const;
    /// Units covered by blocks up to and including `s`.
    std::size_t prefix_width(Stage s) const { return offset(s) + size(s); }

    Stage stage_of(std::size_t unit) const; // ShapeError when unit >= width
    std::vector<Stage> unit_stages() const;

    void validate() const; // ConfigError when the exposure block is empty

    bool operator==(const BlockLayout&) const = default;
};

} // namespace csmf
