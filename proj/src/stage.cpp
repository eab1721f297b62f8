#include "csmf/stage.hpp"

#include "csmf/errors.hpp"

namespace csmf {

const char* stage_name(Stage s) {
    switch (s) {
    case Stage::Exposure: return "exposure";
    case Stage::Click: return "click";
    case Stage::Conversion: return "conversion";
    }
    return "?";
}

Stage next_stage(Stage s) {
    if (s == Stage::Conversion) {
        throw LifecycleError("next_stage: conversion is the final stage");
    }
    return static_cast<Stage>(static_cast<std::uint8_t>(s) + 1);
}

std::size_t BlockLayout::offset(Stage s) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < stage_index(s); ++i) off += sizes[i];
    return off;
}

Stage BlockLayout::stage_of(std::size_t unit) const {
    std::size_t edge = 0;
    for (Stage s : kStages) {
        edge += size(s);
        if (unit < edge) return s;
    }
    throw ShapeError("BlockLayout::stage_of: unit " + std::to_string(unit) +
                     " out of range for width " + std::to_string(width()));
}

std::vector<Stage> BlockLayout::unit_stages() const {
    std::vector<Stage> stages;
    stages.reserve(width());
    for (Stage s : kStages) {
        stages.insert(stages.end(), size(s), s);
    }
    return stages;
}

void BlockLayout::validate() const {
    if (sizes[0] == 0) {
        throw ConfigError("BlockLayout: the exposure block must have at least one unit");
    }
}

} // namespace csmf
