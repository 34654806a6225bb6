#pragma once

// Oracle reward channels for the synthetic benchmark.
//
// Descriptions follow the "{color} {texture} {shape}" grammar, so region
// similarity is an exact attribute match instead of a learned similarity:
//   color   — fraction of the ideal ink cells carrying the described
//             color family (both shades count),
//   texture — solid vs row-striped, inferred by majority vote over the
//             described-family cells in the box,
//   shape   — IoU between the described-family cells and the ideal
//             rasterized shape (filled box or inscribed disc).
// Each object scores the mean of the three; the layout reward averages
// over objects. The quality proxy scores background purity outside all
// boxes, which competes with box filling at the boundaries.
//
// RewardChannel is the pluggable interface; an external learned scorer
// mapping (condition, grid) -> [0,1] can be attached behind it.

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "layoutgen/geometry.hpp"
#include "layoutgen/vocab.hpp"

namespace layoutgen {

struct ObjectSpec {
    int family = 0;
    bool striped = false;
    bool disc = false;
};

inline ObjectSpec parse_description(const std::vector<std::string>& desc) {
    LG_CHECK(desc.size() == 3, "description must be \"{color} {texture} {shape}\", got "
                                   << desc.size() << " tokens");
    ObjectSpec spec;
    spec.family = vocab().color_family(desc[0]);
    LG_CHECK(desc[1] == "solid" || desc[1] == "striped",
             "\"" << desc[1] << "\" is not a texture word");
    spec.striped = desc[1] == "striped";
    LG_CHECK(desc[2] == "square" || desc[2] == "disc",
             "\"" << desc[2] << "\" is not a shape word");
    spec.disc = desc[2] == "disc";
    return spec;
}

// Cells of the ideal shape inside the box, with their ideal shades.
struct ObjectRaster {
    std::vector<int> box_cells;   // all cells whose center lies in the box
    std::vector<int> ink_cells;   // shape subset of box_cells
    std::vector<int> ink_shades;  // aligned with ink_cells
    int top_row = 0;              // first grid row intersecting the box
};

inline ObjectRaster rasterize_object(const LayoutObject& obj, const GridGeometry& geom) {
    const ObjectSpec spec = parse_description(obj.description);
    const BoundingBox& box = obj.box;
    ObjectRaster r;
    r.top_row = geom.height;
    for (int cell = 0; cell < geom.cells(); ++cell) {
        if (!cell_in_box(cell, box, geom)) continue;
        r.box_cells.push_back(cell);
        r.top_row = std::min(r.top_row, geom.row_of(cell));
    }
    const double cx0 = (box.x0 + box.x1) / 2.0;
    const double cy0 = (box.y0 + box.y1) / 2.0;
    const double ax = (box.x1 - box.x0) / 2.0;
    const double ay = (box.y1 - box.y0) / 2.0;
    for (int cell : r.box_cells) {
        if (spec.disc) {
            const double dx = (geom.center_x(cell) - cx0) / ax;
            const double dy = (geom.center_y(cell) - cy0) / ay;
            if (dx * dx + dy * dy > 1.0) continue;
        }
        r.ink_cells.push_back(cell);
        r.ink_shades.push_back(spec.striped ? (geom.row_of(cell) - r.top_row) % 2 : 0);
    }
    return r;
}

struct AttributeScores {
    double color = 0;
    double texture = 0;
    double shape = 0;

    double mean() const { return (color + texture + shape) / 3.0; }
};

inline AttributeScores attribute_match(const std::vector<int>& grid, const LayoutObject& obj,
                                       const GridGeometry& geom) {
    LG_CHECK(int(grid.size()) == geom.cells(), "grid size " << grid.size()
                                                            << " vs geometry " << geom.cells());
    const ObjectSpec spec = parse_description(obj.description);
    const ObjectRaster raster = rasterize_object(obj, geom);
    LG_CHECK(!raster.box_cells.empty(), "box contains no cell centers");

    AttributeScores s;

    int color_hits = 0;
    for (int cell : raster.ink_cells)
        if (family_of(grid[size_t(cell)]) == spec.family) ++color_hits;
    s.color = raster.ink_cells.empty() ? 0.0
                                       : double(color_hits) / double(raster.ink_cells.size());

    // Observed described-family cells inside the box.
    std::vector<int> observed;
    for (int cell : raster.box_cells)
        if (family_of(grid[size_t(cell)]) == spec.family) observed.push_back(cell);

    if (observed.empty()) {
        s.texture = 0.0;
    } else {
        int solid_votes = 0, striped_votes = 0;
        for (int cell : observed) {
            const int shade = shade_of(grid[size_t(cell)]);
            if (shade == 0) ++solid_votes;
            if (shade == (geom.row_of(cell) - raster.top_row) % 2) ++striped_votes;
        }
        const bool observed_striped = striped_votes > solid_votes;
        s.texture = observed_striped == spec.striped ? 1.0 : 0.0;
    }

    std::set<int> ideal(raster.ink_cells.begin(), raster.ink_cells.end());
    int inter = 0;
    for (int cell : observed)
        if (ideal.count(cell)) ++inter;
    const size_t uni = ideal.size() + observed.size() - size_t(inter);
    s.shape = uni == 0 ? 0.0 : double(inter) / double(uni);
    return s;
}

// Mean attribute-match over all conditioned regions.
inline double layout_reward(const LayoutCondition& layout, const std::vector<int>& grid,
                            const GridGeometry& geom) {
    LG_CHECK(layout.count() >= 1, "layout_reward: layout has no objects");
    double acc = 0;
    for (const auto& obj : layout.objects) acc += attribute_match(grid, obj, geom).mean();
    return acc / double(layout.count());
}

// First color word of the prompt names the declared background.
inline int background_family(const std::vector<std::string>& prompt) {
    for (const auto& w : prompt)
        for (int i = 0; i < int(color_words().size()); ++i)
            if (color_words()[size_t(i)] == w) return i;
    LG_CHECK(false, "prompt declares no background color");
    return -1;
}

// Fraction of cells outside every box carrying the declared background
// token. Defined as 1.0 when the boxes tile the whole grid.
inline double quality_proxy_reward(const std::vector<std::string>& prompt,
                                   const LayoutCondition& layout, const std::vector<int>& grid,
                                   const GridGeometry& geom) {
    LG_CHECK(int(grid.size()) == geom.cells(), "grid size " << grid.size()
                                                            << " vs geometry " << geom.cells());
    const int bg_token = image_token(background_family(prompt), 0);
    int outside = 0, matches = 0;
    for (int cell = 0; cell < geom.cells(); ++cell) {
        if (!containing_objects(cell, layout, geom).empty()) continue;
        ++outside;
        if (grid[size_t(cell)] == bg_token) ++matches;
    }
    return outside == 0 ? 1.0 : double(matches) / double(outside);
}

// Spatial positioning criterion: at least half of the box cells carry the
// described color family.
inline bool spatial_hit(const std::vector<int>& grid, const LayoutObject& obj,
                        const GridGeometry& geom) {
    const ObjectSpec spec = parse_description(obj.description);
    int in_box = 0, hits = 0;
    for (int cell = 0; cell < geom.cells(); ++cell) {
        if (!cell_in_box(cell, obj.box, geom)) continue;
        ++in_box;
        if (family_of(grid[size_t(cell)]) == spec.family) ++hits;
    }
    LG_CHECK(in_box > 0, "box contains no cell centers");
    return 2 * hits >= in_box;
}

// ---- pluggable channel interface -----------------------------------------

struct SceneCondition {
    std::vector<std::string> prompt;
    LayoutCondition layout;
};

class RewardChannel {
public:
    virtual ~RewardChannel() = default;
    virtual std::string name() const = 0;
    virtual double score(const SceneCondition& cond, const std::vector<int>& grid,
                         const GridGeometry& geom) const = 0;
};

class LayoutRewardChannel final : public RewardChannel {
public:
    std::string name() const override { return "layout"; }
    double score(const SceneCondition& cond, const std::vector<int>& grid,
                 const GridGeometry& geom) const override {
        return layout_reward(cond.layout, grid, geom);
    }
};

class QualityProxyChannel final : public RewardChannel {
public:
    std::string name() const override { return "quality"; }
    double score(const SceneCondition& cond, const std::vector<int>& grid,
                 const GridGeometry& geom) const override {
        return quality_proxy_reward(cond.prompt, cond.layout, grid, geom);
    }
};

}  // namespace layoutgen
