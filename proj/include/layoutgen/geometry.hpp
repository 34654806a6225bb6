#pragma once

// Layout geometry: normalized boxes, per-object descriptions, and the
// cell-containment rule shared by the mask builder and the rewards.
//
// A cell belongs to a box iff its center lies in the half-open rectangle
// [x0,x1) x [y0,y1). Edge-adjacent boxes therefore never claim the same
// cell, and a center exactly on the far edge is outside.

#include <string>
#include <vector>

#include "layoutgen/common.hpp"

namespace layoutgen {

struct BoundingBox {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool valid() const {
        return x0 >= 0.0 && x0 < x1 && x1 <= 1.0 && y0 >= 0.0 && y0 < y1 && y1 <= 1.0;
    }
    double area() const { return (x1 - x0) * (y1 - y0); }
};

struct LayoutObject {
    BoundingBox box;
    std::vector<std::string> description;  // word tokens, length <= D_max
};

struct LayoutCondition {
    std::vector<LayoutObject> objects;  // order == serialization order

    int count() const { return int(objects.size()); }
};

// Row-major cell grid; cell index c <-> (row c/W, col c%W).
struct GridGeometry {
    int height = 0;
    int width = 0;

    int cells() const { return height * width; }
    int row_of(int cell) const { return cell / width; }
    int col_of(int cell) const { return cell % width; }
    int cell_at(int row, int col) const { return row * width + col; }
    double center_x(int cell) const { return (double(col_of(cell)) + 0.5) / double(width); }
    double center_y(int cell) const { return (double(row_of(cell)) + 0.5) / double(height); }
};

inline bool cell_in_box(int cell, const BoundingBox& box, const GridGeometry& geom) {
    LG_CHECK(cell >= 0 && cell < geom.cells(),
             "cell_in_box: cell " << cell << " outside grid of " << geom.cells());
    const double cx = geom.center_x(cell);
    const double cy = geom.center_y(cell);
    return box.x0 <= cx && cx < box.x1 && box.y0 <= cy && cy < box.y1;
}

// Indices of every object whose box contains the cell; may be empty.
inline std::vector<int> containing_objects(int cell, const LayoutCondition& layout,
                                           const GridGeometry& geom) {
    std::vector<int> out;
    for (int i = 0; i < layout.count(); ++i)
        if (cell_in_box(cell, layout.objects[size_t(i)].box, geom)) out.push_back(i);
    return out;
}

struct LayoutLimits {
    int max_objects = 8;      // K_max
    int max_desc_tokens = 6;  // D_max
};

// Structural validation; vocabulary membership is checked by the tokenizer.
inline std::vector<std::string> validate(const LayoutCondition& layout,
                                         const LayoutLimits& limits) {
    std::vector<std::string> violations;
    if (layout.count() < 1)
        violations.push_back("layout has no objects");
    if (layout.count() > limits.max_objects)
        violations.push_back("layout has " + std::to_string(layout.count()) +
                             " objects, limit is " + std::to_string(limits.max_objects));
    for (int i = 0; i < layout.count(); ++i) {
        const LayoutObject& obj = layout.objects[size_t(i)];
        const std::string tag = "object " + std::to_string(i);
        if (!obj.box.valid())
            violations.push_back(tag + ": box coordinates violate 0 <= x0 < x1 <= 1, 0 <= y0 < y1 <= 1");
        if (obj.description.empty())
            violations.push_back(tag + ": empty description");
        if (int(obj.description.size()) > limits.max_desc_tokens)
            violations.push_back(tag + ": description has " +
                                 std::to_string(obj.description.size()) + " tokens, limit is " +
                                 std::to_string(limits.max_desc_tokens));
    }
    return violations;
}

inline void validate_or_throw(const LayoutCondition& layout, const LayoutLimits& limits) {
    auto violations = validate(layout, limits);
    if (violations.empty()) return;
    std::string msg = "invalid layout:";
    for (const auto& v : violations) msg += " " + v + ";";
    throw std::runtime_error(msg);
}

}  // namespace layoutgen
