#pragma once

// Synthetic layout-to-grid benchmark.
//
// Scenes are sampled on the cell lattice: every box is an integer cell
// rectangle of at least 2x2 cells, descriptions follow the fixed
// "{color} {texture} {shape}" grammar, and the ground-truth grid is the
// exact rasterization of the layout over the background (objects drawn in
// order, later objects overwrite). In overlap-free mode boxes are
// pairwise disjoint, so every sample scores layout reward 1.0 on its own
// ground truth.
//
// Records are JSONL, one scene per line:
// {"id","prompt","objects":[{"box":[x0,y0,x1,y1],"desc":[...]}],
//  "grid_h","grid_w","grid":[row-major ints]}

#include <json.hpp>

#include <fstream>
#include <string>
#include <vector>

#include "layoutgen/io.hpp"
#include "layoutgen/rewards.hpp"
#include "layoutgen/sequence.hpp"

namespace layoutgen {

struct SceneSample {
    std::string id;
    std::vector<std::string> prompt;
    LayoutCondition layout;
    int grid_h = 0;
    int grid_w = 0;
    std::vector<int> grid;

    GridGeometry geometry() const { return GridGeometry{grid_h, grid_w}; }
    SceneCondition condition() const { return SceneCondition{prompt, layout}; }
};

struct DatasetParams {
    int grid_h = 16;
    int grid_w = 16;
    int min_objects = 1;
    int max_objects = 4;
    int min_box_side = 2;   // cells
    int max_box_side = 8;   // cells
    bool overlap_free = false;
};

namespace detail {

struct CellRect {
    int r0, c0, r1, c1;  // half-open in cells

    bool intersects(const CellRect& o) const {
        return r0 < o.r1 && o.r0 < r1 && c0 < o.c1 && o.c0 < c1;
    }
};

}  // namespace detail

inline void render_scene_grid(SceneSample& sample) {
    const GridGeometry geom = sample.geometry();
    const int bg = image_token(background_family(sample.prompt), 0);
    sample.grid.assign(static_cast<size_t>(geom.cells()), bg);
    for (const auto& obj : sample.layout.objects) {
        const ObjectSpec spec = parse_description(obj.description);
        const ObjectRaster raster = rasterize_object(obj, geom);
        // Overwrite the whole box with background first so an occluded
        // earlier object does not leak through disc corners.
        for (int cell : raster.box_cells) sample.grid[size_t(cell)] = bg;
        for (size_t i = 0; i < raster.ink_cells.size(); ++i)
            sample.grid[size_t(raster.ink_cells[i])] =
                image_token(spec.family, raster.ink_shades[i]);
    }
}

inline SceneSample gen_scene(uint64_t seed, int index, const DatasetParams& p) {
    LG_CHECK(p.min_box_side >= 2, "boxes must span at least 2x2 cells");
    LG_CHECK(p.min_objects >= 1 && p.min_objects <= p.max_objects, "bad object count range");
    Rng rng(splitmix64(seed) ^ splitmix64(uint64_t(index) * 0x9e3779b97f4a7c15ull + 1));
    SceneSample s;
    s.id = "s" + std::to_string(seed) + "-" + std::to_string(index);
    s.grid_h = p.grid_h;
    s.grid_w = p.grid_w;

    const int bg_family = int(rng.uniform_int(kNumColorFamilies));
    int want = p.min_objects + int(rng.uniform_int(p.max_objects - p.min_objects + 1));

    std::vector<detail::CellRect> taken;
    for (int i = 0; i < want; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            const int max_w = std::min(p.max_box_side, p.grid_w);
            const int max_h = std::min(p.max_box_side, p.grid_h);
            const int w = p.min_box_side + int(rng.uniform_int(max_w - p.min_box_side + 1));
            const int h = p.min_box_side + int(rng.uniform_int(max_h - p.min_box_side + 1));
            const int c0 = int(rng.uniform_int(p.grid_w - w + 1));
            const int r0 = int(rng.uniform_int(p.grid_h - h + 1));
            const detail::CellRect rect{r0, c0, r0 + h, c0 + w};
            if (p.overlap_free) {
                bool clash = false;
                for (const auto& t : taken)
                    if (rect.intersects(t)) clash = true;
                if (clash) continue;
            }
            taken.push_back(rect);
            LayoutObject obj;
            obj.box = BoundingBox{double(c0) / p.grid_w, double(r0) / p.grid_h,
                                  double(c0 + w) / p.grid_w, double(r0 + h) / p.grid_h};
            int family = int(rng.uniform_int(kNumColorFamilies - 1));
            if (family >= bg_family) ++family;  // object color differs from background
            obj.description = {color_words()[size_t(family)],
                               texture_words()[size_t(rng.uniform_int(2))],
                               shape_words()[size_t(rng.uniform_int(2))]};
            s.layout.objects.push_back(obj);
            placed = true;
        }
        if (!placed) break;  // grid too crowded in overlap-free mode
    }
    if (s.layout.objects.empty()) {
        // Always emit at least one object; retry with a fresh substream.
        return gen_scene(splitmix64(seed ^ 0xabcdefull), index, p);
    }

    s.prompt = {color_words()[size_t(bg_family)], "background", "with",
                count_words()[size_t(std::min(int(s.layout.objects.size()), 8) - 1)], "objects"};
    render_scene_grid(s);
    return s;
}

inline std::vector<SceneSample> gen_dataset(uint64_t seed, int n, const DatasetParams& p) {
    std::vector<SceneSample> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(gen_scene(seed, i, p));
    return out;
}

// ---- JSONL ----------------------------------------------------------------

inline nlohmann::json scene_to_json(const SceneSample& s) {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& obj : s.layout.objects)
        objs.push_back({{"box", {obj.box.x0, obj.box.y0, obj.box.x1, obj.box.y1}},
                        {"desc", obj.description}});
    return nlohmann::json{{"id", s.id},     {"prompt", s.prompt}, {"objects", objs},
                          {"grid_h", s.grid_h}, {"grid_w", s.grid_w}, {"grid", s.grid}};
}

inline SceneSample scene_from_json(const nlohmann::json& j) {
    SceneSample s;
    s.id = j.at("id").get<std::string>();
    s.prompt = j.at("prompt").get<std::vector<std::string>>();
    for (const auto& jo : j.at("objects")) {
        LayoutObject obj;
        const auto& box = jo.at("box");
        LG_CHECK(box.size() == 4, "box must have 4 coordinates");
        obj.box = BoundingBox{box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                              box[3].get<double>()};
        obj.description = jo.at("desc").get<std::vector<std::string>>();
        s.layout.objects.push_back(obj);
    }
    s.grid_h = j.at("grid_h").get<int>();
    s.grid_w = j.at("grid_w").get<int>();
    if (j.contains("grid")) {
        s.grid = j.at("grid").get<std::vector<int>>();
        quantize_image(s.grid, s.geometry());
    }
    return s;
}

inline void save_dataset(const std::string& path, const std::vector<SceneSample>& samples) {
    atomic_write_file(path, [&](std::ostream& out) {
        for (const auto& s : samples) out << scene_to_json(s).dump() << "\n";
    });
}

inline std::vector<SceneSample> load_dataset(const std::string& path) {
    std::ifstream in(path);
    LG_CHECK(in.good(), "cannot open dataset " << path);
    std::vector<SceneSample> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(scene_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            LG_CHECK(false, path << ":" << line_no << ": " << e.what());
        }
    }
    LG_CHECK(!out.empty(), path << ": dataset is empty");
    return out;
}

}  // namespace layoutgen
