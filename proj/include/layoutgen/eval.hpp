#pragma once

// LayoutSAM-Eval-style metrics over generated grids: spatial positioning
// plus color/texture/shape attribute alignment, all in [0,100], with the
// reward channels reported on the same percent scale.

#include <json.hpp>

#include <string>
#include <vector>

#include "layoutgen/dataset.hpp"
#include "layoutgen/decode.hpp"

namespace layoutgen {

struct EvalReport {
    double spatial = 0;
    double color = 0;
    double texture = 0;
    double shape = 0;
    double layout_reward = 0;   // percent
    double quality_proxy = 0;   // percent
    int n_samples = 0;
    int n_objects = 0;
    int n_generations = 0;

    nlohmann::json to_json() const {
        return nlohmann::json{{"Spatial", spatial},
                              {"Color", color},
                              {"Texture", texture},
                              {"Shape", shape},
                              {"LayoutReward", layout_reward},
                              {"QualityProxy", quality_proxy},
                              {"samples", n_samples},
                              {"objects", n_objects},
                              {"generations", n_generations}};
    }

    static EvalReport from_json(const nlohmann::json& j) {
        EvalReport r;
        r.spatial = j.at("Spatial").get<double>();
        r.color = j.at("Color").get<double>();
        r.texture = j.at("Texture").get<double>();
        r.shape = j.at("Shape").get<double>();
        r.layout_reward = j.at("LayoutReward").get<double>();
        r.quality_proxy = j.at("QualityProxy").get<double>();
        r.n_samples = j.at("samples").get<int>();
        r.n_objects = j.at("objects").get<int>();
        r.n_generations = j.at("generations").get<int>();
        return r;
    }

    std::string table() const {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "Spatial %6.2f | Color %6.2f | Texture %6.2f | Shape %6.2f | "
                      "LayoutReward %6.2f | QualityProxy %6.2f  (%d samples, %d objects, %d gens)",
                      spatial, color, texture, shape, layout_reward, quality_proxy, n_samples,
                      n_objects, n_generations);
        return std::string(buf);
    }
};

struct MetricAccumulator {
    double spatial = 0, color = 0, texture = 0, shape = 0;
    double layout_sum = 0, quality_sum = 0;
    int objects = 0;
    int grids = 0;

    void add_grid(const SceneSample& sample, const std::vector<int>& grid) {
        const GridGeometry geom = sample.geometry();
        for (const auto& obj : sample.layout.objects) {
            const AttributeScores s = attribute_match(grid, obj, geom);
            spatial += spatial_hit(grid, obj, geom) ? 1.0 : 0.0;
            color += s.color;
            texture += s.texture;
            shape += s.shape;
            ++objects;
        }
        layout_sum += layout_reward(sample.layout, grid, geom);
        quality_sum += quality_proxy_reward(sample.prompt, sample.layout, grid, geom);
        ++grids;
    }

    void merge(const MetricAccumulator& o) {
        spatial += o.spatial;
        color += o.color;
        texture += o.texture;
        shape += o.shape;
        layout_sum += o.layout_sum;
        quality_sum += o.quality_sum;
        objects += o.objects;
        grids += o.grids;
    }

    EvalReport report(int n_samples) const {
        EvalReport r;
        if (objects > 0) {
            r.spatial = 100.0 * spatial / objects;
            r.color = 100.0 * color / objects;
            r.texture = 100.0 * texture / objects;
            r.shape = 100.0 * shape / objects;
        }
        if (grids > 0) {
            r.layout_reward = 100.0 * layout_sum / grids;
            r.quality_proxy = 100.0 * quality_sum / grids;
        }
        r.n_samples = n_samples;
        r.n_objects = objects;
        r.n_generations = grids;
        return r;
    }
};

// Scores grids as-is (ground truth audits, corrupted-grid probes).
inline EvalReport evaluate_grids(const std::vector<SceneSample>& samples) {
    MetricAccumulator acc;
    for (const auto& s : samples) acc.add_grid(s, s.grid);
    return acc.report(int(samples.size()));
}

// Decodes each condition with every seed and pools object metrics.
template <class T>
EvalReport evaluate_model(const Model<T>& model, const std::vector<SceneSample>& samples,
                          const DecodeConfig& cfg, const std::vector<uint64_t>& seeds,
                          int threads = 1) {
    LG_CHECK(!seeds.empty(), "evaluate_model: at least one seed required");
    const int jobs = int(samples.size() * seeds.size());
    std::vector<MetricAccumulator> acc(static_cast<size_t>(jobs));
    parallel_for(jobs, threads, [&](int j) {
        const SceneSample& sample = samples[size_t(j) / seeds.size()];
        const uint64_t seed = seeds[size_t(j) % seeds.size()];
        Rng rng(splitmix64(seed) ^ splitmix64(uint64_t(j / int(seeds.size())) + 0x5eedull));
        const std::vector<int> grid =
            decode(model, sample.prompt, sample.layout, cfg, rng, nullptr);
        acc[size_t(j)].add_grid(sample, grid);
    });
    MetricAccumulator total;
    for (const auto& a : acc) total.merge(a);
    return total.report(int(samples.size()));
}

}  // namespace layoutgen
