#pragma once

// Structured attention masking over the prompt | layout | image sequence.
//
// Rules for the full mask:
//   prompt query p   -> earlier non-pad prompt keys (causal), self.
//   layout query in slot i, offset t
//                    -> all non-pad prompt keys, non-pad same-slot keys at
//                       offset <= t, self. Other slots and image: blocked.
//   image query at cell g
//                    -> all non-pad prompt keys, every non-pad key of each
//                       slot whose box contains g, all image keys.
//   [PAD] positions  -> self only, and excluded as keys everywhere.
// The diagonal is always allowed, so no query row is empty.
//
// Ablation variants (Table-2 style):
//   kNoLayoutPrompt  — layout queries lose every prompt key.
//   kNoLocalCausal   — the layout region becomes one causal block across
//                      objects and image queries attend to all non-pad
//                      layout keys regardless of containment.
//
// verify_mask() recomputes each row from first principles with separate
// logic (its own containment arithmetic, no shared helpers) and reports
// the first disagreement; it is the test oracle for the builder.

#include <optional>
#include <string>
#include <vector>

#include "layoutgen/geometry.hpp"
#include "layoutgen/sequence.hpp"
#include "layoutgen/tensor.hpp"

namespace layoutgen {

enum class MaskVariant { kFull, kNoLayoutPrompt, kNoLocalCausal };

inline const char* mask_variant_name(MaskVariant v) {
    switch (v) {
        case MaskVariant::kFull: return "full";
        case MaskVariant::kNoLayoutPrompt: return "no_lp";
        case MaskVariant::kNoLocalCausal: return "no_local_causal";
    }
    return "?";
}

inline MaskVariant mask_variant_from_name(const std::string& name) {
    if (name == "full") return MaskVariant::kFull;
    if (name == "no_lp") return MaskVariant::kNoLayoutPrompt;
    if (name == "no_local_causal") return MaskVariant::kNoLocalCausal;
    LG_CHECK(false, "unknown mask variant \"" << name << "\"");
    return MaskVariant::kFull;
}

namespace detail {

inline void check_mask_inputs(const SegmentMap& seg, const LayoutCondition& layout,
                              const GridGeometry& geom) {
    LG_CHECK(seg.n_objects == layout.count(),
             "segment map describes " << seg.n_objects << " objects, layout has "
                                      << layout.count());
    LG_CHECK(geom.height == seg.budget.grid_h && geom.width == seg.budget.grid_w,
             "geometry " << geom.height << "x" << geom.width << " does not match budget "
                         << seg.budget.grid_h << "x" << seg.budget.grid_w);
}

}  // namespace detail

inline AttentionMask build_mask(const SegmentMap& seg, const LayoutCondition& layout,
                                const GridGeometry& geom) {
    detail::check_mask_inputs(seg, layout, geom);
    const int s = seg.seq_len();
    AttentionMask mask(s);
    const auto& pad = seg.is_pad;

    // Precompute the non-pad prompt keys once.
    std::vector<int> prompt_keys;
    for (int p = seg.prompt.begin; p < seg.prompt.end; ++p)
        if (!pad[size_t(p)]) prompt_keys.push_back(p);

    for (int q = 0; q < s; ++q) {
        mask.set(q, q, true);  // diagonal always allowed
        if (pad[size_t(q)]) continue;

        const Role role = seg.role_of(q);
        if (role == Role::kPrompt) {
            for (int k : prompt_keys)
                if (k <= q) mask.set(q, k, true);
        } else if (role == Role::kLayout) {
            for (int k : prompt_keys) mask.set(q, k, true);
            const Span& slot = seg.slots[size_t(seg.slot_of(q))];
            for (int k = slot.begin; k <= q; ++k)
                if (!pad[size_t(k)]) mask.set(q, k, true);
        } else {
            for (int k : prompt_keys) mask.set(q, k, true);
            const int cell = seg.cell_of(q);
            for (int i : containing_objects(cell, layout, geom)) {
                const Span& slot = seg.slots[size_t(i)];
                for (int k = slot.begin; k < slot.end; ++k)
                    if (!pad[size_t(k)]) mask.set(q, k, true);
            }
            for (int k = seg.image.begin; k < seg.image.end; ++k) mask.set(q, k, true);
        }
    }
    return mask;
}

// Rule code is intentionally not shared with build_mask: ablations must not
// inherit a bug from the primary path.
inline AttentionMask build_mask_variant(MaskVariant variant, const SegmentMap& seg,
                                        const LayoutCondition& layout,
                                        const GridGeometry& geom) {
    if (variant == MaskVariant::kFull) return build_mask(seg, layout, geom);
    detail::check_mask_inputs(seg, layout, geom);
    const int s = seg.seq_len();
    AttentionMask mask(s);
    const auto& pad = seg.is_pad;

    std::vector<int> prompt_keys;
    for (int p = seg.prompt.begin; p < seg.prompt.end; ++p)
        if (!pad[size_t(p)]) prompt_keys.push_back(p);
    std::vector<int> layout_keys;
    for (int k = seg.prompt.end; k < seg.image.begin; ++k)
        if (!pad[size_t(k)]) layout_keys.push_back(k);

    for (int q = 0; q < s; ++q) {
        mask.set(q, q, true);
        if (pad[size_t(q)]) continue;

        const Role role = seg.role_of(q);
        if (role == Role::kPrompt) {
            for (int k : prompt_keys)
                if (k <= q) mask.set(q, k, true);
        } else if (role == Role::kLayout) {
            if (variant == MaskVariant::kNoLayoutPrompt) {
                // isolated from the global prompt; same-object causality kept
                const Span& slot = seg.slots[size_t(seg.slot_of(q))];
                for (int k = slot.begin; k <= q; ++k)
                    if (!pad[size_t(k)]) mask.set(q, k, true);
            } else {
                // one causal block across all objects
                for (int k : prompt_keys) mask.set(q, k, true);
                for (int k : layout_keys)
                    if (k <= q) mask.set(q, k, true);
            }
        } else {
            for (int k : prompt_keys) mask.set(q, k, true);
            if (variant == MaskVariant::kNoLocalCausal) {
                for (int k : layout_keys) mask.set(q, k, true);
            } else {
                const int cell = seg.cell_of(q);
                for (int i : containing_objects(cell, layout, geom)) {
                    const Span& slot = seg.slots[size_t(i)];
                    for (int k = slot.begin; k < slot.end; ++k)
                        if (!pad[size_t(k)]) mask.set(q, k, true);
                }
            }
            for (int k = seg.image.begin; k < seg.image.end; ++k) mask.set(q, k, true);
        }
    }
    return mask;
}

struct MaskDiscrepancy {
    int q = -1;
    int k = -1;
    bool expected = false;
};

// Brute-force oracle: recomputes every (q,k) entry independently.
inline std::optional<MaskDiscrepancy> verify_mask(const AttentionMask& mask,
                                                  const SegmentMap& seg,
                                                  const LayoutCondition& layout,
                                                  const GridGeometry& geom) {
    const SequenceBudget& b = seg.budget;
    const int s = b.seq_len();
    if (mask.size != s) return MaskDiscrepancy{-1, -1, false};
    const int span = b.max_desc + 4;
    const int layout_begin = b.prompt_len;
    const int image_begin = b.prompt_len + b.max_objects * span;

    auto is_pad_pos = [&](int pos) -> bool {
        if (pos < b.prompt_len) return pos >= seg.n_prompt_tokens;
        if (pos >= image_begin) return false;
        const int slot = (pos - layout_begin) / span;
        const int off = (pos - layout_begin) % span;
        if (slot >= seg.n_objects) return true;
        if (off >= b.max_desc) return false;  // coordinate positions
        return off >= int(layout.objects[size_t(slot)].description.size());
    };

    auto box_holds_cell = [&](int obj, int cell) -> bool {
        const BoundingBox& box = layout.objects[size_t(obj)].box;
        const double cx = (double(cell % b.grid_w) + 0.5) / double(b.grid_w);
        const double cy = (double(cell / b.grid_w) + 0.5) / double(b.grid_h);
        return cx >= box.x0 && cx < box.x1 && cy >= box.y0 && cy < box.y1;
    };

    for (int q = 0; q < s; ++q) {
        for (int k = 0; k < s; ++k) {
            bool expect = false;
            if (q == k) {
                expect = true;
            } else if (is_pad_pos(q) || is_pad_pos(k)) {
                expect = false;
            } else if (q < b.prompt_len) {
                expect = k < q;  // k != q here; earlier prompt keys only
            } else if (q < image_begin) {
                if (k < b.prompt_len) {
                    expect = true;
                } else if (k < image_begin) {
                    const int slot_q = (q - layout_begin) / span;
                    const int slot_k = (k - layout_begin) / span;
                    expect = slot_q == slot_k && k < q;
                }
            } else {
                if (k < b.prompt_len) {
                    expect = true;
                } else if (k >= image_begin) {
                    expect = true;
                } else {
                    const int slot_k = (k - layout_begin) / span;
                    expect = slot_k < seg.n_objects && box_holds_cell(slot_k, q - image_begin);
                }
            }
            if (bool(mask.at(q, k)) != expect) return MaskDiscrepancy{q, k, expect};
        }
    }
    return std::nullopt;
}

// Plain-text 0/1 matrix with segment gridlines.
inline std::string mask_to_text(const AttentionMask& mask, const SegmentMap& seg) {
    std::vector<int> boundaries = {seg.prompt.end};
    for (const Span& s : seg.slots) boundaries.push_back(s.end);
    auto at_boundary = [&](int pos) {
        for (int b : boundaries)
            if (pos == b) return true;
        return false;
    };
    std::string out;
    for (int q = 0; q < mask.size; ++q) {
        if (at_boundary(q)) {
            for (int k = 0; k < mask.size; ++k) {
                if (at_boundary(k)) out += '+';
                out += '-';
            }
            out += '\n';
        }
        for (int k = 0; k < mask.size; ++k) {
            if (at_boundary(k)) out += '|';
            out += mask.at(q, k) ? '1' : '0';
        }
        out += '\n';
    }
    return out;
}

}  // namespace layoutgen
