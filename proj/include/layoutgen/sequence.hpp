#pragma once

// Unified sequence layout: prompt | layout slot 1..K_max | image.
//
// Budgets are fixed per model so positions are stable across samples:
// every object slot spans D_max description positions plus 4 box-coordinate
// positions, unused slots are [PAD]-filled, and image position j maps to
// grid cell j - image_start (row-major).

#include <string>
#include <vector>

#include "layoutgen/geometry.hpp"
#include "layoutgen/vocab.hpp"

namespace layoutgen {

struct SequenceBudget {
    int prompt_len = 8;    // P
    int max_objects = 8;   // K_max
    int max_desc = 6;      // D_max
    int grid_h = 16;
    int grid_w = 16;

    int object_span() const { return max_desc + 4; }
    int layout_start() const { return prompt_len; }
    int image_start() const { return prompt_len + max_objects * object_span(); }
    int image_len() const { return grid_h * grid_w; }
    int seq_len() const { return image_start() + image_len(); }
    GridGeometry geometry() const { return GridGeometry{grid_h, grid_w}; }
};

enum class Role : int { kPrompt = 0, kLayout = 1, kImage = 2 };

struct Span {
    int begin = 0;
    int end = 0;        // half-open
    int object = -1;    // object index for used layout slots, else -1
    bool used = false;  // false for all-[PAD] slots

    int len() const { return end - begin; }
    bool contains(int pos) const { return pos >= begin && pos < end; }
};

struct SegmentMap {
    SequenceBudget budget;
    Span prompt;
    std::vector<Span> slots;  // exactly budget.max_objects entries
    Span image;
    std::vector<uint8_t> is_pad;  // length seq_len
    int n_objects = 0;
    int n_prompt_tokens = 0;

    int seq_len() const { return budget.seq_len(); }
    int cell_of(int pos) const { return pos - image.begin; }
    int pos_of_cell(int cell) const { return image.begin + cell; }

    Role role_of(int pos) const {
        if (pos < prompt.end) return Role::kPrompt;
        if (pos < image.begin) return Role::kLayout;
        return Role::kImage;
    }

    // Layout slot index covering pos, or -1.
    int slot_of(int pos) const {
        if (pos < prompt.end || pos >= image.begin) return -1;
        return (pos - prompt.end) / budget.object_span();
    }
};

// desc_lens holds the real (pre-padding) description length per object.
inline SegmentMap build_segment_map(const SequenceBudget& budget, int n_prompt_tokens,
                                    const std::vector<int>& desc_lens) {
    const int k = int(desc_lens.size());
    LG_CHECK(k <= budget.max_objects,
             "layout over budget: " << k << " objects, K_max=" << budget.max_objects);
    LG_CHECK(n_prompt_tokens <= budget.prompt_len,
             "prompt over budget: " << n_prompt_tokens << " tokens, P=" << budget.prompt_len);
    SegmentMap seg;
    seg.budget = budget;
    seg.n_objects = k;
    seg.n_prompt_tokens = n_prompt_tokens;
    seg.prompt = Span{0, budget.prompt_len, -1, true};
    seg.is_pad.assign(static_cast<size_t>(budget.seq_len()), 0);
    for (int p = n_prompt_tokens; p < budget.prompt_len; ++p) seg.is_pad[size_t(p)] = 1;
    const int span = budget.object_span();
    for (int i = 0; i < budget.max_objects; ++i) {
        const int begin = budget.layout_start() + i * span;
        Span s{begin, begin + span, i < k ? i : -1, i < k};
        if (i < k) {
            LG_CHECK(desc_lens[size_t(i)] >= 1 && desc_lens[size_t(i)] <= budget.max_desc,
                     "object " << i << " description length " << desc_lens[size_t(i)]
                               << " outside [1," << budget.max_desc << "]");
            for (int t = desc_lens[size_t(i)]; t < budget.max_desc; ++t)
                seg.is_pad[size_t(begin + t)] = 1;
        } else {
            for (int t = 0; t < span; ++t) seg.is_pad[size_t(begin + t)] = 1;
        }
        seg.slots.push_back(s);
    }
    seg.image = Span{budget.image_start(), budget.seq_len(), -1, true};
    return seg;
}

// Identity quantization of a synthetic token grid; validates the range and
// flattens row-major. -1 marks a [MASK] slot.
inline std::vector<int> quantize_image(const std::vector<int>& grid, const GridGeometry& geom,
                                       bool allow_mask = false) {
    LG_CHECK(int(grid.size()) == geom.cells(),
             "image grid has " << grid.size() << " cells, geometry expects " << geom.cells());
    for (int t : grid) {
        if (allow_mask && t == -1) continue;
        LG_CHECK(t >= 0 && t < kImageVocab,
                 "image token " << t << " outside vocabulary of " << kImageVocab);
    }
    return grid;
}

// Fully assembled id-level sequence; the model embeds it.
struct TokenSequence {
    SegmentMap seg;
    std::vector<int> text_ids;      // per position; PAD outside prompt/desc positions
    std::vector<double> coords;     // box coordinate at layout coordinate positions
    std::vector<uint8_t> is_coord;  // marks the 4 coordinate positions per used slot
    std::vector<int> image_tokens;  // length H*W; -1 = [MASK]
};

inline TokenSequence build_token_sequence(const SequenceBudget& budget,
                                          const std::vector<std::string>& prompt_words,
                                          const LayoutCondition& layout,
                                          const std::vector<int>& image_tokens) {
    const Vocabulary& v = vocab();
    LG_CHECK(int(prompt_words.size()) <= budget.prompt_len,
             "prompt has " << prompt_words.size() << " words, budget is " << budget.prompt_len);
    validate_or_throw(layout, LayoutLimits{budget.max_objects, budget.max_desc});
    std::vector<int> desc_lens;
    for (const auto& obj : layout.objects) desc_lens.push_back(int(obj.description.size()));

    TokenSequence ts;
    ts.seg = build_segment_map(budget, int(prompt_words.size()), desc_lens);
    const int s = budget.seq_len();
    ts.text_ids.assign(static_cast<size_t>(s), v.pad_id());
    ts.coords.assign(static_cast<size_t>(s), 0.0);
    ts.is_coord.assign(static_cast<size_t>(s), 0);
    ts.image_tokens = quantize_image(image_tokens, budget.geometry(), /*allow_mask=*/true);

    const std::vector<int> prompt_ids = v.encode(prompt_words, budget.prompt_len);
    for (int p = 0; p < budget.prompt_len; ++p) ts.text_ids[size_t(p)] = prompt_ids[size_t(p)];

    for (int i = 0; i < layout.count(); ++i) {
        const Span& slot = ts.seg.slots[size_t(i)];
        const LayoutObject& obj = layout.objects[size_t(i)];
        const std::vector<int> desc_ids = v.encode(obj.description, budget.max_desc);
        for (int t = 0; t < budget.max_desc; ++t)
            ts.text_ids[size_t(slot.begin + t)] = desc_ids[size_t(t)];
        const double c[4] = {obj.box.x0, obj.box.y0, obj.box.x1, obj.box.y1};
        for (int t = 0; t < 4; ++t) {
            const int pos = slot.begin + budget.max_desc + t;
            ts.coords[size_t(pos)] = c[t];
            ts.is_coord[size_t(pos)] = 1;
        }
    }
    return ts;
}

// Unconditional variant: [NULL] prompt, no layout. Pairs with the dropped
// condition during SFT and with the guidance branch at decode time.
inline TokenSequence build_unconditional_sequence(const SequenceBudget& budget,
                                                  const std::vector<int>& image_tokens) {
    const Vocabulary& v = vocab();
    TokenSequence ts;
    ts.seg = build_segment_map(budget, 1, {});
    const int s = budget.seq_len();
    ts.text_ids.assign(static_cast<size_t>(s), v.pad_id());
    ts.coords.assign(static_cast<size_t>(s), 0.0);
    ts.is_coord.assign(static_cast<size_t>(s), 0);
    ts.image_tokens = quantize_image(image_tokens, budget.geometry(), /*allow_mask=*/true);
    ts.text_ids[0] = v.null_prompt_id();
    return ts;
}

}  // namespace layoutgen
