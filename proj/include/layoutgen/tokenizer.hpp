#pragma once

// Layout tokenizer: Fourier box-coordinate embeddings and the
// zero-initialized residual adapter.
//
// Each object becomes D_max description-token embeddings (shared text
// table) followed by 4 coordinate embeddings, and the whole block passes
// through x + adapter(x). With the adapter's second layer at zero the
// block is bitwise equal to its pre-adapter input.

#include <vector>

#include "layoutgen/sequence.hpp"
#include "layoutgen/tensor.hpp"

namespace layoutgen {

// Interleaved [sin(2^k pi x), cos(2^k pi x)] for k = 0 .. d/2-1.
template <class T>
std::vector<T> fourier_embed(double coord, int d_model) {
    LG_CHECK(coord >= 0.0 && coord <= 1.0, "coordinate " << coord << " outside [0,1]");
    LG_CHECK(d_model % 2 == 0, "fourier_embed: d_model " << d_model << " must be even");
    std::vector<T> out(static_cast<size_t>(d_model));
    const double pi = 3.14159265358979323846;
    double freq = pi;
    for (int k = 0; k < d_model / 2; ++k) {
        out[size_t(2 * k)] = T(std::sin(freq * coord));
        out[size_t(2 * k + 1)] = T(std::cos(freq * coord));
        freq *= 2.0;
    }
    return out;
}

// Graph handles for the tables the tokenizer reads.
template <class T>
struct EmbeddingRefs {
    typename Graph<T>::Ref text_table;  // [V_text, d]
    typename Graph<T>::Ref adapter_w1;  // [d, 4d]
    typename Graph<T>::Ref adapter_b1;  // [4d]
    typename Graph<T>::Ref adapter_w2;  // [4d, d]
    typename Graph<T>::Ref adapter_b2;  // [d]
};

// x + MLP(x) over an [n, d] block.
template <class T>
typename Graph<T>::Ref residual_adapter(Graph<T>& g, typename Graph<T>::Ref x,
                                        const EmbeddingRefs<T>& refs) {
    auto h = g.add_rowvec(g.matmul(x, refs.adapter_w1), refs.adapter_b1);
    auto out = g.add_rowvec(g.matmul(g.gelu(h), refs.adapter_w2), refs.adapter_b2);
    return g.add_scaled(x, out, T(1));
}

// One object slot: [D_max + 4, d] embeddings, adapter applied.
template <class T>
typename Graph<T>::Ref tokenize_layout_object(Graph<T>& g, const TokenSequence& ts, int slot_idx,
                                              const EmbeddingRefs<T>& refs, int d_model) {
    const Span& slot = ts.seg.slots[size_t(slot_idx)];
    LG_CHECK(slot.used, "tokenize_layout_object: slot " << slot_idx << " is unused");
    std::vector<int> desc_ids(ts.text_ids.begin() + slot.begin,
                              ts.text_ids.begin() + slot.begin + ts.seg.budget.max_desc);
    auto desc = g.embedding(refs.text_table, std::move(desc_ids));
    std::vector<T> coord_rows;
    coord_rows.reserve(static_cast<size_t>(4 * d_model));
    for (int t = 0; t < 4; ++t) {
        const int pos = slot.begin + ts.seg.budget.max_desc + t;
        auto row = fourier_embed<T>(ts.coords[size_t(pos)], d_model);
        coord_rows.insert(coord_rows.end(), row.begin(), row.end());
    }
    auto coords = g.constant({4, d_model}, std::move(coord_rows));
    auto block = g.row_concat({desc, coords});
    return residual_adapter(g, block, refs);
}

// Full [S, d] content embedding (before positional/role additions): prompt
// rows from the text table, per-object adapted layout blocks, [PAD] blocks
// for unused slots, image rows from the image table with [MASK] for -1.
template <class T>
typename Graph<T>::Ref embed_token_sequence(Graph<T>& g, const TokenSequence& ts,
                                            const EmbeddingRefs<T>& refs,
                                            typename Graph<T>::Ref image_table, int d_model) {
    const SequenceBudget& budget = ts.seg.budget;
    std::vector<typename Graph<T>::Ref> parts;
    parts.reserve(static_cast<size_t>(budget.max_objects) + 2);

    std::vector<int> prompt_ids(ts.text_ids.begin(), ts.text_ids.begin() + budget.prompt_len);
    parts.push_back(g.embedding(refs.text_table, std::move(prompt_ids)));

    for (int i = 0; i < budget.max_objects; ++i) {
        const Span& slot = ts.seg.slots[size_t(i)];
        if (slot.used) {
            parts.push_back(tokenize_layout_object(g, ts, i, refs, d_model));
        } else {
            std::vector<int> pad_ids(static_cast<size_t>(budget.object_span()), vocab().pad_id());
            parts.push_back(g.embedding(refs.text_table, std::move(pad_ids)));
        }
    }

    std::vector<int> image_rows(ts.image_tokens.size());
    for (size_t i = 0; i < ts.image_tokens.size(); ++i)
        image_rows[i] = ts.image_tokens[i] < 0 ? kImageMaskToken : ts.image_tokens[i];
    parts.push_back(g.embedding(image_table, std::move(image_rows)));

    return g.row_concat(parts);
}

}  // namespace layoutgen
