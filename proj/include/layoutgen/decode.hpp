#pragma once

// Iterative next-set decoding with classifier-free guidance.
//
// All image tokens start masked. Each step runs two forward passes
// (conditional and unconditional), combines logits with the guidance
// scale, samples every still-masked position from the tempered guided
// distribution, and reveals the n_t highest-confidence positions (ties
// broken toward the lower cell index) following a cosine schedule.
//
// With recording enabled, every step logs the pre-step token state, the
// revealed positions, the sampled tokens and their behavior log-probs
// under the sampling distribution, which lets other models traverse the
// identical trajectory later (record-replay). The log-prob math goes
// through the same graph nodes that replay uses, so a replay against the
// unchanged weights reproduces the recorded values bit for bit.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "layoutgen/model.hpp"

namespace layoutgen {

struct DecodeConfig {
    int steps = 10;           // T
    double temperature = 1.0; // tau
    double guidance = 5.0;    // s
    bool greedy = false;      // argmax instead of sampling; confidence unchanged
};

// Tokens still masked after step t (t in [0, steps]); cosine schedule.
inline int masked_after(int t, int steps, int total) {
    LG_CHECK(steps >= 1, "schedule needs steps >= 1, got " << steps);
    LG_CHECK(t >= 0 && t <= steps, "schedule step " << t << " outside [0," << steps << "]");
    if (t == 0) return total;
    if (t == steps) return 0;
    const double pi_half = 1.57079632679489661923;
    return int(std::ceil(double(total) * std::cos(pi_half * double(t) / double(steps))));
}

// Number of cells revealed at each step 1..T; non-negative, sums to total.
inline std::vector<int> reveal_schedule(int steps, int total) {
    std::vector<int> out(static_cast<size_t>(steps));
    for (int t = 1; t <= steps; ++t)
        out[size_t(t - 1)] = masked_after(t - 1, steps, total) - masked_after(t, steps, total);
    return out;
}

struct TrajectoryStep {
    int step = 0;                      // 1-based
    std::vector<int> input_tokens;     // per cell; -1 = [MASK] (state before the step)
    std::vector<int> revealed;         // cells fixed this step, ascending
    std::vector<int> sampled;          // token ids, aligned with revealed
    std::vector<double> behavior_logp; // log-probs under the sampling distribution
};

struct RolloutRecord {
    std::vector<std::string> prompt;
    LayoutCondition layout;
    uint64_t seed = 0;
    DecodeConfig decode_cfg;
    std::vector<TrajectoryStep> steps;
    std::vector<int> final_grid;
};

namespace detail {

// Guided, tempered logits node for one decode step; shared verbatim by
// decode and replay so both read identical float values.
template <class T>
typename Graph<T>::Ref guided_step_logits(Graph<T>& g, const Model<T>& model,
                                          const typename Model<T>::Bound& bound,
                                          const std::vector<std::string>& prompt,
                                          const LayoutCondition& layout,
                                          const std::vector<int>& image_state,
                                          const AttentionMask& cond_mask,
                                          const AttentionMask& uncond_mask,
                                          const DecodeConfig& cfg) {
    const SequenceBudget& budget = model.config().budget;
    TokenSequence cond_ts = build_token_sequence(budget, prompt, layout, image_state);
    TokenSequence uncond_ts = build_unconditional_sequence(budget, image_state);
    auto cond = model.forward(g, bound, cond_ts, cond_mask);
    auto uncond = model.forward(g, bound, uncond_ts, uncond_mask);
    auto guided = cfg_combine(g, cond, uncond, T(cfg.guidance));
    const T inv_tau = T(1) / T(cfg.temperature);
    return g.scale(guided, inv_tau);
}

}  // namespace detail

template <class T>
std::vector<int> decode(const Model<T>& model, const std::vector<std::string>& prompt,
                        const LayoutCondition& layout, const DecodeConfig& cfg, Rng rng,
                        RolloutRecord* record = nullptr) {
    LG_CHECK(model.ready(), "decode: model weights are not loaded");
    LG_CHECK(cfg.steps >= 1, "decode: steps must be >= 1");
    LG_CHECK(cfg.temperature > 0.0, "decode: temperature must be > 0");
    const SequenceBudget& budget = model.config().budget;
    const int n = budget.image_len();
    const int vimg = kImageVocab;

    TokenSequence probe = build_token_sequence(budget, prompt, layout,
                                               std::vector<int>(static_cast<size_t>(n), -1));
    const AttentionMask cond_mask = model.mask_for(layout, probe.seg);
    const AttentionMask uncond_mask = model.unconditional_mask();
    const std::vector<int> schedule = reveal_schedule(cfg.steps, n);

    std::vector<int> state(static_cast<size_t>(n), -1);
    if (record) {
        record->prompt = prompt;
        record->layout = layout;
        record->decode_cfg = cfg;
        record->steps.clear();
    }

    std::vector<T> probs(static_cast<size_t>(vimg));
    for (int t = 1; t <= cfg.steps; ++t) {
        Graph<T> g;
        auto bound = model.bind(g, /*requires_grad=*/false);
        auto logits = detail::guided_step_logits(g, model, bound, prompt, layout, state,
                                                 cond_mask, uncond_mask, cfg);
        const T* lv = g.value(logits);

        TrajectoryStep step;
        step.step = t;
        step.input_tokens = state;

        // Sample every still-masked cell, ascending order; keep confidences.
        struct Draw {
            int cell;
            int token;
            T conf;
            double logp;
        };
        std::vector<Draw> draws;
        for (int cell = 0; cell < n; ++cell) {
            if (state[size_t(cell)] >= 0) continue;
            const T* row = lv + size_t(cell) * size_t(vimg);
            detail::row_softmax(row, vimg, probs.data());
            int token = 0;
            if (cfg.greedy) {
                for (int v2 = 1; v2 < vimg; ++v2)
                    if (probs[size_t(v2)] > probs[size_t(token)]) token = v2;
            } else {
                const double u = rng.uniform();
                double acc = 0.0;
                token = vimg - 1;
                for (int v2 = 0; v2 < vimg; ++v2) {
                    acc += double(probs[size_t(v2)]);
                    if (u < acc) {
                        token = v2;
                        break;
                    }
                }
            }
            draws.push_back(Draw{cell, token, probs[size_t(token)],
                                 double(detail::row_log_prob(row, vimg, token))});
        }

        // Reveal the n_t most confident draws; ties go to the lower cell.
        const int n_reveal = schedule[size_t(t - 1)];
        std::sort(draws.begin(), draws.end(), [](const Draw& a, const Draw& b) {
            if (a.conf != b.conf) return a.conf > b.conf;
            return a.cell < b.cell;
        });
        std::vector<const Draw*> chosen;
        for (int i = 0; i < n_reveal; ++i) chosen.push_back(&draws[size_t(i)]);
        std::sort(chosen.begin(), chosen.end(),
                  [](const Draw* a, const Draw* b) { return a->cell < b->cell; });
        for (const Draw* d : chosen) {
            state[size_t(d->cell)] = d->token;
            step.revealed.push_back(d->cell);
            step.sampled.push_back(d->token);
            step.behavior_logp.push_back(d->logp);
        }
        if (record) record->steps.push_back(std::move(step));
    }

    for (int cell = 0; cell < n; ++cell)
        LG_CHECK(state[size_t(cell)] >= 0, "decode: cell " << cell << " left masked");
    if (record) record->final_grid = state;
    return state;
}

}  // namespace layoutgen
