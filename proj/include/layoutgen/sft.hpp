#pragma once

// Supervised fine-tuning: masked next-set prediction.
//
// Per sample, a mask ratio r = cos(pi/2 * u), u ~ U(0,1), selects
// ceil(r * H*W) image positions uniformly; the loss is cross-entropy at
// the masked positions only. With probability p_drop the condition is
// dropped (prompt -> [NULL], layout -> [PAD]) to train the unconditional
// branch used by classifier-free guidance.

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "layoutgen/dataset.hpp"
#include "layoutgen/model.hpp"
#include "layoutgen/optim.hpp"

namespace layoutgen {

struct SftConfig {
    double lr = 2e-5;
    int iterations = 1000;
    int batch_size = 32;
    double cond_dropout = 0.1;
    int threads = 1;
    int log_every = 50;
};

// Forced-choice knobs for tests; rollouts never touch these.
struct SftSampleOptions {
    double force_mask_ratio = -1.0;  // >= 0 overrides the sampled ratio
    bool force_unconditional = false;
    bool force_conditional = false;
};

// Cross-entropy for one sample; gradients flow if the graph was bound with
// requires_grad. Returns the loss node.
template <class T>
typename Graph<T>::Ref sft_sample_loss(Graph<T>& g, const Model<T>& model,
                                       const typename Model<T>::Bound& bound,
                                       const SceneSample& sample, double cond_dropout, Rng& rng,
                                       const SftSampleOptions& opt = {},
                                       typename Graph<T>::Ref* out_logits = nullptr,
                                       std::vector<uint8_t>* out_selected = nullptr) {
    const SequenceBudget& budget = model.config().budget;
    const int n = budget.image_len();
    LG_CHECK(sample.grid_h == budget.grid_h && sample.grid_w == budget.grid_w,
             "sample grid " << sample.grid_h << "x" << sample.grid_w
                            << " does not match model budget " << budget.grid_h << "x"
                            << budget.grid_w);
    const std::vector<int> targets = quantize_image(sample.grid, budget.geometry());

    double ratio = opt.force_mask_ratio;
    if (ratio < 0.0) ratio = std::cos(1.57079632679489661923 * rng.uniform());
    int n_mask = int(std::ceil(ratio * double(n)));
    n_mask = std::min(n, std::max(1, n_mask));
    const std::vector<int> masked = sample_without_replacement(n, n_mask, rng);

    std::vector<int> input_tokens = targets;
    std::vector<uint8_t> select(static_cast<size_t>(n), 0);
    for (int cell : masked) {
        input_tokens[size_t(cell)] = -1;
        select[size_t(cell)] = 1;
    }

    bool unconditional = opt.force_unconditional;
    if (!unconditional && !opt.force_conditional) unconditional = rng.uniform() < cond_dropout;

    typename Graph<T>::Ref logits;
    if (unconditional) {
        TokenSequence ts = build_unconditional_sequence(budget, input_tokens);
        logits = model.forward(g, bound, ts, model.unconditional_mask());
    } else {
        TokenSequence ts = build_token_sequence(budget, sample.prompt, sample.layout, input_tokens);
        logits = model.forward(g, bound, ts, model.mask_for(sample.layout, ts.seg));
    }
    if (out_logits) *out_logits = logits;
    if (out_selected) *out_selected = select;
    return g.cross_entropy(logits, targets, select);
}

// One optimizer step over a batch; returns the mean loss. Per-sample
// gradients are computed in parallel and reduced in sample order.
template <class T>
double sft_step(Model<T>& model, AdamW<T>& opt, const std::vector<const SceneSample*>& batch,
                const SftConfig& cfg, uint64_t step_seed) {
    const int b = int(batch.size());
    LG_CHECK(b > 0, "sft_step: empty batch");
    std::vector<std::vector<T>> bufs(static_cast<size_t>(b));
    std::vector<double> losses(static_cast<size_t>(b));
    parallel_for(b, cfg.threads, [&](int i) {
        Rng rng(splitmix64(step_seed + uint64_t(i) * 0x9e3779b97f4a7c15ull));
        Graph<T> g;
        auto bound = model.bind(g, true);
        auto loss = sft_sample_loss(g, model, bound, *batch[size_t(i)], cfg.cond_dropout, rng);
        losses[size_t(i)] = double(g.scalar(loss));
        g.backward(loss);
        bufs[size_t(i)] = model.params().make_grad_buffer();
        model.collect_grads(g, bound, bufs[size_t(i)]);
    });
    model.params().zero_grad();
    const T inv_b = T(1) / T(b);
    for (int i = 0; i < b; ++i) model.params().add_grads_from(bufs[size_t(i)], inv_b);
    opt.step();
    double mean = 0;
    for (double l : losses) mean += l;
    return mean / double(b);
}

struct SftIterationLog {
    int iteration = 0;
    double loss = 0;

    std::string line() const {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "iter=%d loss=%.6f", iteration, loss);
        return std::string(buf);
    }
};

template <class T>
void train_sft(Model<T>& model, const std::vector<SceneSample>& dataset, const SftConfig& cfg,
               uint64_t seed, const std::function<void(const SftIterationLog&)>& on_log = {}) {
    LG_CHECK(model.ready(), "train_sft: model weights are not loaded");
    LG_CHECK(!dataset.empty(), "train_sft: empty dataset");
    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    AdamW<T> opt(model.params(), opt_cfg);
    Rng rng(splitmix64(seed ^ 0x736674ull));
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<const SceneSample*> batch;
        batch.reserve(static_cast<size_t>(cfg.batch_size));
        for (int i = 0; i < cfg.batch_size; ++i)
            batch.push_back(&dataset[size_t(rng.uniform_int(int64_t(dataset.size())))]);
        const double loss = sft_step(model, opt, batch, cfg, rng.next_u64());
        if (on_log && ((iter + 1) % cfg.log_every == 0 || iter == 0))
            on_log(SftIterationLog{iter + 1, loss});
    }
}

}  // namespace layoutgen
