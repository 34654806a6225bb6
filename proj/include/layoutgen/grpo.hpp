#pragma once

// GRPO post-training for next-set decoding.
//
// Next-set models have no sequential factorization, so log-probs are
// obtained by record-replay: rollouts under the behavior weights log every
// step's input state, revealed positions, sampled tokens and behavior
// log-probs; any policy can then traverse the same trajectory step by
// step and read its own log-probs at the recorded positions.
//
// Per reward channel c, advantages are standardized within the group,
//   A_i^c = (R_i^c - mean(R^c)) / (std(R^c) + 1e-8),
// then combined per cell with the quality weight and a layout weight that
// is boosted inside conditioned boxes. The objective is the clipped
// surrogate mean_i 1/N sum_t min(r A, clip(r,1-eps,1+eps) A), negated for
// minimization, with an optional KL(pi_theta || pi_ref) penalty that is
// only evaluated when beta > 0. Training is fully on-policy: one update
// per rollout batch, trajectories never reused.

#include <atomic>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "layoutgen/decode.hpp"
#include "layoutgen/eval.hpp"
#include "layoutgen/optim.hpp"

namespace layoutgen {

struct GrpoConfig {
    int group_size = 4;       // G
    int steps = 10;           // decode steps per rollout
    double clip_eps = 0.2;
    double kl_beta = 0.0;
    double lr = 1e-4;
    int iterations = 100;
    int batch_conditions = 28;
    double temperature = 1.0;
    double guidance = 5.0;
    double w_hps = 1.0;
    double w_layout = 1.0;
    double in_box_boost = 1.1;
    bool use_quality = true;
    bool use_layout = true;
    int threads = 1;

    DecodeConfig decode_config() const {
        DecodeConfig d;
        d.steps = steps;
        d.temperature = temperature;
        d.guidance = guidance;
        return d;
    }
};

// Combined advantage per image cell for one record.
struct AdvantageMap {
    std::vector<double> per_cell;
};

struct GroupRewards {
    std::vector<double> quality;  // R^hps proxy, one per record
    std::vector<double> layout;   // R^layout, one per record
};

inline void validate_record(const RolloutRecord& rec, int n_cells) {
    LG_CHECK(!rec.steps.empty(), "malformed record: no steps");
    std::vector<int> seen(static_cast<size_t>(n_cells), 0);
    std::vector<int> state(static_cast<size_t>(n_cells), -1);
    for (const auto& step : rec.steps) {
        LG_CHECK(int(step.input_tokens.size()) == n_cells,
                 "malformed record: step " << step.step << " input state has "
                                           << step.input_tokens.size() << " cells");
        LG_CHECK(step.input_tokens == state,
                 "malformed record: step " << step.step << " input state mismatch");
        LG_CHECK(step.revealed.size() == step.sampled.size() &&
                     step.revealed.size() == step.behavior_logp.size(),
                 "malformed record: misaligned step arrays");
        for (size_t i = 0; i < step.revealed.size(); ++i) {
            const int cell = step.revealed[i];
            LG_CHECK(cell >= 0 && cell < n_cells, "malformed record: cell " << cell);
            LG_CHECK(!seen[size_t(cell)], "malformed record: cell " << cell << " revealed twice");
            LG_CHECK(step.sampled[i] >= 0 && step.sampled[i] < kImageVocab,
                     "malformed record: token " << step.sampled[i]);
            LG_CHECK(step.behavior_logp[i] <= 0.0 && std::isfinite(step.behavior_logp[i]),
                     "malformed record: log-prob " << step.behavior_logp[i]);
            seen[size_t(cell)] = 1;
            state[size_t(cell)] = step.sampled[i];
        }
    }
    for (int c = 0; c < n_cells; ++c)
        LG_CHECK(seen[size_t(c)], "malformed record: cell " << c << " never revealed");
    LG_CHECK(state == rec.final_grid, "malformed record: final grid mismatch");
}

// G independent recorded decodes for one condition, distinct rng substreams.
template <class T>
std::vector<RolloutRecord> rollout_group(const Model<T>& behavior,
                                         const SceneCondition& condition, int group_size,
                                         const DecodeConfig& cfg, uint64_t base_seed,
                                         int threads = 1) {
    LG_CHECK(group_size >= 2, "group size must be >= 2, got " << group_size);
    std::vector<RolloutRecord> records(static_cast<size_t>(group_size));
    parallel_for(group_size, threads, [&](int gi) {
        const uint64_t seed = splitmix64(base_seed + uint64_t(gi) * 0x9e3779b97f4a7c15ull);
        RolloutRecord rec;
        rec.seed = seed;
        decode(behavior, condition.prompt, condition.layout, cfg, Rng(seed), &rec);
        records[size_t(gi)] = std::move(rec);
    });
    return records;
}

// Log-probs of the recorded tokens under `model`, aligned by cell index.
// Each step is reconstructed and replayed independently, so the result does
// not depend on step-processing order.
template <class T>
std::vector<double> replay_logprobs(const Model<T>& model, const RolloutRecord& rec) {
    const SequenceBudget& budget = model.config().budget;
    const int n = budget.image_len();
    validate_record(rec, n);
    const AttentionMask cond_mask = model.mask_for(
        rec.layout, build_token_sequence(budget, rec.prompt, rec.layout,
                                         std::vector<int>(static_cast<size_t>(n), -1))
                        .seg);
    const AttentionMask uncond_mask = model.unconditional_mask();
    std::vector<double> out(static_cast<size_t>(n), 0.0);
    for (const auto& step : rec.steps) {
        Graph<T> g;
        auto bound = model.bind(g, /*requires_grad=*/false);
        auto logits = detail::guided_step_logits(g, model, bound, rec.prompt, rec.layout,
                                                 step.input_tokens, cond_mask, uncond_mask,
                                                 rec.decode_cfg);
        const T* lv = g.value(logits);
        for (size_t i = 0; i < step.revealed.size(); ++i) {
            const int cell = step.revealed[i];
            out[size_t(cell)] = double(detail::row_log_prob(
                lv + size_t(cell) * size_t(kImageVocab), kImageVocab, step.sampled[i]));
        }
    }
    return out;
}

// Group-standardized, channel-weighted advantages (Eq. 4 shape). The layout
// weight is `in_box_boost` at cells covered by any box, else `w_layout`.
inline std::vector<AdvantageMap> compute_advantages(const GroupRewards& rewards,
                                                    const LayoutCondition& layout,
                                                    const GridGeometry& geom,
                                                    const GrpoConfig& cfg) {
    const int g_size = int(rewards.layout.size());
    LG_CHECK(g_size >= 2, "advantage normalization needs a group of >= 2");
    LG_CHECK(int(rewards.quality.size()) == g_size, "reward channel size mismatch");

    auto standardize = [&](const std::vector<double>& r) {
        double mean = 0;
        for (double v : r) mean += v;
        mean /= double(g_size);
        double var = 0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= double(g_size);
        const double std_dev = std::sqrt(var);
        std::vector<double> a(static_cast<size_t>(g_size));
        for (int i = 0; i < g_size; ++i) a[size_t(i)] = (r[size_t(i)] - mean) / (std_dev + 1e-8);
        return a;
    };

    const std::vector<double> a_hps = standardize(rewards.quality);
    const std::vector<double> a_layout = standardize(rewards.layout);

    std::vector<double> layout_weight(static_cast<size_t>(geom.cells()));
    for (int cell = 0; cell < geom.cells(); ++cell)
        layout_weight[size_t(cell)] =
            containing_objects(cell, layout, geom).empty() ? cfg.w_layout : cfg.in_box_boost;

    std::vector<AdvantageMap> maps(static_cast<size_t>(g_size));
    for (int i = 0; i < g_size; ++i) {
        maps[size_t(i)].per_cell.resize(static_cast<size_t>(geom.cells()));
        for (int cell = 0; cell < geom.cells(); ++cell) {
            double a = 0.0;
            if (cfg.use_quality) a += cfg.w_hps * a_hps[size_t(i)];
            if (cfg.use_layout) a += layout_weight[size_t(cell)] * a_layout[size_t(i)];
            maps[size_t(i)].per_cell[size_t(cell)] = a;
        }
    }
    return maps;
}

struct RecordLossStats {
    double loss = 0;             // per-record surrogate (negated), incl. KL term
    double unclipped_loss = 0;   // -(1/N) sum r*A
    double clipped_loss = 0;     // -(1/N) sum clip(r)*A
    int clipped_positions = 0;
    int positions = 0;
};

// Surrogate loss for one record; gradients are accumulated into `grad_buf`
// (store order) when it is non-null. `reference` is only evaluated when
// beta > 0; every reference forward bumps `ref_calls`.
template <class T>
RecordLossStats grpo_record_loss(const Model<T>& policy, const RolloutRecord& rec,
                                 const AdvantageMap& adv, double clip_eps, double beta,
                                 const Model<T>* reference, std::vector<T>* grad_buf,
                                 std::atomic<int64_t>* ref_calls = nullptr) {
    const SequenceBudget& budget = policy.config().budget;
    const int n = budget.image_len();
    validate_record(rec, n);
    LG_CHECK(int(adv.per_cell.size()) == n,
             "advantage map has " << adv.per_cell.size() << " cells, expected " << n);
    LG_CHECK(beta == 0.0 || reference, "beta > 0 requires a reference model");

    const AttentionMask cond_mask = policy.mask_for(
        rec.layout, build_token_sequence(budget, rec.prompt, rec.layout,
                                         std::vector<int>(static_cast<size_t>(n), -1))
                        .seg);
    const AttentionMask uncond_mask = policy.unconditional_mask();

    RecordLossStats stats;
    const T inv_n = T(1) / T(n);
    for (const auto& step : rec.steps) {
        if (step.revealed.empty()) continue;
        const int m = int(step.revealed.size());
        Graph<T> g;
        auto bound = policy.bind(g, grad_buf != nullptr);
        auto logits = detail::guided_step_logits(g, policy, bound, rec.prompt, rec.layout,
                                                 step.input_tokens, cond_mask, uncond_mask,
                                                 rec.decode_cfg);
        auto rows = g.row_gather(logits, step.revealed);
        auto logp = g.gather_logprob(rows, step.sampled);

        std::vector<T> behavior(static_cast<size_t>(m));
        std::vector<T> a(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i) {
            behavior[size_t(i)] = T(step.behavior_logp[size_t(i)]);
            a[size_t(i)] = T(adv.per_cell[size_t(step.revealed[size_t(i)])]);
        }
        auto ratio = g.exp(g.sub(logp, g.constant({m}, behavior)));
        auto clipped = g.clip(ratio, T(1.0 - clip_eps), T(1.0 + clip_eps));
        auto adv_node = g.constant({m}, a);
        auto surr = g.minimum(g.hadamard(ratio, adv_node), g.hadamard(clipped, adv_node));
        // loss contribution: -(1/N) sum_t surr
        auto step_loss = g.scale(g.sum(surr), -inv_n);

        // Unclipped/clipped bookkeeping for the on-policy identity checks.
        // Bookkeeping follows the same T-precision accumulation order as the
        // graph so the on-policy identity (r == 1) holds bitwise.
        const T* rv = g.value(ratio);
        const T* av = g.value(adv_node);
        T clipped_sum = T(0), unclipped_sum = T(0);
        for (int i = 0; i < m; ++i) {
            const T rc = std::min(T(1.0 + clip_eps), std::max(T(1.0 - clip_eps), rv[i]));
            clipped_sum += rc * av[i];
            unclipped_sum += rv[i] * av[i];
            if (rv[i] < T(1.0 - clip_eps) || rv[i] > T(1.0 + clip_eps)) ++stats.clipped_positions;
            ++stats.positions;
        }
        stats.clipped_loss += double(-inv_n * clipped_sum);
        stats.unclipped_loss += double(-inv_n * unclipped_sum);

        if (beta > 0.0) {
            Graph<T> gr;
            auto ref_bound = reference->bind(gr, false);
            auto ref_logits = detail::guided_step_logits(gr, *reference, ref_bound, rec.prompt,
                                                         rec.layout, step.input_tokens, cond_mask,
                                                         uncond_mask, rec.decode_cfg);
            if (ref_calls) ref_calls->fetch_add(1);
            auto ref_rows = gr.row_gather(ref_logits, step.revealed);
            auto ref_logp = gr.gather_logprob(ref_rows, step.sampled);
            std::vector<T> ref_vals(gr.value(ref_logp), gr.value(ref_logp) + m);
            // k3 estimator of KL(pi_theta || pi_ref): exp(d) - d - 1, d = ref - theta.
            auto d = g.sub(g.constant({m}, ref_vals), logp);
            auto k3 = g.sub(g.sub(g.exp(d), d), g.constant({m}, std::vector<T>(static_cast<size_t>(m), T(1))));
            step_loss = g.add_scaled(step_loss, g.scale(g.sum(k3), inv_n), T(beta));
        }

        stats.loss += double(g.scalar(step_loss));
        if (grad_buf) {
            g.backward(step_loss);
            policy.collect_grads(g, bound, *grad_buf);
        }
    }
    return stats;
}

// ---- training loop ---------------------------------------------------------

struct GrpoIterationLog {
    int iteration = 0;
    double mean_quality = 0;
    double mean_layout = 0;
    double loss = 0;
    double clip_fraction = 0;

    std::string line() const {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "iter=%d reward_quality=%.6f reward_layout=%.6f loss=%.6f clip_frac=%.4f",
                      iteration, mean_quality, mean_layout, loss, clip_fraction);
        return std::string(buf);
    }
};

template <class T>
struct GrpoResult {
    std::vector<GrpoIterationLog> log;
    int64_t reference_calls = 0;
};

// One update per iteration from fresh rollouts; trajectories are discarded
// afterwards. The behavior policy for each batch is the current weights.
template <class T>
GrpoResult<T> train_grpo(Model<T>& model, const Model<T>* reference,
                         const std::vector<SceneSample>& dataset, const GrpoConfig& cfg,
                         uint64_t seed,
                         const std::function<void(const GrpoIterationLog&)>& on_iteration = {}) {
    LG_CHECK(model.ready(), "train_grpo: model weights are not loaded");
    LG_CHECK(cfg.group_size >= 2, "train_grpo: group size must be >= 2");
    const GridGeometry geom = model.config().budget.geometry();
    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    AdamW<T> opt(model.params(), opt_cfg);
    const DecodeConfig dec = cfg.decode_config();
    std::atomic<int64_t> ref_calls{0};
    GrpoResult<T> result;
    Rng rng(splitmix64(seed ^ 0x6772706full));

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        // Fresh rollouts from the current weights (pi_theta_old == pi_theta).
        std::vector<const SceneSample*> batch;
        for (int c = 0; c < cfg.batch_conditions; ++c)
            batch.push_back(&dataset[size_t(rng.uniform_int(int64_t(dataset.size())))]);

        const int total = cfg.batch_conditions * cfg.group_size;
        std::vector<RolloutRecord> records(static_cast<size_t>(total));
        std::vector<uint64_t> cond_seeds(static_cast<size_t>(cfg.batch_conditions));
        for (int c = 0; c < cfg.batch_conditions; ++c) cond_seeds[size_t(c)] = rng.next_u64();
        parallel_for(total, cfg.threads, [&](int j) {
            const int c = j / cfg.group_size;
            const int gi = j % cfg.group_size;
            const uint64_t rseed =
                splitmix64(cond_seeds[size_t(c)] + uint64_t(gi) * 0x9e3779b97f4a7c15ull);
            RolloutRecord rec;
            rec.seed = rseed;
            decode(model, batch[size_t(c)]->prompt, batch[size_t(c)]->layout, dec, Rng(rseed),
                   &rec);
            records[size_t(j)] = std::move(rec);
        });

        // Score and normalize within each group.
        std::vector<AdvantageMap> advantages(static_cast<size_t>(total));
        double sum_quality = 0, sum_layout = 0;
        for (int c = 0; c < cfg.batch_conditions; ++c) {
            GroupRewards gr;
            for (int gi = 0; gi < cfg.group_size; ++gi) {
                const RolloutRecord& rec = records[size_t(c * cfg.group_size + gi)];
                gr.quality.push_back(quality_proxy_reward(rec.prompt, rec.layout, rec.final_grid,
                                                          geom));
                gr.layout.push_back(layout_reward(rec.layout, rec.final_grid, geom));
                sum_quality += gr.quality.back();
                sum_layout += gr.layout.back();
            }
            auto maps = compute_advantages(gr, batch[size_t(c)]->layout, geom, cfg);
            for (int gi = 0; gi < cfg.group_size; ++gi)
                advantages[size_t(c * cfg.group_size + gi)] = std::move(maps[size_t(gi)]);
        }

        // One gradient update over all records; per-record buffers are
        // reduced in record order so the result is thread-count independent.
        std::vector<std::vector<T>> bufs(static_cast<size_t>(total));
        std::vector<RecordLossStats> stats(static_cast<size_t>(total));
        parallel_for(total, cfg.threads, [&](int j) {
            bufs[size_t(j)] = model.params().make_grad_buffer();
            stats[size_t(j)] = grpo_record_loss(model, records[size_t(j)], advantages[size_t(j)],
                                                cfg.clip_eps, cfg.kl_beta,
                                                reference, &bufs[size_t(j)], &ref_calls);
        });
        model.params().zero_grad();
        const T inv_records = T(1) / T(total);
        for (int j = 0; j < total; ++j) model.params().add_grads_from(bufs[size_t(j)], inv_records);
        opt.step();

        GrpoIterationLog log;
        log.iteration = iter + 1;
        log.mean_quality = sum_quality / double(total);
        log.mean_layout = sum_layout / double(total);
        double loss = 0;
        int64_t clipped = 0, positions = 0;
        for (const auto& st : stats) {
            loss += st.loss;
            clipped += st.clipped_positions;
            positions += st.positions;
        }
        log.loss = loss / double(total);
        log.clip_fraction = positions ? double(clipped) / double(positions) : 0.0;
        result.log.push_back(log);
        if (on_iteration) on_iteration(log);
    }
    result.reference_calls = ref_calls.load();
    return result;
}

}  // namespace layoutgen
