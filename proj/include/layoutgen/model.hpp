#pragma once

// Compact next-set transformer over the prompt | layout | image sequence.
//
// Pre-LN blocks with structured-mask attention. Positions use one learned
// absolute table over the budgeted sequence plus a learned role embedding
// (prompt/layout/image). Logits are produced at image positions only.

#include <string>
#include <vector>

#include "layoutgen/mask.hpp"
#include "layoutgen/optim.hpp"
#include "layoutgen/tensor.hpp"
#include "layoutgen/tokenizer.hpp"

namespace layoutgen {

struct ModelConfig {
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    double dropout = 0.0;
    double ln_eps = 1e-5;
    SequenceBudget budget;
    MaskVariant mask_variant = MaskVariant::kFull;

    int text_vocab() const { return vocab().size(); }
    int image_vocab() const { return kImageVocab; }
};

template <class T>
class Model {
public:
    using Ref = typename Graph<T>::Ref;

    Model() = default;
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        LG_CHECK(cfg.d_model % cfg.n_heads == 0,
                 "d_model " << cfg.d_model << " not divisible by n_heads " << cfg.n_heads);
        LG_CHECK(cfg.d_model % 2 == 0, "d_model must be even for Fourier embeddings");
        build_params();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    // Weights are usable once initialized or restored from a checkpoint.
    bool ready() const { return ready_; }
    void mark_ready() { ready_ = true; }

    void init_weights(uint64_t seed) {
        ready_ = true;
        Rng rng(splitmix64(seed ^ 0x6d6f64656cull));
        const double std_dev = 0.02;
        for (auto& p : params_.all()) {
            const bool is_gain = p.name.find(".gain") != std::string::npos;
            const bool is_bias = p.name.find(".b") != std::string::npos ||
                                 p.name.find(".bias") != std::string::npos;
            const bool zero_init = p.name == "adapter.w2" || p.name == "adapter.b2";
            for (auto& v : p.value) {
                if (zero_init || is_bias)
                    v = T(0);
                else if (is_gain)
                    v = T(1);
                else
                    v = T(rng.normal() * std_dev);
            }
        }
    }

    // Deep copy of the weights (behavior snapshots during GRPO).
    std::vector<std::vector<T>> snapshot_values() const {
        std::vector<std::vector<T>> out;
        out.reserve(params_.count());
        for (const auto& p : params_.all()) out.push_back(p.value);
        return out;
    }
    void restore_values(const std::vector<std::vector<T>>& values) {
        LG_CHECK(values.size() == params_.count(), "snapshot size mismatch");
        size_t i = 0;
        for (auto& p : params_.all()) p.value = values[i++];
        ready_ = true;
    }

    // Per-graph parameter bindings, in store order.
    struct Bound {
        std::vector<Ref> refs;
        EmbeddingRefs<T> embed;
        Ref image_table;
    };

    Bound bind(Graph<T>& g, bool requires_grad) const {
        Bound b;
        b.refs.reserve(params_.count());
        for (const auto& p : params_.all())
            b.refs.push_back(g.input(p.shape, p.value.data(), requires_grad));
        b.embed = EmbeddingRefs<T>{ref(b, "text_emb"), ref(b, "adapter.w1"), ref(b, "adapter.b1"),
                                   ref(b, "adapter.w2"), ref(b, "adapter.b2")};
        b.image_table = ref(b, "image_emb");
        return b;
    }

    // Adds graph-local parameter gradients into a flat buffer (store order).
    void collect_grads(const Graph<T>& g, const Bound& b, std::vector<T>& buf) const {
        LG_CHECK(int64_t(buf.size()) == params_.total_size(), "grad buffer size mismatch");
        size_t at = 0;
        size_t i = 0;
        for (const auto& p : params_.all()) {
            const std::vector<T>& grad = g.grad(b.refs[i]);
            if (!grad.empty())
                for (int64_t k = 0; k < p.size(); ++k) buf[at + size_t(k)] += grad[size_t(k)];
            at += size_t(p.size());
            ++i;
        }
    }

    // Logits over the image vocabulary at image positions: [H*W, V_img].
    Ref forward(Graph<T>& g, const Bound& b, const TokenSequence& ts, const AttentionMask& mask,
                bool train = false, Rng* dropout_rng = nullptr) const {
        const int s = cfg_.budget.seq_len();
        LG_CHECK(ts.seg.seq_len() == s, "sequence length " << ts.seg.seq_len()
                                                           << " does not match model budget " << s);
        LG_CHECK(mask.size == s,
                 "mask size " << mask.size << " does not match sequence length " << s);
        const T eps = T(cfg_.ln_eps);
        const bool drop = train && cfg_.dropout > 0.0;
        LG_CHECK(!drop || dropout_rng, "dropout enabled but no rng supplied");

        Ref x = embed_token_sequence(g, ts, b.embed, b.image_table, cfg_.d_model);
        x = g.add(x, ref(b, "pos_emb"));
        std::vector<int> roles(static_cast<size_t>(s));
        for (int p = 0; p < s; ++p) roles[size_t(p)] = int(ts.seg.role_of(p));
        x = g.add(x, g.embedding(ref(b, "role_emb"), std::move(roles)));

        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::string lp = "layer" + std::to_string(l) + ".";
            Ref h = g.layer_norm(x, ref(b, lp + "ln1.gain"), ref(b, lp + "ln1.bias"), eps);
            Ref q = g.add_rowvec(g.matmul(h, ref(b, lp + "attn.wq")), ref(b, lp + "attn.bq"));
            Ref k = g.add_rowvec(g.matmul(h, ref(b, lp + "attn.wk")), ref(b, lp + "attn.bk"));
            Ref v = g.add_rowvec(g.matmul(h, ref(b, lp + "attn.wv")), ref(b, lp + "attn.bv"));
            Ref att = g.attention(q, k, v, mask, cfg_.n_heads);
            Ref proj = g.add_rowvec(g.matmul(att, ref(b, lp + "attn.wo")), ref(b, lp + "attn.bo"));
            if (drop) proj = g.dropout(proj, T(cfg_.dropout), *dropout_rng);
            x = g.add(x, proj);
            Ref h2 = g.layer_norm(x, ref(b, lp + "ln2.gain"), ref(b, lp + "ln2.bias"), eps);
            Ref m1 = g.gelu(g.add_rowvec(g.matmul(h2, ref(b, lp + "mlp.w1")), ref(b, lp + "mlp.b1")));
            Ref m2 = g.add_rowvec(g.matmul(m1, ref(b, lp + "mlp.w2")), ref(b, lp + "mlp.b2"));
            if (drop) m2 = g.dropout(m2, T(cfg_.dropout), *dropout_rng);
            x = g.add(x, m2);
        }

        Ref xf = g.layer_norm(x, ref(b, "ln_f.gain"), ref(b, "ln_f.bias"), eps);
        std::vector<int> image_rows(static_cast<size_t>(cfg_.budget.image_len()));
        for (int i = 0; i < cfg_.budget.image_len(); ++i)
            image_rows[size_t(i)] = cfg_.budget.image_start() + i;
        Ref img = g.row_gather(xf, std::move(image_rows));
        return g.add_rowvec(g.matmul(img, ref(b, "head.w")), ref(b, "head.b"));
    }

    // Attention mask for a conditional sequence under this model's variant.
    AttentionMask mask_for(const LayoutCondition& layout, const SegmentMap& seg) const {
        return build_mask_variant(cfg_.mask_variant, seg, layout, cfg_.budget.geometry());
    }
    AttentionMask unconditional_mask() const {
        SegmentMap seg = build_segment_map(cfg_.budget, 1, {});
        return build_mask_variant(cfg_.mask_variant, seg, LayoutCondition{},
                                  cfg_.budget.geometry());
    }

private:
    Ref ref(const Bound& b, const std::string& name) const {
        return b.refs[index_of(name)];
    }

    size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        LG_CHECK(it != index_.end(), "unknown parameter " << name);
        return it->second;
    }

    void build_params() {
        const int d = cfg_.d_model;
        auto add = [&](const std::string& name, const Shape& shape) {
            index_[name] = params_.count();
            params_.add(name, shape);
        };
        add("text_emb", {cfg_.text_vocab(), d});
        add("image_emb", {cfg_.image_vocab() + 1, d});  // +1: [MASK] row
        add("pos_emb", {cfg_.budget.seq_len(), d});
        add("role_emb", {3, d});
        add("adapter.w1", {d, 4 * d});
        add("adapter.b1", {4 * d});
        add("adapter.w2", {4 * d, d});
        add("adapter.b2", {d});
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const std::string lp = "layer" + std::to_string(l) + ".";
            add(lp + "ln1.gain", {d});
            add(lp + "ln1.bias", {d});
            add(lp + "attn.wq", {d, d});
            add(lp + "attn.bq", {d});
            add(lp + "attn.wk", {d, d});
            add(lp + "attn.bk", {d});
            add(lp + "attn.wv", {d, d});
            add(lp + "attn.bv", {d});
            add(lp + "attn.wo", {d, d});
            add(lp + "attn.bo", {d});
            add(lp + "ln2.gain", {d});
            add(lp + "ln2.bias", {d});
            add(lp + "mlp.w1", {d, 4 * d});
            add(lp + "mlp.b1", {4 * d});
            add(lp + "mlp.w2", {4 * d, d});
            add(lp + "mlp.b2", {d});
        }
        add("ln_f.gain", {d});
        add("ln_f.bias", {d});
        add("head.w", {d, cfg_.image_vocab()});
        add("head.b", {cfg_.image_vocab()});
    }

    ModelConfig cfg_;
    ParamStore<T> params_;
    std::unordered_map<std::string, size_t> index_;
    bool ready_ = false;
};

// guided = cond + s * (cond - uncond); equals (1+s)*cond - s*uncond.
template <class T>
typename Graph<T>::Ref cfg_combine(Graph<T>& g, typename Graph<T>::Ref cond,
                                   typename Graph<T>::Ref uncond, T s) {
    return g.add_scaled(cond, g.sub(cond, uncond), s);
}

}  // namespace layoutgen
