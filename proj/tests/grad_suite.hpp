#pragma once

// Finite-difference sweep over every differentiable graph op. Shared by the
// unit tests (few cases for speed) and the acceptance suite (>= 50 cases
// per op). Each case reduces the op output to a scalar through dot_const
// with weights frozen up front, so repeated evaluations see one function.

#include <string>
#include <vector>

#include "testutil.hpp"

namespace lgtest {

using G = Graph<double>;
using Ref = G::Ref;

struct OpSweep {
    std::string op;
    double worst = 0.0;
    int cases = 0;
};

namespace sweep_detail {

inline int dim(Rng& rng, int lo = 1, int hi = 6) {
    return lo + int(rng.uniform_int(hi - lo + 1));
}

// Wraps a tensor-valued builder into a scalar loss with frozen weights.
using TensorBuilder = std::function<Ref(G&, const std::vector<Ref>&)>;

inline LossBuilder frozen_dot(const TensorBuilder& f, int64_t out_numel, Rng& rng) {
    std::vector<double> w(static_cast<size_t>(out_numel));
    for (auto& v : w) v = rng.normal();
    return [f, w](G& g, const std::vector<Ref>& in) { return g.dot_const(f(g, in), w); };
}

}  // namespace sweep_detail

inline std::vector<OpSweep> run_gradient_sweep(int cases_per_op, uint64_t seed) {
    using namespace sweep_detail;
    std::vector<OpSweep> results;

    auto sweep = [&](const std::string& name,
                     const std::function<double(Rng&)>& one_case) {
        OpSweep r{name, 0.0, cases_per_op};
        for (int c = 0; c < cases_per_op; ++c) {
            Rng rng(layoutgen::splitmix64(seed) ^
                    layoutgen::splitmix64(uint64_t(c) * 7919u + std::hash<std::string>{}(name)));
            r.worst = std::max(r.worst, one_case(rng));
        }
        results.push_back(r);
    };

    sweep("sum", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        auto a = random_values(m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}}, [](G& g, const std::vector<Ref>& in) {
            return g.sum(in[0]);
        });
    });

    sweep("mean", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        auto a = random_values(m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}}, [](G& g, const std::vector<Ref>& in) {
            return g.mean(in[0]);
        });
    });

    sweep("dot_const", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        auto a = random_values(m * n, rng);
        std::vector<double> w = random_values(m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}}, [w](G& g, const std::vector<Ref>& in) {
            return g.dot_const(in[0], w);
        });
    });

    sweep("add", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        auto a = random_values(m * n, rng), b = random_values(m * n, rng);
        auto loss = frozen_dot([](G& g, const std::vector<Ref>& in) { return g.add(in[0], in[1]); },
                               m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}, {{m, n}, &b}}, loss);
    });

    sweep("sub", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        auto a = random_values(m * n, rng), b = random_values(m * n, rng);
        auto loss = frozen_dot([](G& g, const std::vector<Ref>& in) { return g.sub(in[0], in[1]); },
                               m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}, {{m, n}, &b}}, loss);
    });

    sweep("add_scaled", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        const double s = rng.normal();
        auto a = random_values(m * n, rng), b = random_values(m * n, rng);
        auto loss = frozen_dot(
            [s](G& g, const std::vector<Ref>& in) { return g.add_scaled(in[0], in[1], s); },
            m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}, {{m, n}, &b}}, loss);
    });

    sweep("scale", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        const double s = rng.normal();
        auto a = random_values(m * n, rng);
        auto loss = frozen_dot([s](G& g, const std::vector<Ref>& in) { return g.scale(in[0], s); },
                               m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}}, loss);
    });

    sweep("hadamard", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        auto a = random_values(m * n, rng), b = random_values(m * n, rng);
        auto loss = frozen_dot(
            [](G& g, const std::vector<Ref>& in) { return g.hadamard(in[0], in[1]); }, m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}, {{m, n}, &b}}, loss);
    });

    sweep("add_rowvec", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        auto a = random_values(m * n, rng), b = random_values(n, rng);
        auto loss = frozen_dot(
            [](G& g, const std::vector<Ref>& in) { return g.add_rowvec(in[0], in[1]); }, m * n,
            rng);
        return max_grad_discrepancy({{{m, n}, &a}, {{n}, &b}}, loss);
    });

    sweep("matmul", [&](Rng& rng) {
        const int m = dim(rng), k = dim(rng), n = dim(rng);
        auto a = random_values(m * k, rng), b = random_values(k * n, rng);
        auto loss = frozen_dot(
            [](G& g, const std::vector<Ref>& in) { return g.matmul(in[0], in[1]); }, m * n, rng);
        return max_grad_discrepancy({{{m, k}, &a}, {{k, n}, &b}}, loss);
    });

    sweep("matmul_nt", [&](Rng& rng) {
        const int m = dim(rng), k = dim(rng), n = dim(rng);
        auto a = random_values(m * k, rng), b = random_values(n * k, rng);
        auto loss = frozen_dot(
            [](G& g, const std::vector<Ref>& in) { return g.matmul_nt(in[0], in[1]); }, m * n,
            rng);
        return max_grad_discrepancy({{{m, k}, &a}, {{n, k}, &b}}, loss);
    });

    sweep("gelu", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        auto a = random_values(m * n, rng);
        auto loss = frozen_dot([](G& g, const std::vector<Ref>& in) { return g.gelu(in[0]); },
                               m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}}, loss);
    });

    sweep("exp", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        auto a = random_values(m * n, rng);
        auto loss = frozen_dot([](G& g, const std::vector<Ref>& in) { return g.exp(in[0]); },
                               m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}}, loss);
    });

    sweep("clip", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        auto a = random_values(m * n, rng);
        for (auto& x : a)
            while (std::abs(x - 0.5) < 1e-3 || std::abs(x + 0.5) < 1e-3) x = rng.normal();
        auto loss = frozen_dot(
            [](G& g, const std::vector<Ref>& in) { return g.clip(in[0], -0.5, 0.5); }, m * n,
            rng);
        return max_grad_discrepancy({{{m, n}, &a}}, loss);
    });

    sweep("minimum", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        auto a = random_values(m * n, rng), b = random_values(m * n, rng);
        for (size_t i = 0; i < a.size(); ++i)
            while (std::abs(a[i] - b[i]) < 1e-3) b[i] = rng.normal();
        auto loss = frozen_dot(
            [](G& g, const std::vector<Ref>& in) { return g.minimum(in[0], in[1]); }, m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}, {{m, n}, &b}}, loss);
    });

    sweep("layer_norm", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng, 4, 8);
        auto x = random_values(m * n, rng);
        auto gain = random_values(n, rng);
        auto bias = random_values(n, rng);
        auto loss = frozen_dot(
            [](G& g, const std::vector<Ref>& in) {
                return g.layer_norm(in[0], in[1], in[2], 1e-5);
            },
            m * n, rng);
        return max_grad_discrepancy({{{m, n}, &x}, {{n}, &gain}, {{n}, &bias}}, loss);
    });

    sweep("embedding", [&](Rng& rng) {
        const int v = dim(rng, 3, 8), d = dim(rng, 2, 6), m = dim(rng, 1, 8);
        auto table = random_values(v * d, rng);
        std::vector<int> ids(static_cast<size_t>(m));
        for (auto& id : ids) id = int(rng.uniform_int(v));  // repeats exercise scatter-add
        auto loss = frozen_dot(
            [ids](G& g, const std::vector<Ref>& in) { return g.embedding(in[0], ids); }, m * d,
            rng);
        return max_grad_discrepancy({{{v, d}, &table}}, loss);
    });

    sweep("row_concat", [&](Rng& rng) {
        const int n = dim(rng), m1 = dim(rng), m2 = dim(rng);
        auto a = random_values(m1 * n, rng), b = random_values(m2 * n, rng);
        auto loss = frozen_dot(
            [](G& g, const std::vector<Ref>& in) { return g.row_concat({in[0], in[1]}); },
            (m1 + m2) * n, rng);
        return max_grad_discrepancy({{{m1, n}, &a}, {{m2, n}, &b}}, loss);
    });

    sweep("col_concat", [&](Rng& rng) {
        const int m = dim(rng), n1 = dim(rng), n2 = dim(rng);
        auto a = random_values(m * n1, rng), b = random_values(m * n2, rng);
        auto loss = frozen_dot(
            [](G& g, const std::vector<Ref>& in) { return g.col_concat({in[0], in[1]}); },
            m * (n1 + n2), rng);
        return max_grad_discrepancy({{{m, n1}, &a}, {{m, n2}, &b}}, loss);
    });

    sweep("col_slice", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng, 3, 8);
        const int c0 = int(rng.uniform_int(n - 1));
        const int c1 = c0 + 1 + int(rng.uniform_int(n - c0 - 1));
        auto a = random_values(m * n, rng);
        auto loss = frozen_dot(
            [c0, c1](G& g, const std::vector<Ref>& in) { return g.col_slice(in[0], c0, c1); },
            m * (c1 - c0), rng);
        return max_grad_discrepancy({{{m, n}, &a}}, loss);
    });

    sweep("row_gather", [&](Rng& rng) {
        const int m = dim(rng, 2, 8), n = dim(rng);
        std::vector<int> rows(static_cast<size_t>(dim(rng, 1, 6)));
        for (auto& r : rows) r = int(rng.uniform_int(m));
        auto a = random_values(m * n, rng);
        auto loss = frozen_dot(
            [rows](G& g, const std::vector<Ref>& in) { return g.row_gather(in[0], rows); },
            int(rows.size()) * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}}, loss);
    });

    sweep("masked_softmax", [&](Rng& rng) {
        const int s = dim(rng, 2, 7);
        auto mask = std::make_shared<layoutgen::AttentionMask>(s);
        for (int q = 0; q < s; ++q) {
            mask->set(q, q, true);
            for (int k = 0; k < s; ++k)
                if (rng.uniform() < 0.6) mask->set(q, k, true);
        }
        auto a = random_values(s * s, rng);
        auto loss = frozen_dot(
            [mask](G& g, const std::vector<Ref>& in) {
                return g.masked_softmax(in[0], mask.get());
            },
            s * s, rng);
        return max_grad_discrepancy({{{s, s}, &a}}, loss);
    });

    sweep("attention", [&](Rng& rng) {
        const int heads = 1 + int(rng.uniform_int(2));
        const int hd = dim(rng, 2, 4);
        const int d = heads * hd;
        const int s = dim(rng, 2, 6);
        auto mask = std::make_shared<layoutgen::AttentionMask>(s);
        for (int q = 0; q < s; ++q) {
            mask->set(q, q, true);
            for (int k = 0; k < s; ++k)
                if (rng.uniform() < 0.6) mask->set(q, k, true);
        }
        auto q = random_values(s * d, rng), k = random_values(s * d, rng),
             v = random_values(s * d, rng);
        auto loss = frozen_dot(
            [mask, heads](G& g, const std::vector<Ref>& in) {
                return g.attention(in[0], in[1], in[2], *mask, heads);
            },
            s * d, rng);
        return max_grad_discrepancy({{{s, d}, &q}, {{s, d}, &k}, {{s, d}, &v}}, loss);
    });

    sweep("cross_entropy", [&](Rng& rng) {
        const int m = dim(rng, 2, 6), v = dim(rng, 2, 8);
        auto logits = random_values(m * v, rng);
        std::vector<int> targets(static_cast<size_t>(m));
        std::vector<uint8_t> select(static_cast<size_t>(m), 0);
        for (auto& t : targets) t = int(rng.uniform_int(v));
        int n_sel = 0;
        for (auto& s : select)
            if (rng.uniform() < 0.6) {
                s = 1;
                ++n_sel;
            }
        if (!n_sel) select[0] = 1;
        return max_grad_discrepancy({{{m, v}, &logits}},
                                    [targets, select](G& g, const std::vector<Ref>& in) {
                                        return g.cross_entropy(in[0], targets, select);
                                    });
    });

    sweep("gather_logprob", [&](Rng& rng) {
        const int m = dim(rng, 2, 6), v = dim(rng, 2, 8);
        auto logits = random_values(m * v, rng);
        std::vector<int> picks(static_cast<size_t>(m));
        for (auto& p : picks) p = int(rng.uniform_int(v));
        auto loss = frozen_dot(
            [picks](G& g, const std::vector<Ref>& in) { return g.gather_logprob(in[0], picks); },
            m, rng);
        return max_grad_discrepancy({{{m, v}, &logits}}, loss);
    });

    sweep("dropout", [&](Rng& rng) {
        const int m = dim(rng), n = dim(rng);
        const uint64_t mask_seed = rng.next_u64();
        auto a = random_values(m * n, rng);
        auto loss = frozen_dot(
            [mask_seed](G& g, const std::vector<Ref>& in) {
                Rng drop_rng(mask_seed);  // identical keep-mask on every evaluation
                return g.dropout(in[0], 0.3, drop_rng);
            },
            m * n, rng);
        return max_grad_discrepancy({{{m, n}, &a}}, loss);
    });

    return results;
}

}  // namespace lgtest
