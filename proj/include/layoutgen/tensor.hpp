#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Graph owns a tape of nodes; ops append nodes and record backward
// closures. Values are row-major. Rank is 0 (scalar), 1 or 2. The scalar
// type is a template parameter: float for training, double for the
// finite-difference test suites.
//
// Everything is single-threaded per graph and bit-deterministic: loops run
// in fixed order and the build disables FP contraction, so a forward pass
// replayed on identical inputs reproduces identical bits.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "layoutgen/common.hpp"

namespace layoutgen {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Boolean attention permission matrix, S x S, row = query, col = key.
struct AttentionMask {
    int size = 0;
    std::vector<uint8_t> allow;  // size*size, row-major

    AttentionMask() = default;
    explicit AttentionMask(int s) : size(s), allow(static_cast<size_t>(s) * size_t(s), 0) {}

    uint8_t at(int q, int k) const { return allow[size_t(q) * size_t(size) + size_t(k)]; }
    void set(int q, int k, bool v) { allow[size_t(q) * size_t(size) + size_t(k)] = v ? 1 : 0; }

    bool operator==(const AttentionMask& o) const {
        return size == o.size && allow == o.allow;
    }
};

namespace detail {

// Shared by the graph ops and the sampling code in decode so that recorded
// behavior log-probs and replayed log-probs follow the identical float path.
template <class T>
inline T row_logsumexp(const T* row, int n) {
    T mx = row[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    T acc = T(0);
    for (int i = 0; i < n; ++i) acc += std::exp(row[i] - mx);
    return mx + std::log(acc);
}

template <class T>
inline void row_softmax(const T* row, int n, T* out) {
    T mx = row[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    T acc = T(0);
    for (int i = 0; i < n; ++i) {
        out[i] = std::exp(row[i] - mx);
        acc += out[i];
    }
    T inv = T(1) / acc;
    for (int i = 0; i < n; ++i) out[i] *= inv;
}

template <class T>
inline T row_log_prob(const T* row, int n, int pick) {
    return row[pick] - row_logsumexp(row, n);
}

}  // namespace detail

template <class T>
class Graph {
public:
    using Ref = int32_t;
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapM = Eigen::Map<Mat>;
    using CMapM = Eigen::Map<const Mat>;

    // ---- node access -------------------------------------------------

    const Shape& shape(Ref r) const { return nodes_[size_t(r)].shape; }
    int rows(Ref r) const { return nodes_[size_t(r)].shape.size() > 0 ? nodes_[size_t(r)].shape[0] : 1; }
    int cols(Ref r) const { return nodes_[size_t(r)].shape.size() > 1 ? nodes_[size_t(r)].shape[1] : 1; }
    int64_t size(Ref r) const { return numel(nodes_[size_t(r)].shape); }

    const T* value(Ref r) const {
        const Node& n = nodes_[size_t(r)];
        return n.ext ? n.ext : n.value.data();
    }
    T scalar(Ref r) const {
        LG_CHECK(size(r) == 1, "scalar() on tensor of shape " << shape_str(shape(r)));
        return value(r)[0];
    }
    // Gradient of a node after backward(); empty if the node was off-path.
    const std::vector<T>& grad(Ref r) const { return nodes_[size_t(r)].grad; }

    size_t node_count() const { return nodes_.size(); }

    // ---- leaves --------------------------------------------------------

    // Leaf viewing external memory (parameters live outside the graph).
    Ref input(const Shape& s, const T* data, bool requires_grad) {
        Node n;
        n.shape = s;
        n.ext = data;
        n.requires_grad = requires_grad;
        return push(std::move(n));
    }

    Ref constant(const Shape& s, std::vector<T> v) {
        LG_CHECK(int64_t(v.size()) == numel(s),
                 "constant: " << v.size() << " values for shape " << shape_str(s));
        Node n;
        n.shape = s;
        n.value = std::move(v);
        return push(std::move(n));
    }

    Ref constant_scalar(T v) { return constant({}, {v}); }

    // ---- arithmetic ----------------------------------------------------

    Ref add(Ref a, Ref b) {
        check_same_shape("add", a, b);
        Ref r = alloc(shape(a), {a, b});
        const T* pa = value(a);
        const T* pb = value(b);
        T* out = data(r);
        const int64_t n = size(r);
        for (int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
        set_backward(r, [this, r, a, b] {
            accumulate(a, grad_of(r).data(), T(1));
            accumulate(b, grad_of(r).data(), T(1));
        });
        return r;
    }

    Ref sub(Ref a, Ref b) {
        check_same_shape("sub", a, b);
        Ref r = alloc(shape(a), {a, b});
        const T* pa = value(a);
        const T* pb = value(b);
        T* out = data(r);
        const int64_t n = size(r);
        for (int64_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
        set_backward(r, [this, r, a, b] {
            accumulate(a, grad_of(r).data(), T(1));
            accumulate(b, grad_of(r).data(), T(-1));
        });
        return r;
    }

    // a + s*b, same shapes. With s == 0 the result is bitwise equal to a.
    Ref add_scaled(Ref a, Ref b, T s) {
        check_same_shape("add_scaled", a, b);
        Ref r = alloc(shape(a), {a, b});
        const T* pa = value(a);
        const T* pb = value(b);
        T* out = data(r);
        const int64_t n = size(r);
        for (int64_t i = 0; i < n; ++i) out[i] = pa[i] + s * pb[i];
        set_backward(r, [this, r, a, b, s] {
            accumulate(a, grad_of(r).data(), T(1));
            accumulate(b, grad_of(r).data(), s);
        });
        return r;
    }

    Ref scale(Ref a, T s) {
        Ref r = alloc(shape(a), {a});
        const T* pa = value(a);
        T* out = data(r);
        const int64_t n = size(r);
        for (int64_t i = 0; i < n; ++i) out[i] = s * pa[i];
        set_backward(r, [this, r, a, s] { accumulate(a, grad_of(r).data(), s); });
        return r;
    }

    Ref hadamard(Ref a, Ref b) {
        check_same_shape("hadamard", a, b);
        Ref r = alloc(shape(a), {a, b});
        const T* pa = value(a);
        const T* pb = value(b);
        T* out = data(r);
        const int64_t n = size(r);
        for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
        set_backward(r, [this, r, a, b] {
            const std::vector<T>& g = grad_of(r);
            const int64_t m = size(r);
            std::vector<T> tmp(static_cast<size_t>(m));
            const T* pb2 = value(b);
            for (int64_t i = 0; i < m; ++i) tmp[size_t(i)] = g[size_t(i)] * pb2[i];
            accumulate(a, tmp.data(), T(1));
            const T* pa2 = value(a);
            for (int64_t i = 0; i < m; ++i) tmp[size_t(i)] = g[size_t(i)] * pa2[i];
            accumulate(b, tmp.data(), T(1));
        });
        return r;
    }

    // [m,n] + [n] broadcast over rows.
    Ref add_rowvec(Ref a, Ref b) {
        LG_CHECK(shape(a).size() == 2 && shape(b).size() == 1 && cols(a) == rows(b),
                 "add_rowvec: shapes " << shape_str(shape(a)) << " and " << shape_str(shape(b)));
        Ref r = alloc(shape(a), {a, b});
        const int m = rows(a), n = cols(a);
        const T* pa = value(a);
        const T* pb = value(b);
        T* out = data(r);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out[i * n + j] = pa[i * n + j] + pb[j];
        set_backward(r, [this, r, a, b, m, n] {
            const std::vector<T>& g = grad_of(r);
            accumulate(a, g.data(), T(1));
            std::vector<T> colsum(static_cast<size_t>(n), T(0));
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) colsum[size_t(j)] += g[size_t(i * n + j)];
            accumulate(b, colsum.data(), T(1));
        });
        return r;
    }

    // ---- matmul ---------------------------------------------------------

    Ref matmul(Ref a, Ref b) {
        LG_CHECK(shape(a).size() == 2 && shape(b).size() == 2 && cols(a) == rows(b),
                 "matmul: inner dimensions disagree, " << shape_str(shape(a)) << " x "
                                                       << shape_str(shape(b)));
        const int m = rows(a), k = cols(a), n = cols(b);
        Ref r = alloc({m, n}, {a, b});
        CMapM ma(value(a), m, k), mb(value(b), k, n);
        MapM mr(data(r), m, n);
        mr.noalias() = ma * mb;
        set_backward(r, [this, r, a, b, m, k, n] {
            CMapM g(grad_of(r).data(), m, n);
            CMapM ma2(value(a), m, k), mb2(value(b), k, n);
            if (wants_grad(a)) {
                std::vector<T> da(static_cast<size_t>(m) * size_t(k));
                MapM(da.data(), m, k).noalias() = g * mb2.transpose();
                accumulate(a, da.data(), T(1));
            }
            if (wants_grad(b)) {
                std::vector<T> db(static_cast<size_t>(k) * size_t(n));
                MapM(db.data(), k, n).noalias() = ma2.transpose() * g;
                accumulate(b, db.data(), T(1));
            }
        });
        return r;
    }

    // a [m,k] x b[n,k]^T -> [m,n]
    Ref matmul_nt(Ref a, Ref b) {
        LG_CHECK(shape(a).size() == 2 && shape(b).size() == 2 && cols(a) == cols(b),
                 "matmul_nt: inner dimensions disagree, " << shape_str(shape(a)) << " x "
                                                          << shape_str(shape(b)) << "^T");
        const int m = rows(a), k = cols(a), n = rows(b);
        Ref r = alloc({m, n}, {a, b});
        CMapM ma(value(a), m, k), mb(value(b), n, k);
        MapM mr(data(r), m, n);
        mr.noalias() = ma * mb.transpose();
        set_backward(r, [this, r, a, b, m, k, n] {
            CMapM g(grad_of(r).data(), m, n);
            CMapM ma2(value(a), m, k), mb2(value(b), n, k);
            if (wants_grad(a)) {
                std::vector<T> da(static_cast<size_t>(m) * size_t(k));
                MapM(da.data(), m, k).noalias() = g * mb2;
                accumulate(a, da.data(), T(1));
            }
            if (wants_grad(b)) {
                std::vector<T> db(static_cast<size_t>(n) * size_t(k));
                MapM(db.data(), n, k).noalias() = g.transpose() * ma2;
                accumulate(b, db.data(), T(1));
            }
        });
        return r;
    }

    // ---- nonlinearities --------------------------------------------------

    Ref gelu(Ref a) {
        Ref r = alloc(shape(a), {a});
        const T* pa = value(a);
        T* out = data(r);
        const int64_t n = size(r);
        const T inv_sqrt2 = T(0.7071067811865475244);
        for (int64_t i = 0; i < n; ++i)
            out[i] = T(0.5) * pa[i] * (T(1) + std::erf(pa[i] * inv_sqrt2));
        set_backward(r, [this, r, a] {
            const std::vector<T>& g = grad_of(r);
            const T* x = value(a);
            const int64_t m = size(r);
            const T inv_sqrt2b = T(0.7071067811865475244);
            const T inv_sqrt2pi = T(0.3989422804014326779);
            std::vector<T> da(static_cast<size_t>(m));
            for (int64_t i = 0; i < m; ++i) {
                T phi = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2b));
                T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
                da[size_t(i)] = g[size_t(i)] * (phi + x[i] * pdf);
            }
            accumulate(a, da.data(), T(1));
        });
        return r;
    }

    Ref exp(Ref a) {
        Ref r = alloc(shape(a), {a});
        const T* pa = value(a);
        T* out = data(r);
        const int64_t n = size(r);
        for (int64_t i = 0; i < n; ++i) out[i] = std::exp(pa[i]);
        set_backward(r, [this, r, a] {
            const std::vector<T>& g = grad_of(r);
            const T* y = value(r);
            const int64_t m = size(r);
            std::vector<T> da(static_cast<size_t>(m));
            for (int64_t i = 0; i < m; ++i) da[size_t(i)] = g[size_t(i)] * y[i];
            accumulate(a, da.data(), T(1));
        });
        return r;
    }

    // Elementwise clamp; gradient passes inside [lo,hi], zero outside.
    Ref clip(Ref a, T lo, T hi) {
        Ref r = alloc(shape(a), {a});
        const T* pa = value(a);
        T* out = data(r);
        const int64_t n = size(r);
        for (int64_t i = 0; i < n; ++i) out[i] = std::min(hi, std::max(lo, pa[i]));
        set_backward(r, [this, r, a, lo, hi] {
            const std::vector<T>& g = grad_of(r);
            const T* x = value(a);
            const int64_t m = size(r);
            std::vector<T> da(static_cast<size_t>(m));
            for (int64_t i = 0; i < m; ++i)
                da[size_t(i)] = (x[i] >= lo && x[i] <= hi) ? g[size_t(i)] : T(0);
            accumulate(a, da.data(), T(1));
        });
        return r;
    }

    // Elementwise min; ties route the gradient to a.
    Ref minimum(Ref a, Ref b) {
        check_same_shape("minimum", a, b);
        Ref r = alloc(shape(a), {a, b});
        const T* pa = value(a);
        const T* pb = value(b);
        T* out = data(r);
        const int64_t n = size(r);
        for (int64_t i = 0; i < n; ++i) out[i] = std::min(pa[i], pb[i]);
        set_backward(r, [this, r, a, b] {
            const std::vector<T>& g = grad_of(r);
            const T* pa2 = value(a);
            const T* pb2 = value(b);
            const int64_t m = size(r);
            std::vector<T> da(static_cast<size_t>(m)), db(static_cast<size_t>(m));
            for (int64_t i = 0; i < m; ++i) {
                bool take_a = pa2[i] <= pb2[i];
                da[size_t(i)] = take_a ? g[size_t(i)] : T(0);
                db[size_t(i)] = take_a ? T(0) : g[size_t(i)];
            }
            accumulate(a, da.data(), T(1));
            accumulate(b, db.data(), T(1));
        });
        return r;
    }

    Ref layer_norm(Ref x, Ref gain, Ref bias, T eps) {
        LG_CHECK(shape(x).size() == 2 && shape(gain).size() == 1 && shape(bias).size() == 1 &&
                     cols(x) == rows(gain) && cols(x) == rows(bias),
                 "layer_norm: shapes " << shape_str(shape(x)) << ", " << shape_str(shape(gain))
                                       << ", " << shape_str(shape(bias)));
        const int m = rows(x), n = cols(x);
        Ref r = alloc(shape(x), {x, gain, bias});
        auto& st = stash(r);
        st.resize(static_cast<size_t>(m) * 2);  // per-row mean, rstd
        const T* px = value(x);
        const T* pg = value(gain);
        const T* pb = value(bias);
        T* out = data(r);
        for (int i = 0; i < m; ++i) {
            T mean = T(0);
            for (int j = 0; j < n; ++j) mean += px[i * n + j];
            mean /= T(n);
            T var = T(0);
            for (int j = 0; j < n; ++j) {
                T d = px[i * n + j] - mean;
                var += d * d;
            }
            var /= T(n);
            T rstd = T(1) / std::sqrt(var + eps);
            st[size_t(i) * 2] = mean;
            st[size_t(i) * 2 + 1] = rstd;
            for (int j = 0; j < n; ++j)
                out[i * n + j] = (px[i * n + j] - mean) * rstd * pg[j] + pb[j];
        }
        set_backward(r, [this, r, x, gain, bias, m, n] {
            const std::vector<T>& g = grad_of(r);
            const std::vector<T>& st2 = stash(r);
            const T* px2 = value(x);
            const T* pg2 = value(gain);
            std::vector<T> dx(static_cast<size_t>(m) * size_t(n));
            std::vector<T> dgain(static_cast<size_t>(n), T(0)), dbias(static_cast<size_t>(n), T(0));
            for (int i = 0; i < m; ++i) {
                T mean = st2[size_t(i) * 2], rstd = st2[size_t(i) * 2 + 1];
                T sum_gy = T(0), sum_gyx = T(0);
                for (int j = 0; j < n; ++j) {
                    T xhat = (px2[i * n + j] - mean) * rstd;
                    T gy = g[size_t(i * n + j)] * pg2[j];
                    sum_gy += gy;
                    sum_gyx += gy * xhat;
                    dgain[size_t(j)] += g[size_t(i * n + j)] * xhat;
                    dbias[size_t(j)] += g[size_t(i * n + j)];
                }
                for (int j = 0; j < n; ++j) {
                    T xhat = (px2[i * n + j] - mean) * rstd;
                    T gy = g[size_t(i * n + j)] * pg2[j];
                    dx[size_t(i * n + j)] =
                        rstd * (gy - (sum_gy + xhat * sum_gyx) / T(n));
                }
            }
            accumulate(x, dx.data(), T(1));
            accumulate(gain, dgain.data(), T(1));
            accumulate(bias, dbias.data(), T(1));
        });
        return r;
    }

    // ---- shape surgery ---------------------------------------------------

    Ref embedding(Ref table, std::vector<int> ids) {
        LG_CHECK(shape(table).size() == 2, "embedding: table must be rank 2");
        const int v = rows(table), d = cols(table);
        for (int id : ids)
            LG_CHECK(id >= 0 && id < v, "embedding: id " << id << " outside table of " << v);
        const int m = int(ids.size());
        Ref r = alloc({m, d}, {table});
        const T* pt = value(table);
        T* out = data(r);
        for (int i = 0; i < m; ++i)
            std::memcpy(out + size_t(i) * size_t(d), pt + size_t(ids[size_t(i)]) * size_t(d),
                        sizeof(T) * size_t(d));
        set_backward(r, [this, r, table, ids = std::move(ids), d] {
            if (!wants_grad(table)) return;
            const std::vector<T>& g = grad_of(r);
            std::vector<T>& gt = grad_slot(table);
            for (size_t i = 0; i < ids.size(); ++i) {
                T* dst = gt.data() + size_t(ids[i]) * size_t(d);
                const T* src = g.data() + i * size_t(d);
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
        return r;
    }

    Ref row_concat(const std::vector<Ref>& parts) {
        LG_CHECK(!parts.empty(), "row_concat: no parts");
        const int n = cols(parts[0]);
        int m = 0;
        for (Ref p : parts) {
            LG_CHECK(shape(p).size() == 2 && cols(p) == n,
                     "row_concat: column mismatch " << shape_str(shape(p)));
            m += rows(p);
        }
        Ref r = alloc({m, n}, parts);
        T* out = data(r);
        int at = 0;
        for (Ref p : parts) {
            std::memcpy(out + size_t(at) * size_t(n), value(p),
                        sizeof(T) * size_t(rows(p)) * size_t(n));
            at += rows(p);
        }
        set_backward(r, [this, r, parts, n] {
            const std::vector<T>& g = grad_of(r);
            int at2 = 0;
            for (Ref p : parts) {
                accumulate(p, g.data() + size_t(at2) * size_t(n), T(1));
                at2 += rows(p);
            }
        });
        return r;
    }

    Ref col_concat(const std::vector<Ref>& parts) {
        LG_CHECK(!parts.empty(), "col_concat: no parts");
        const int m = rows(parts[0]);
        int n = 0;
        for (Ref p : parts) {
            LG_CHECK(shape(p).size() == 2 && rows(p) == m,
                     "col_concat: row mismatch " << shape_str(shape(p)));
            n += cols(p);
        }
        Ref r = alloc({m, n}, parts);
        T* out = data(r);
        int at = 0;
        for (Ref p : parts) {
            const int pc = cols(p);
            const T* src = value(p);
            for (int i = 0; i < m; ++i)
                std::memcpy(out + size_t(i) * size_t(n) + size_t(at),
                            src + size_t(i) * size_t(pc), sizeof(T) * size_t(pc));
            at += pc;
        }
        set_backward(r, [this, r, parts, m, n] {
            const std::vector<T>& g = grad_of(r);
            int at2 = 0;
            for (Ref p : parts) {
                const int pc = cols(p);
                std::vector<T> dp(static_cast<size_t>(m) * size_t(pc));
                for (int i = 0; i < m; ++i)
                    std::memcpy(dp.data() + size_t(i) * size_t(pc),
                                g.data() + size_t(i) * size_t(n) + size_t(at2),
                                sizeof(T) * size_t(pc));
                accumulate(p, dp.data(), T(1));
                at2 += pc;
            }
        });
        return r;
    }

    Ref col_slice(Ref a, int c0, int c1) {
        LG_CHECK(shape(a).size() == 2 && c0 >= 0 && c0 < c1 && c1 <= cols(a),
                 "col_slice: [" << c0 << "," << c1 << ") of " << shape_str(shape(a)));
        const int m = rows(a), n = cols(a), w = c1 - c0;
        Ref r = alloc({m, w}, {a});
        const T* pa = value(a);
        T* out = data(r);
        for (int i = 0; i < m; ++i)
            std::memcpy(out + size_t(i) * size_t(w), pa + size_t(i) * size_t(n) + size_t(c0),
                        sizeof(T) * size_t(w));
        set_backward(r, [this, r, a, c0, m, n, w] {
            if (!wants_grad(a)) return;
            const std::vector<T>& g = grad_of(r);
            std::vector<T>& ga = grad_slot(a);
            for (int i = 0; i < m; ++i) {
                T* dst = ga.data() + size_t(i) * size_t(n) + size_t(c0);
                const T* src = g.data() + size_t(i) * size_t(w);
                for (int j = 0; j < w; ++j) dst[j] += src[j];
            }
        });
        return r;
    }

    Ref row_gather(Ref a, std::vector<int> rows_idx) {
        LG_CHECK(shape(a).size() == 2, "row_gather: rank-2 input required");
        const int m = rows(a), n = cols(a);
        for (int i : rows_idx)
            LG_CHECK(i >= 0 && i < m, "row_gather: row " << i << " outside " << m);
        const int k = int(rows_idx.size());
        Ref r = alloc({k, n}, {a});
        const T* pa = value(a);
        T* out = data(r);
        for (int i = 0; i < k; ++i)
            std::memcpy(out + size_t(i) * size_t(n),
                        pa + size_t(rows_idx[size_t(i)]) * size_t(n), sizeof(T) * size_t(n));
        set_backward(r, [this, r, a, rows_idx = std::move(rows_idx), n] {
            if (!wants_grad(a)) return;
            const std::vector<T>& g = grad_of(r);
            std::vector<T>& ga = grad_slot(a);
            for (size_t i = 0; i < rows_idx.size(); ++i) {
                T* dst = ga.data() + size_t(rows_idx[i]) * size_t(n);
                const T* src = g.data() + i * size_t(n);
                for (int j = 0; j < n; ++j) dst[j] += src[j];
            }
        });
        return r;
    }

    // ---- softmax family ---------------------------------------------------

    // Row softmax with an optional boolean mask (1 = key allowed). Masked
    // entries produce exactly zero probability and exactly zero gradient.
    Ref masked_softmax(Ref logits, const AttentionMask* mask) {
        LG_CHECK(shape(logits).size() == 2, "masked_softmax: rank-2 input required");
        const int m = rows(logits), n = cols(logits);
        if (mask)
            LG_CHECK(mask->size == n && m == n,
                     "masked_softmax: mask size " << mask->size << " vs logits "
                                                  << shape_str(shape(logits)));
        Ref r = alloc(shape(logits), {logits});
        const T* pl = value(logits);
        T* out = data(r);
        for (int i = 0; i < m; ++i) {
            const uint8_t* mrow = mask ? &mask->allow[size_t(i) * size_t(n)] : nullptr;
            T mx = -std::numeric_limits<T>::infinity();
            int n_allowed = 0;
            for (int j = 0; j < n; ++j) {
                if (mrow && !mrow[j]) continue;
                ++n_allowed;
                mx = std::max(mx, pl[i * n + j]);
            }
            LG_CHECK(n_allowed > 0, "masked_softmax: query row " << i << " has no allowed keys");
            T acc = T(0);
            for (int j = 0; j < n; ++j) {
                if (mrow && !mrow[j]) {
                    out[i * n + j] = T(0);
                } else {
                    out[i * n + j] = std::exp(pl[i * n + j] - mx);
                    acc += out[i * n + j];
                }
            }
            T inv = T(1) / acc;
            for (int j = 0; j < n; ++j) out[i * n + j] *= inv;
        }
        set_backward(r, [this, r, logits, m, n] {
            const std::vector<T>& g = grad_of(r);
            const T* p = value(r);
            std::vector<T> dl(static_cast<size_t>(m) * size_t(n));
            for (int i = 0; i < m; ++i) {
                T dot = T(0);
                for (int j = 0; j < n; ++j) dot += g[size_t(i * n + j)] * p[i * n + j];
                for (int j = 0; j < n; ++j)
                    dl[size_t(i * n + j)] = p[i * n + j] * (g[size_t(i * n + j)] - dot);
            }
            accumulate(logits, dl.data(), T(1));
        });
        return r;
    }

    // Fused multi-head attention: q,k,v are [S,d]; per head h the block of
    // d/heads columns attends under `mask`; output is [S,d]. Keeps the
    // per-head probabilities for backward instead of 12 intermediate nodes.
    Ref attention(Ref q, Ref k, Ref v, const AttentionMask& mask, int heads) {
        check_same_shape("attention", q, k);
        check_same_shape("attention", q, v);
        const int s = rows(q), d = cols(q);
        LG_CHECK(d % heads == 0, "attention: d=" << d << " not divisible by heads=" << heads);
        LG_CHECK(mask.size == s, "attention: mask size " << mask.size << " vs sequence " << s);
        const int hd = d / heads;
        const T scale = T(1) / std::sqrt(T(hd));
        Ref r = alloc({s, d}, {q, k, v});
        auto& probs = stash(r);
        probs.assign(static_cast<size_t>(heads) * size_t(s) * size_t(s), T(0));
        const T* pq = value(q);
        const T* pk = value(k);
        const T* pv = value(v);
        T* out = data(r);
        std::vector<T> scores(static_cast<size_t>(s) * size_t(s));
        for (int h = 0; h < heads; ++h) {
            const int c0 = h * hd;
            // scores = Qh Kh^T * scale
            Eigen::Map<const Mat, 0, Eigen::OuterStride<>> qh(pq + c0, s, hd,
                                                              Eigen::OuterStride<>(d));
            Eigen::Map<const Mat, 0, Eigen::OuterStride<>> kh(pk + c0, s, hd,
                                                              Eigen::OuterStride<>(d));
            Eigen::Map<const Mat, 0, Eigen::OuterStride<>> vh(pv + c0, s, hd,
                                                              Eigen::OuterStride<>(d));
            MapM sc(scores.data(), s, s);
            sc.noalias() = qh * kh.transpose();
            T* pp = probs.data() + size_t(h) * size_t(s) * size_t(s);
            for (int i = 0; i < s; ++i) {
                const uint8_t* mrow = &mask.allow[size_t(i) * size_t(s)];
                T mx = -std::numeric_limits<T>::infinity();
                int n_allowed = 0;
                for (int j = 0; j < s; ++j) {
                    if (!mrow[j]) continue;
                    ++n_allowed;
                    mx = std::max(mx, scores[size_t(i) * size_t(s) + size_t(j)] * scale);
                }
                LG_CHECK(n_allowed > 0, "attention: query row " << i << " has no allowed keys");
                T acc = T(0);
                for (int j = 0; j < s; ++j) {
                    T& pij = pp[size_t(i) * size_t(s) + size_t(j)];
                    if (!mrow[j]) {
                        pij = T(0);
                    } else {
                        pij = std::exp(scores[size_t(i) * size_t(s) + size_t(j)] * scale - mx);
                        acc += pij;
                    }
                }
                T inv = T(1) / acc;
                for (int j = 0; j < s; ++j) pp[size_t(i) * size_t(s) + size_t(j)] *= inv;
            }
            // out_h = P Vh
            Eigen::Map<Mat, 0, Eigen::OuterStride<>> oh(out + c0, s, hd,
                                                        Eigen::OuterStride<>(d));
            CMapM pm(pp, s, s);
            oh.noalias() = pm * vh;
        }
        set_backward(r, [this, r, q, k, v, heads, s, d, hd, scale] {
            const std::vector<T>& g = grad_of(r);
            const std::vector<T>& probs2 = stash(r);
            const T* pq2 = value(q);
            const T* pk2 = value(k);
            const T* pv2 = value(v);
            std::vector<T> dq(static_cast<size_t>(s) * size_t(d), T(0));
            std::vector<T> dk(static_cast<size_t>(s) * size_t(d), T(0));
            std::vector<T> dv(static_cast<size_t>(s) * size_t(d), T(0));
            std::vector<T> dp(static_cast<size_t>(s) * size_t(s));
            std::vector<T> ds(static_cast<size_t>(s) * size_t(s));
            for (int h = 0; h < heads; ++h) {
                const int c0 = h * hd;
                using StrideMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
                StrideMap qh(pq2 + c0, s, hd, Eigen::OuterStride<>(d));
                StrideMap kh(pk2 + c0, s, hd, Eigen::OuterStride<>(d));
                StrideMap vh(pv2 + c0, s, hd, Eigen::OuterStride<>(d));
                StrideMap gh(g.data() + c0, s, hd, Eigen::OuterStride<>(d));
                CMapM pm(probs2.data() + size_t(h) * size_t(s) * size_t(s), s, s);
                // dV_h += P^T g_h
                Eigen::Map<Mat, 0, Eigen::OuterStride<>> dvh(dv.data() + c0, s, hd,
                                                             Eigen::OuterStride<>(d));
                dvh.noalias() = pm.transpose() * gh;
                // dP = g_h V_h^T
                MapM dpm(dp.data(), s, s);
                dpm.noalias() = gh * vh.transpose();
                // softmax backward per row
                for (int i = 0; i < s; ++i) {
                    T dot = T(0);
                    for (int j = 0; j < s; ++j)
                        dot += dp[size_t(i) * size_t(s) + size_t(j)] * pm(i, j);
                    for (int j = 0; j < s; ++j)
                        ds[size_t(i) * size_t(s) + size_t(j)] =
                            pm(i, j) * (dp[size_t(i) * size_t(s) + size_t(j)] - dot) * scale;
                }
                CMapM dsm(ds.data(), s, s);
                Eigen::Map<Mat, 0, Eigen::OuterStride<>> dqh(dq.data() + c0, s, hd,
                                                             Eigen::OuterStride<>(d));
                Eigen::Map<Mat, 0, Eigen::OuterStride<>> dkh(dk.data() + c0, s, hd,
                                                             Eigen::OuterStride<>(d));
                dqh.noalias() = dsm * kh;
                dkh.noalias() = dsm.transpose() * qh;
            }
            accumulate(q, dq.data(), T(1));
            accumulate(k, dk.data(), T(1));
            accumulate(v, dv.data(), T(1));
        });
        return r;
    }

    // Mean negative log-likelihood over the selected rows only. Rows with
    // select[i] == 0 contribute nothing, in value or gradient.
    Ref cross_entropy(Ref logits, std::vector<int> targets, std::vector<uint8_t> select) {
        LG_CHECK(shape(logits).size() == 2, "cross_entropy: rank-2 logits required");
        const int m = rows(logits), n = cols(logits);
        LG_CHECK(int(targets.size()) == m && int(select.size()) == m,
                 "cross_entropy: " << targets.size() << " targets / " << select.size()
                                   << " selectors for " << m << " rows");
        int n_sel = 0;
        for (int i = 0; i < m; ++i) {
            if (!select[size_t(i)]) continue;
            ++n_sel;
            LG_CHECK(targets[size_t(i)] >= 0 && targets[size_t(i)] < n,
                     "cross_entropy: target " << targets[size_t(i)] << " outside vocab " << n);
        }
        LG_CHECK(n_sel > 0, "cross_entropy: empty position selection");
        Ref r = alloc({}, {logits});
        const T* pl = value(logits);
        T loss = T(0);
        for (int i = 0; i < m; ++i) {
            if (!select[size_t(i)]) continue;
            loss += detail::row_logsumexp(pl + size_t(i) * size_t(n), n) -
                    pl[size_t(i) * size_t(n) + size_t(targets[size_t(i)])];
        }
        data(r)[0] = loss / T(n_sel);
        set_backward(r, [this, r, logits, targets = std::move(targets),
                         select = std::move(select), m, n, n_sel] {
            const T go = grad_of(r)[0] / T(n_sel);
            const T* pl2 = value(logits);
            std::vector<T> dl(static_cast<size_t>(m) * size_t(n), T(0));
            std::vector<T> sm(static_cast<size_t>(n));
            for (int i = 0; i < m; ++i) {
                if (!select[size_t(i)]) continue;
                detail::row_softmax(pl2 + size_t(i) * size_t(n), n, sm.data());
                for (int j = 0; j < n; ++j) dl[size_t(i * n + j)] = go * sm[size_t(j)];
                dl[size_t(i * n + targets[size_t(i)])] -= go;
            }
            accumulate(logits, dl.data(), T(1));
        });
        return r;
    }

    // Per-row log-probability of the picked class: out[i] = log softmax(row_i)[pick_i].
    Ref gather_logprob(Ref logits, std::vector<int> picks) {
        LG_CHECK(shape(logits).size() == 2, "gather_logprob: rank-2 logits required");
        const int m = rows(logits), n = cols(logits);
        LG_CHECK(int(picks.size()) == m,
                 "gather_logprob: " << picks.size() << " picks for " << m << " rows");
        for (int p : picks)
            LG_CHECK(p >= 0 && p < n, "gather_logprob: pick " << p << " outside vocab " << n);
        Ref r = alloc({m}, {logits});
        const T* pl = value(logits);
        T* out = data(r);
        for (int i = 0; i < m; ++i)
            out[i] = detail::row_log_prob(pl + size_t(i) * size_t(n), n, picks[size_t(i)]);
        set_backward(r, [this, r, logits, picks = std::move(picks), m, n] {
            const std::vector<T>& g = grad_of(r);
            const T* pl2 = value(logits);
            std::vector<T> dl(static_cast<size_t>(m) * size_t(n));
            std::vector<T> sm(static_cast<size_t>(n));
            for (int i = 0; i < m; ++i) {
                detail::row_softmax(pl2 + size_t(i) * size_t(n), n, sm.data());
                for (int j = 0; j < n; ++j) dl[size_t(i * n + j)] = -g[size_t(i)] * sm[size_t(j)];
                dl[size_t(i * n + picks[size_t(i)])] += g[size_t(i)];
            }
            accumulate(logits, dl.data(), T(1));
        });
        return r;
    }

    // ---- reductions -------------------------------------------------------

    Ref sum(Ref a) {
        Ref r = alloc({}, {a});
        const T* pa = value(a);
        T acc = T(0);
        const int64_t n = size(a);
        for (int64_t i = 0; i < n; ++i) acc += pa[i];
        data(r)[0] = acc;
        set_backward(r, [this, r, a] {
            const T go = grad_of(r)[0];
            const int64_t m = size(a);
            std::vector<T> da(static_cast<size_t>(m), go);
            accumulate(a, da.data(), T(1));
        });
        return r;
    }

    Ref mean(Ref a) { return scale(sum(a), T(1) / T(size(a))); }

    // Weighted sum with constant weights: sum_i w[i] * a[i].
    Ref dot_const(Ref a, std::vector<T> w) {
        LG_CHECK(int64_t(w.size()) == size(a),
                 "dot_const: " << w.size() << " weights for " << size(a) << " elements");
        Ref r = alloc({}, {a});
        const T* pa = value(a);
        T acc = T(0);
        for (size_t i = 0; i < w.size(); ++i) acc += w[i] * pa[i];
        data(r)[0] = acc;
        set_backward(r, [this, r, a, w = std::move(w)] {
            const T go = grad_of(r)[0];
            std::vector<T> da(w.size());
            for (size_t i = 0; i < w.size(); ++i) da[i] = go * w[i];
            accumulate(a, da.data(), T(1));
        });
        return r;
    }

    // Inverted dropout; identity when rate == 0.
    Ref dropout(Ref a, T rate, Rng& rng) {
        if (rate <= T(0)) return a;
        LG_CHECK(rate < T(1), "dropout: rate " << rate << " must be < 1");
        Ref r = alloc(shape(a), {a});
        auto& keep = stash(r);
        const int64_t n = size(a);
        keep.resize(static_cast<size_t>(n));
        const T inv_keep = T(1) / (T(1) - rate);
        const T* pa = value(a);
        T* out = data(r);
        for (int64_t i = 0; i < n; ++i) {
            keep[size_t(i)] = (rng.uniform() >= double(rate)) ? inv_keep : T(0);
            out[i] = pa[i] * keep[size_t(i)];
        }
        set_backward(r, [this, r, a] {
            const std::vector<T>& g = grad_of(r);
            const std::vector<T>& keep2 = stash(r);
            std::vector<T> da(keep2.size());
            for (size_t i = 0; i < keep2.size(); ++i) da[i] = g[i] * keep2[i];
            accumulate(a, da.data(), T(1));
        });
        return r;
    }

    // ---- backward ----------------------------------------------------------

    void backward(Ref loss) {
        LG_CHECK(size(loss) == 1, "backward: loss must be scalar, got "
                                      << shape_str(shape(loss)));
        grad_slot(loss).assign(1, T(1));
        for (int32_t i = loss; i >= 0; --i) {
            Node& n = nodes_[size_t(i)];
            if (n.grad.empty() || !n.backward) continue;
            n.backward();
        }
    }

private:
    struct Node {
        Shape shape;
        std::vector<T> value;
        const T* ext = nullptr;
        std::vector<T> grad;
        std::vector<T> stash;  // op-specific saved state for backward
        bool requires_grad = false;
        std::function<void()> backward;
    };

    std::vector<Node> nodes_;

    Ref push(Node&& n) {
        nodes_.push_back(std::move(n));
        return Ref(nodes_.size() - 1);
    }

    Ref alloc(const Shape& s, const std::vector<Ref>& parents) {
        Node n;
        n.shape = s;
        n.value.assign(static_cast<size_t>(numel(s)), T(0));
        for (Ref p : parents)
            if (nodes_[size_t(p)].requires_grad) {
                n.requires_grad = true;
                break;
            }
        return push(std::move(n));
    }

    T* data(Ref r) { return nodes_[size_t(r)].value.data(); }
    std::vector<T>& stash(Ref r) { return nodes_[size_t(r)].stash; }
    bool wants_grad(Ref r) const { return nodes_[size_t(r)].requires_grad; }

    void set_backward(Ref r, std::function<void()> fn) {
        if (nodes_[size_t(r)].requires_grad) nodes_[size_t(r)].backward = std::move(fn);
    }

    std::vector<T>& grad_slot(Ref r) {
        Node& n = nodes_[size_t(r)];
        if (n.grad.empty()) n.grad.assign(static_cast<size_t>(numel(n.shape)), T(0));
        return n.grad;
    }

    const std::vector<T>& grad_of(Ref r) { return nodes_[size_t(r)].grad; }

    void accumulate(Ref r, const T* g, T factor) {
        if (!wants_grad(r)) return;
        std::vector<T>& slot = grad_slot(r);
        const int64_t n = int64_t(slot.size());
        if (factor == T(1)) {
            for (int64_t i = 0; i < n; ++i) slot[size_t(i)] += g[i];
        } else {
            for (int64_t i = 0; i < n; ++i) slot[size_t(i)] += factor * g[i];
        }
    }

    void check_same_shape(const char* op, Ref a, Ref b) const {
        LG_CHECK(shape(a) == shape(b), op << ": shape mismatch " << shape_str(shape(a)) << " vs "
                                          << shape_str(shape(b)));
    }
};

}  // namespace layoutgen
