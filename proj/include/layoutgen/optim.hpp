#pragma once

// Named parameter store and AdamW.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "layoutgen/common.hpp"
#include "layoutgen/tensor.hpp"

namespace layoutgen {

template <class T>
struct Param {
    std::string name;
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;

    int64_t size() const { return int64_t(value.size()); }
};

// Ordered collection; iteration order is creation order everywhere, so
// optimizer updates and serialization are reproducible.
template <class T>
class ParamStore {
public:
    Param<T>& add(const std::string& name, const Shape& shape) {
        LG_CHECK(index_.find(name) == index_.end(), "duplicate parameter " << name);
        index_[name] = params_.size();
        params_.push_back(Param<T>{name, shape, std::vector<T>(static_cast<size_t>(numel(shape)), T(0)),
                                   std::vector<T>(static_cast<size_t>(numel(shape)), T(0))});
        return params_.back();
    }

    Param<T>& at(const std::string& name) {
        auto it = index_.find(name);
        LG_CHECK(it != index_.end(), "unknown parameter " << name);
        return params_[it->second];
    }
    const Param<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        LG_CHECK(it != index_.end(), "unknown parameter " << name);
        return params_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Param<T>>& all() { return params_; }
    const std::vector<Param<T>>& all() const { return params_; }
    size_t count() const { return params_.size(); }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
    }

    // Flat gradient buffer aligned with store order; used to reduce
    // per-sample gradients in a fixed order.
    std::vector<T> make_grad_buffer() const {
        return std::vector<T>(static_cast<size_t>(total_size()), T(0));
    }

    void add_grads_from(const std::vector<T>& buf, T scale_factor = T(1)) {
        LG_CHECK(int64_t(buf.size()) == total_size(), "gradient buffer size mismatch");
        size_t at = 0;
        for (auto& p : params_) {
            for (auto& g : p.grad) {
                g += scale_factor * buf[at];
                ++at;
            }
        }
    }

private:
    std::vector<Param<T>> params_;
    std::unordered_map<std::string, size_t> index_;
};

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

template <class T>
class AdamW {
public:
    AdamW(ParamStore<T>& params, AdamWConfig cfg) : params_(&params), cfg_(cfg) {
        m_.assign(static_cast<size_t>(params.total_size()), T(0));
        v_.assign(static_cast<size_t>(params.total_size()), T(0));
    }

    int64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

    // One decoupled-weight-decay Adam update from accumulated gradients.
    void step() {
        ++t_;
        const T lr = T(cfg_.lr);
        const T b1 = T(cfg_.beta1);
        const T b2 = T(cfg_.beta2);
        const T eps = T(cfg_.eps);
        const T wd = T(cfg_.weight_decay);
        const T bc1 = T(1) - std::pow(b1, T(t_));
        const T bc2 = T(1) - std::pow(b2, T(t_));
        size_t at = 0;
        for (auto& p : params_->all()) {
            for (int64_t i = 0; i < p.size(); ++i, ++at) {
                const T g = p.grad[size_t(i)];
                m_[at] = b1 * m_[at] + (T(1) - b1) * g;
                v_[at] = b2 * v_[at] + (T(1) - b2) * g * g;
                const T mhat = m_[at] / bc1;
                const T vhat = v_[at] / bc2;
                p.value[size_t(i)] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * p.value[size_t(i)]);
            }
        }
    }

private:
    ParamStore<T>* params_;
    AdamWConfig cfg_;
    std::vector<T> m_, v_;
    int64_t t_ = 0;
};

}  // namespace layoutgen
