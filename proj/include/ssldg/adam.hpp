#pragma once

#include <cmath>
#include <vector>

#include "ssldg/errors.hpp"
#include "ssldg/tensor.hpp"

namespace ssldg {

struct AdamConfig {
    double lr = 5e-3;
    double weight_decay = 3e-5;  // classic L2, added to the gradient
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long t = 0;

    void init(const std::vector<Tensor>& params) {
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p.size(), 0.0);
            v.emplace_back(p.size(), 0.0);
        }
        t = 0;
    }

    bool matches(const std::vector<Tensor>& params) const {
        if (m.size() != params.size() || v.size() != params.size()) return false;
        for (std::size_t i = 0; i < params.size(); ++i)
            if (m[i].size() != params[i].size() || v[i].size() != params[i].size()) return false;
        return true;
    }
};

// One Adam update over `params`, reading each tensor's grad buffer (an empty
// buffer counts as zero gradient). Weight decay enters the gradient as an
// additive L2 term.
inline void adam_step(std::vector<Tensor>& params, AdamState& st, const AdamConfig& cfg) {
    if (!st.matches(params)) throw ContractError("adam_step: state shapes do not match params");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto w = params[pi].values_mut();
        auto g = params[pi].grad();
        auto& m = st.m[pi];
        auto& v = st.v[pi];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = (i < g.size() ? g[i] : 0.0) + cfg.weight_decay * w[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace ssldg
