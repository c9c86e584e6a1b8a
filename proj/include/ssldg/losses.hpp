#pragma once

#include <cstddef>
#include <vector>

#include "ssldg/errors.hpp"
#include "ssldg/image.hpp"
#include "ssldg/tensor.hpp"

namespace ssldg {

// Scalar hyper-parameters of the composite objective:
//   total = mu * sup + (1-mu) * (gamma * uec + (1-gamma) * wsm)
//   uec   = alpha * une + (1-alpha) * unr
// T is the sharpening temperature.
struct LossWeights {
    double T = 0.1;
    double alpha = 0.5;
    double gamma = 0.5;
    double mu = 0.5;

    void validate() const {
        if (T <= 0.0) throw ContractError("LossWeights: T must be positive");
        if (alpha < 0.0 || alpha > 1.0 || gamma < 0.0 || gamma > 1.0 || mu < 0.0 || mu > 1.0)
            throw ContractError("LossWeights: alpha/gamma/mu must lie in [0,1]");
    }
};

inline constexpr double kProbEps = 1e-7;  // clamp before any logarithm

// Temperature sharpening of a per-pixel probability:
//   p' = p^(1/T) / (p^(1/T) + (1-p)^(1/T))
// computed in log space as sigmoid(logit(p)/T) for stability at extreme p.
// T = 1 is the identity; T < 1 pushes values away from 0.5.
inline Tensor sharpen(const Tensor& p, double T) {
    if (T <= 0.0) throw ContractError("sharpen: temperature must be positive");
    const Tensor ph = clamp(p, kProbEps, 1.0 - kProbEps);
    const Tensor logit = sub(log(ph), log(add_scalar(neg(ph), 1.0)));
    return sigmoid(mul_scalar(logit, 1.0 / T));
}

// Arithmetic mean of the sharpened maps of branches 2..k.
inline Tensor avg_probability(const std::vector<Tensor>& sharpened) {
    if (sharpened.size() < 2)
        throw ContractError("avg_probability: need at least two consistency branches");
    Tensor acc = sharpened[0];
    for (std::size_t i = 1; i < sharpened.size(); ++i) acc = add(acc, sharpened[i]);
    return mul_scalar(acc, 1.0 / static_cast<double>(sharpened.size()));
}

// Per-pixel uncertainty U_m = p'_m * log(p'_m / p_avg) per branch, plus the
// pixel-mean scalar per branch. Probabilities are epsilon-clamped before the
// logarithms. Individual branch terms may be negative; their sum over
// branches is nonnegative whenever p_avg is the arithmetic mean.
struct UncertaintyMaps {
    std::vector<Tensor> per_pixel;    // one map per consistency branch
    std::vector<Tensor> branch_mean;  // scalar per branch
};

inline UncertaintyMaps pixel_uncertainty(const std::vector<Tensor>& sharpened,
                                         const Tensor& p_avg) {
    if (sharpened.empty()) throw ContractError("pixel_uncertainty: no branches");
    UncertaintyMaps out;
    const Tensor log_avg = log(clamp(p_avg, kProbEps, 1.0));
    for (const Tensor& pm : sharpened) {
        const Tensor pmh = clamp(pm, kProbEps, 1.0);
        const Tensor u = mul(pmh, sub(log(pmh), log_avg));
        out.per_pixel.push_back(u);
        out.branch_mean.push_back(mean(u));
    }
    return out;
}

// Mean of the per-branch scalar uncertainties (entropy-style consistency).
inline Tensor loss_une(const UncertaintyMaps& u) {
    if (u.branch_mean.empty()) throw ContractError("loss_une: empty uncertainty set");
    Tensor acc = u.branch_mean[0];
    for (std::size_t i = 1; i < u.branch_mean.size(); ++i) acc = add(acc, u.branch_mean[i]);
    return mul_scalar(acc, 1.0 / static_cast<double>(u.branch_mean.size()));
}

// Rectifying weights w = exp(-U), detached: they modulate the discrepancy
// below but are not themselves optimized.
inline std::vector<Tensor> rectifying_weights(const UncertaintyMaps& u) {
    std::vector<Tensor> w;
    w.reserve(u.per_pixel.size());
    for (const Tensor& um : u.per_pixel) w.push_back(exp(neg(detach(um))));
    return w;
}

// Rectified discrepancy with explicit per-branch weight maps: per branch,
// the pixel discrepancy |p'_m - p_avg| weighted by w and normalized by
// sum(w).
inline Tensor loss_unr_weighted(const std::vector<Tensor>& sharpened, const Tensor& p_avg,
                                const std::vector<Tensor>& weights, bool squared = false) {
    if (sharpened.size() != weights.size()) throw ContractError("loss_unr: branch count mismatch");
    if (sharpened.empty()) throw ContractError("loss_unr: no branches");
    Tensor acc = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < sharpened.size(); ++i) {
        Tensor d = sub(sharpened[i], p_avg);
        d = squared ? mul(d, d) : abs(d);
        acc = add(acc, div(sum(mul(d, weights[i])), sum(weights[i])));
    }
    return mul_scalar(acc, 1.0 / static_cast<double>(sharpened.size()));
}

inline Tensor loss_unr(const std::vector<Tensor>& sharpened, const Tensor& p_avg,
                       const UncertaintyMaps& u, bool squared = false) {
    return loss_unr_weighted(sharpened, p_avg, rectifying_weights(u), squared);
}

inline Tensor loss_uec(const Tensor& une, const Tensor& unr, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ContractError("loss_uec: alpha must lie in [0,1]");
    return add(mul_scalar(une, alpha), mul_scalar(unr, 1.0 - alpha));
}

// Mutual-learning MSE between the reference branch j and the other
// consistency branches, on raw (unsharpened) probabilities:
//   (1 / (N*(k-2))) * sum_{m=2..k, m!=j} sum_i (p_j^i - p_m^i)^2
// `probs` holds the maps of branches 2..k in order; j is the branch number.
inline Tensor loss_wsm(const std::vector<Tensor>& probs, int j) {
    const int k = static_cast<int>(probs.size()) + 1;
    if (k <= 2) throw ContractError("loss_wsm: needs k >= 3 (the k-2 denominator vanishes)");
    if (j < 2 || j > k) throw ContractError("loss_wsm: reference branch out of range");
    const Tensor& pj = probs[static_cast<std::size_t>(j - 2)];
    const double n = static_cast<double>(pj.size());
    Tensor acc = Tensor::scalar(0.0);
    for (int m = 2; m <= k; ++m) {
        if (m == j) continue;
        const Tensor d = sub(pj, probs[static_cast<std::size_t>(m - 2)]);
        acc = add(acc, sum(mul(d, d)));
    }
    return mul_scalar(acc, 1.0 / (n * static_cast<double>(k - 2)));
}

// Soft multi-class Dice loss: 1 - mean_c (2*sum(p_c*y_c)+eps)/(sum p_c + sum y_c + eps).
inline Tensor dice_loss(const Tensor& prob, const Mask& mask, double eps = 1e-5) {
    if (prob.shape().size() != 4 || prob.dim(0) != 1)
        throw DimensionError("dice_loss: prob must be [1,C,H,W]");
    if (prob.dim(2) != static_cast<std::size_t>(mask.h) ||
        prob.dim(3) != static_cast<std::size_t>(mask.w))
        throw DimensionError("dice_loss: prob and mask shapes differ");
    const int C = static_cast<int>(prob.dim(1));
    const Tensor onehot = one_hot(mask, C);
    Tensor acc = Tensor::scalar(0.0);
    for (int c = 0; c < C; ++c) {
        const Tensor pc = slice_channel(prob, static_cast<std::size_t>(c));
        const Tensor yc = slice_channel(onehot, static_cast<std::size_t>(c));
        const Tensor num = add_scalar(mul_scalar(sum(mul(pc, yc)), 2.0), eps);
        const Tensor den = add_scalar(add(sum(pc), sum(yc)), eps);
        acc = add(acc, div(num, den));
    }
    return add_scalar(neg(mul_scalar(acc, 1.0 / C)), 1.0);
}

inline Tensor loss_total(const Tensor& sup, const Tensor& uec, const Tensor& wsm,
                         const LossWeights& w) {
    w.validate();
    const Tensor unsup = add(mul_scalar(uec, w.gamma), mul_scalar(wsm, 1.0 - w.gamma));
    return add(mul_scalar(sup, w.mu), mul_scalar(unsup, 1.0 - w.mu));
}

// ---------------------------------------------------------------------------
// Multi-class drivers over full branch outputs
// ---------------------------------------------------------------------------
// The per-pixel formulas above are written for a scalar probability. For C
// classes they are evaluated on each foreground channel and averaged over
// channels; binary tasks reduce exactly to the scalar formulas.

struct ConsistencyTerms {
    Tensor une;
    Tensor unr;
};

// `probs` holds all k branch outputs [1,C,H,W]; branches 2..k participate.
inline ConsistencyTerms consistency_losses(const std::vector<Tensor>& probs, double T,
                                           bool unr_squared = false) {
    if (probs.size() < 3) throw ContractError("consistency_losses: needs k >= 3 branches");
    const int C = static_cast<int>(probs[0].dim(1));
    Tensor une_acc = Tensor::scalar(0.0);
    Tensor unr_acc = Tensor::scalar(0.0);
    const int fg = C - 1;
    for (int c = 1; c < C; ++c) {
        std::vector<Tensor> sharp;
        for (std::size_t m = 1; m < probs.size(); ++m)
            sharp.push_back(sharpen(slice_channel(probs[m], static_cast<std::size_t>(c)), T));
        const Tensor pavg = avg_probability(sharp);
        const UncertaintyMaps u = pixel_uncertainty(sharp, pavg);
        une_acc = add(une_acc, loss_une(u));
        unr_acc = add(unr_acc, loss_unr(sharp, pavg, u, unr_squared));
    }
    return {mul_scalar(une_acc, 1.0 / fg), mul_scalar(unr_acc, 1.0 / fg)};
}

// Deep-mutual-learning loss over foreground channels of the raw outputs.
inline Tensor mutual_learning_loss(const std::vector<Tensor>& probs, int j) {
    if (probs.size() < 3) throw ContractError("mutual_learning_loss: needs k >= 3 branches");
    const int C = static_cast<int>(probs[0].dim(1));
    const int fg = C - 1;
    Tensor acc = Tensor::scalar(0.0);
    for (int c = 1; c < C; ++c) {
        std::vector<Tensor> maps;
        for (std::size_t m = 1; m < probs.size(); ++m)
            maps.push_back(slice_channel(probs[m], static_cast<std::size_t>(c)));
        acc = add(acc, loss_wsm(maps, j));
    }
    return mul_scalar(acc, 1.0 / fg);
}

// Supervised term: Dice against the shared mask, averaged over all branches.
inline Tensor supervised_loss(const std::vector<Tensor>& probs, const Mask& mask) {
    if (probs.empty()) throw ContractError("supervised_loss: no branches");
    Tensor acc = Tensor::scalar(0.0);
    for (const Tensor& p : probs) acc = add(acc, dice_loss(p, mask));
    return mul_scalar(acc, 1.0 / static_cast<double>(probs.size()));
}

}  // namespace ssldg
