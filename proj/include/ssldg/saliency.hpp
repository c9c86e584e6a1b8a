#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "ssldg/augment.hpp"
#include "ssldg/errors.hpp"
#include "ssldg/image.hpp"
#include "ssldg/losses.hpp"
#include "ssldg/model.hpp"
#include "ssldg/rng.hpp"

namespace ssldg {

struct SaliencyConfig {
    int grid_g = 3;  // coarse grid side; interpolation back up is quadratic B-spline
};

// ---------------------------------------------------------------------------
// Input gradient of the segmentation loss (saliency source)
// ---------------------------------------------------------------------------

// d(dice loss)/d(pixel) through branch 1 with frozen parameters: the pass
// cannot contribute parameter gradients.
inline Image input_gradient(const SegModel& model, const Image& img, const Mask& mask) {
    check_pair_shape(img, mask, "input_gradient");
    Tensor x = to_tensor(img, /*requires_grad=*/true);
    const Tensor probs = model.forward_branch(x, 1, /*frozen=*/true);
    backward(dice_loss(probs, mask));
    Image g(img.h, img.w);
    auto gv = x.grad();
    g.pix.assign(gv.begin(), gv.end());
    return g;
}

// ---------------------------------------------------------------------------
// Quadratic B-spline resampling (separable, clamped boundary knots)
// ---------------------------------------------------------------------------

namespace detail {

// Solves (c[i-1] + 6 c[i] + c[i+1]) / 8 = d[i] with c[-1]=c[0], c[n]=c[n-1],
// so the spline interpolates the samples at the knots.
inline std::vector<double> bspline2_coeffs(const std::vector<double>& d) {
    const std::size_t n = d.size();
    if (n == 1) return d;
    std::vector<double> diag(n, 6.0 / 8.0), rhs = d, c(n);
    diag.front() = diag.back() = 7.0 / 8.0;
    constexpr double off = 1.0 / 8.0;
    // Thomas algorithm (diagonally dominant).
    for (std::size_t i = 1; i < n; ++i) {
        const double w = off / diag[i - 1];
        diag[i] -= w * off;
        rhs[i] -= w * rhs[i - 1];
    }
    c[n - 1] = rhs[n - 1] / diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) c[i] = (rhs[i] - off * c[i + 1]) / diag[i];
    return c;
}

inline double bspline2_basis(double t) {
    t = std::fabs(t);
    if (t <= 0.5) return 0.75 - t * t;
    if (t <= 1.5) {
        const double u = 1.5 - t;
        return 0.5 * u * u;
    }
    return 0.0;
}

// Evaluates the spline at knot coordinate u (knots at 0..n-1, coefficients
// extended by clamping beyond the ends). The three contributing knots are
// centred on round(u).
inline double bspline2_eval(const std::vector<double>& c, double u) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(c.size());
    if (n == 1) return c[0];
    u = std::min(static_cast<double>(n - 1), std::max(0.0, u));
    const std::ptrdiff_t j0 = static_cast<std::ptrdiff_t>(std::floor(u + 0.5)) - 1;
    double acc = 0.0;
    for (std::ptrdiff_t j = j0; j <= j0 + 2; ++j) {
        const std::ptrdiff_t jc = std::min(n - 1, std::max<std::ptrdiff_t>(0, j));
        acc += c[static_cast<std::size_t>(jc)] * bspline2_basis(u - static_cast<double>(j));
    }
    return acc;
}

// Resamples `src` (length g, samples at cell centers of a length-`len` axis)
// to `len` values at pixel positions.
inline std::vector<double> bspline2_resample_axis(const std::vector<double>& src, int len) {
    const int g = static_cast<int>(src.size());
    std::vector<double> out(static_cast<std::size_t>(len));
    if (g == 1) {
        std::fill(out.begin(), out.end(), src[0]);
        return out;
    }
    const std::vector<double> c = bspline2_coeffs(src);
    const double step = static_cast<double>(g) / len;
    for (int x = 0; x < len; ++x) {
        // pixel center x maps to knot coordinate; g == len gives u == x
        const double u = (x + 0.5) * step - 0.5;
        out[static_cast<std::size_t>(x)] = bspline2_eval(c, u);
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Saliency smoothing: |grad| -> l2 normalize -> g x g average pool ->
// quadratic B-spline back to H x W -> min-max rescale to [0,1]
// ---------------------------------------------------------------------------

inline Image smooth_saliency(const Image& grad, const SaliencyConfig& cfg) {
    const int h = grad.h, w = grad.w;
    const int g = cfg.grid_g;
    if (g < 1 || g > std::min(h, w))
        throw ContractError("smooth_saliency: grid must satisfy 1 <= g <= min(H,W)");

    double norm_sq = 0.0;
    for (double v : grad.pix) {
        if (!std::isfinite(v)) throw ContractError("smooth_saliency: gradient must be finite");
        norm_sq += v * v;
    }
    Image out(h, w, 0.0);
    if (norm_sq == 0.0) return out;  // all-zero gradient -> all-zero saliency

    const double inv_norm = 1.0 / std::sqrt(norm_sq);
    std::vector<double> a(grad.pix.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::fabs(grad.pix[i]) * inv_norm;

    // Average-pool onto the g x g grid (rectangular cells cover the image).
    std::vector<double> coarse(static_cast<std::size_t>(g) * g, 0.0);
    for (int gy = 0; gy < g; ++gy) {
        const int y0 = gy * h / g, y1 = (gy + 1) * h / g;
        for (int gx = 0; gx < g; ++gx) {
            const int x0 = gx * w / g, x1 = (gx + 1) * w / g;
            double acc = 0.0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) acc += a[static_cast<std::size_t>(y) * w + x];
            coarse[static_cast<std::size_t>(gy) * g + gx] =
                acc / (static_cast<double>(y1 - y0) * (x1 - x0));
        }
    }

    // Separable spline resampling: rows to width w, then columns to height h.
    std::vector<double> rows(static_cast<std::size_t>(g) * w);
    for (int gy = 0; gy < g; ++gy) {
        std::vector<double> src(coarse.begin() + static_cast<std::size_t>(gy) * g,
                                coarse.begin() + static_cast<std::size_t>(gy + 1) * g);
        const auto r = detail::bspline2_resample_axis(src, w);
        std::copy(r.begin(), r.end(), rows.begin() + static_cast<std::size_t>(gy) * w);
    }
    std::vector<double> col_src(static_cast<std::size_t>(g));
    for (int x = 0; x < w; ++x) {
        for (int gy = 0; gy < g; ++gy) col_src[static_cast<std::size_t>(gy)] = rows[static_cast<std::size_t>(gy) * w + x];
        const auto col = detail::bspline2_resample_axis(col_src, h);
        for (int y = 0; y < h; ++y) out.pix[static_cast<std::size_t>(y) * w + x] = col[static_cast<std::size_t>(y)];
    }

    // Min-max rescale makes the downstream blend a convex combination.
    double lo = out.pix[0], hi = out.pix[0];
    for (double v : out.pix) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo <= 1e-12 * std::max(1.0, std::fabs(hi))) {
        // Essentially constant saliency: every pixel equally salient.
        std::fill(out.pix.begin(), out.pix.end(), 0.5);
        return out;
    }
    const double inv = 1.0 / (hi - lo);
    for (double& v : out.pix) v = (v - lo) * inv;
    return out;
}

// Pixelwise convex blend S*ga + (1-S)*fa.
inline Image blend_sba(const Image& ga_img, const Image& fa_img, const Image& s) {
    if (ga_img.h != fa_img.h || ga_img.w != fa_img.w || ga_img.h != s.h || ga_img.w != s.w)
        throw DimensionError("blend_sba: shapes differ");
    Image out(ga_img.h, ga_img.w);
    for (std::size_t i = 0; i < out.pix.size(); ++i) {
        const double si = s.pix[i];
        if (si < 0.0 || si > 1.0) throw ContractError("blend_sba: saliency must lie in [0,1]");
        out.pix[i] = si * ga_img.pix[i] + (1.0 - si) * fa_img.pix[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full domain-diffusion pipeline
// ---------------------------------------------------------------------------

struct DomainDiffusionOptions {
    GlobalAugParams ga;
    FocalAugParams fa;
    SaliencyConfig saliency;
    WeakAugConfig weak;
    bool sba = true;  // false: the blended view degrades to the focal image
    // Unlabeled samples: when true, focal regions and the saliency loss use
    // argmax pseudo-masks from frozen branch 1; when false the focal pass
    // sees a single background class and the blend is skipped.
    bool pseudo_mask_unlabeled = true;
    // When set, reuse this saliency map instead of recomputing the gradient
    // pass (the cached-SBA training mode).
    const Image* cached_saliency = nullptr;
};

struct DomainDiffusionResult {
    Image weak_original;  // H(x), the branch-1 view
    Image ga;             // weakly augmented global view
    Image fa;             // weakly augmented focal view
    Image sba;            // saliency-balanced blend (branch-3 view)
    Image saliency;       // S in [0,1] (zeros when the blend was skipped)
    Mask mask;            // the mask under the same weak-augmentation instance
};

// Computes the global and focal views, applies one shared weak-augmentation
// instance to the whole triple, then balances the two views with the
// input-gradient saliency of the global view. `mask` may be null for
// unlabeled samples. Deterministic given (model, options, rng).
inline DomainDiffusionResult domain_diffusion(const Image& img, const Mask* mask,
                                              const SegModel& model,
                                              const DomainDiffusionOptions& opt, Rng rng) {
    DomainDiffusionResult r;
    const Image o_ga = global_augment(img, opt.ga, rng.fork(stream::kGlobalAug));

    Mask fa_mask;
    if (mask != nullptr) {
        fa_mask = *mask;
    } else if (opt.pseudo_mask_unlabeled) {
        fa_mask = argmax_channels(model.forward_branch(to_tensor(img), 1, /*frozen=*/true));
    } else {
        fa_mask = Mask(img.h, img.w, 0);
    }
    const Image o_fa =
        focal_augment(img, fa_mask, opt.fa, rng.fork(stream::kFocalAug), model.classes);

    const WeakAugDraw draw = WeakAugDraw::sample(opt.weak, img.h, img.w, rng.fork(stream::kWeakAug));
    r.weak_original = draw.apply_image(img);
    r.ga = draw.apply_image(o_ga);
    r.fa = draw.apply_image(o_fa);
    r.mask = draw.apply_mask(fa_mask);

    const bool blend = opt.sba && (mask != nullptr || opt.pseudo_mask_unlabeled);
    if (blend) {
        if (opt.cached_saliency != nullptr) {
            r.saliency = *opt.cached_saliency;
        } else {
            // Labeled samples score saliency against the true (warped) mask;
            // unlabeled ones against the argmax prediction on the global view.
            const Mask grad_mask =
                mask != nullptr
                    ? r.mask
                    : argmax_channels(model.forward_branch(to_tensor(r.ga), 1, /*frozen=*/true));
            const Image g = input_gradient(model, r.ga, grad_mask);
            r.saliency = smooth_saliency(g, opt.saliency);
        }
        r.sba = blend_sba(r.ga, r.fa, r.saliency);
    } else {
        r.saliency = Image(img.h, img.w, 0.0);
        r.sba = r.fa;
    }
    return r;
}

}  // namespace ssldg
