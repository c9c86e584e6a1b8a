#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "ssldg/bezier.hpp"
#include "ssldg/errors.hpp"
#include "ssldg/image.hpp"
#include "ssldg/rng.hpp"

namespace ssldg {

// ---------------------------------------------------------------------------
// Grayscale inversion (maximum pixel value 1 after normalization)
// ---------------------------------------------------------------------------

inline Image grayscale_invert(const Image& img) {
    Image out(img.h, img.w);
    for (std::size_t i = 0; i < img.size(); ++i) out.pix[i] = 1.0 - img.pix[i];
    return out;
}

// ---------------------------------------------------------------------------
// Global augmentation: whole-image intensity remap, then random scale/shift
// ---------------------------------------------------------------------------

struct GlobalAugParams {
    double sigma1 = 0.3;       // stdev of the multiplicative factor (mean 1)
    double sigma2 = 0.1;       // stdev of the additive shift (mean 0)
    double invert_prob = 0.1;  // probability the base transform is inversion
    bool bezier = true;        // false: identity base unless inversion fires
};

// Deterministic core: out = scale * base(x) + shift, clamped to [0,1], where
// base is either grayscale inversion or the given monotone intensity map
// (the two are mutually exclusive).
inline Image global_augment_with(const Image& img, const IntensityMap& map, bool invert,
                                 double scale, double shift) {
    Image base = invert ? grayscale_invert(img) : apply_intensity_map(img, map);
    for (double& v : base.pix) v = std::min(1.0, std::max(0.0, scale * v + shift));
    return base;
}

inline Image global_augment(const Image& img, const GlobalAugParams& params, Rng rng) {
    Rng choice = rng.fork(1);
    Rng curve = rng.fork(2);
    Rng factors = rng.fork(3);
    const bool invert = choice.bernoulli(params.invert_prob);
    IntensityMap map = (invert || !params.bezier) ? IntensityMap::identity()
                                                  : build_intensity_map(curve, true);
    const double scale = factors.trunc_normal(1.0, params.sigma1);
    const double shift = factors.trunc_normal(0.0, params.sigma2);
    return global_augment_with(img, map, invert, scale, shift);
}

// ---------------------------------------------------------------------------
// Focal-region augmentation: independent per-class intensity remaps
// ---------------------------------------------------------------------------

struct FocalAugParams {
    double sigma1 = 0.3;
    double sigma2 = 0.1;
    double psi_background = 1.0;  // gain for class 0 (the body region)
    double psi_class = 0.5;       // gain for every foreground class
    bool bezier = true;           // false: identity curves (scale/shift only)
};

struct ClassTransform {
    double scale = 1.0;
    double shift = 0.0;
    IntensityMap map = IntensityMap::identity();
};

// Deterministic core. Pixels of class n become
// scale_n * psi_n * map_n(x) + shift_n; air pixels (intensity exactly 0 with
// label 0, i.e. outside the body) pass through unchanged.
inline Image focal_augment_with(const Image& img, const Mask& mask, const FocalAugParams& params,
                                const std::vector<ClassTransform>& per_class) {
    check_pair_shape(img, mask, "focal_augment");
    Image out(img.h, img.w);
    const int classes = static_cast<int>(per_class.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = img.pix[i];
        const int n = mask.lab[i];
        if (n < 0 || n >= classes) throw ContractError("focal_augment: label outside class range");
        if (n == 0 && v == 0.0) {  // true air background
            out.pix[i] = 0.0;
            continue;
        }
        const double psi = (n == 0) ? params.psi_background : params.psi_class;
        const ClassTransform& t = per_class[static_cast<std::size_t>(n)];
        out.pix[i] = std::min(1.0, std::max(0.0, t.scale * psi * t.map(v) + t.shift));
    }
    return out;
}

// Per-class parameters and curves come from independent substreams keyed by
// the class id, so changing one class's stream never alters another class's
// pixels.
inline Image focal_augment(const Image& img, const Mask& mask, const FocalAugParams& params,
                           Rng rng, int classes) {
    if (classes <= 0) throw ContractError("focal_augment: class count must be positive");
    std::vector<ClassTransform> per_class(static_cast<std::size_t>(classes));
    for (int n = 0; n < classes; ++n) {
        Rng cls = rng.fork(static_cast<std::uint64_t>(n));
        Rng curve = cls.fork(1);
        Rng factors = cls.fork(2);
        auto& t = per_class[static_cast<std::size_t>(n)];
        t.map = params.bezier ? build_intensity_map(curve, false)  // unconstrained curve
                              : IntensityMap::identity();
        t.scale = factors.trunc_normal(1.0, params.sigma1);
        t.shift = factors.trunc_normal(0.0, params.sigma2);
    }
    return focal_augment_with(img, mask, params, per_class);
}

inline Image focal_augment(const Image& img, const Mask& mask, const FocalAugParams& params,
                           Rng rng) {
    int top = 0;
    for (int v : mask.lab) top = std::max(top, v);
    return focal_augment(img, mask, params, rng, top + 1);
}

// ---------------------------------------------------------------------------
// Weak augmentation: mild geometry shared by image and mask, plus photometric
// jitter on the image only
// ---------------------------------------------------------------------------

struct WeakAugConfig {
    bool affine = true;
    double max_rotate_deg = 15.0;
    double scale_lo = 0.9, scale_hi = 1.1;
    double max_translate = 0.05;  // fraction of the image side

    bool elastic = true;
    int elastic_grid = 4;
    double elastic_sigma = 2.0;  // displacement stdev in pixels

    bool brightness = true;
    double brightness_range = 0.1;

    bool contrast = true;
    double contrast_lo = 0.9, contrast_hi = 1.1;

    bool gamma = true;
    double gamma_lo = 0.8, gamma_hi = 1.2;

    bool noise = true;
    double noise_sigma = 0.02;

    static WeakAugConfig disabled() {
        WeakAugConfig c;
        c.affine = c.elastic = c.brightness = c.contrast = c.gamma = c.noise = false;
        return c;
    }
};

// One sampled instance of the weak augmentation. A caller that augments a
// triple (two images plus the mask) applies the same instance to all three,
// so the geometry is pixel-identical across them.
struct WeakAugDraw {
    int h = 0, w = 0;
    bool geometric = false;
    double cos_t = 1.0, sin_t = 0.0, inv_scale = 1.0;
    double tx = 0.0, ty = 0.0;
    std::vector<double> disp_y, disp_x;  // dense elastic displacement, pixels

    bool photometric = false;
    double brightness = 0.0;
    double contrast = 1.0;
    double gamma = 1.0;
    double noise_sigma = 0.0;
    std::vector<double> noise;

    static WeakAugDraw sample(const WeakAugConfig& cfg, int h, int w, Rng rng) {
        WeakAugDraw d;
        d.h = h;
        d.w = w;
        Rng geo = rng.fork(1);
        Rng photo = rng.fork(2);
        Rng noise_rng = rng.fork(3);

        if (cfg.affine) {
            constexpr double kPi = 3.14159265358979323846;
            const double theta = geo.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg) * kPi / 180.0;
            const double s = geo.uniform(cfg.scale_lo, cfg.scale_hi);
            d.cos_t = std::cos(theta);
            d.sin_t = std::sin(theta);
            d.inv_scale = 1.0 / s;
            d.tx = geo.uniform(-cfg.max_translate, cfg.max_translate) * w;
            d.ty = geo.uniform(-cfg.max_translate, cfg.max_translate) * h;
            d.geometric = true;
        }
        if (cfg.elastic && cfg.elastic_grid >= 2) {
            const int g = cfg.elastic_grid;
            std::vector<double> gy(static_cast<std::size_t>(g) * g), gx(gy.size());
            for (std::size_t i = 0; i < gy.size(); ++i) {
                gy[i] = geo.normal() * cfg.elastic_sigma;
                gx[i] = geo.normal() * cfg.elastic_sigma;
            }
            d.disp_y = bilinear_upsample(gy, g, g, h, w);
            d.disp_x = bilinear_upsample(gx, g, g, h, w);
            d.geometric = true;
        }
        if (cfg.brightness) {
            d.brightness = photo.uniform(-cfg.brightness_range, cfg.brightness_range);
            d.photometric = true;
        }
        if (cfg.contrast) {
            d.contrast = photo.uniform(cfg.contrast_lo, cfg.contrast_hi);
            d.photometric = true;
        }
        if (cfg.gamma) {
            d.gamma = photo.uniform(cfg.gamma_lo, cfg.gamma_hi);
            d.photometric = true;
        }
        if (cfg.noise && cfg.noise_sigma > 0.0) {
            d.noise_sigma = cfg.noise_sigma;
            d.noise.resize(static_cast<std::size_t>(h) * w);
            for (double& v : d.noise) v = noise_rng.normal() * cfg.noise_sigma;
            d.photometric = true;
        }
        return d;
    }

    // Inverse-mapped source coordinate for output pixel (y, x).
    void source_coord(double y, double x, double& sy, double& sx) const {
        const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
        double py = y, px = x;
        if (!disp_y.empty()) {
            const std::size_t i = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
            py += disp_y[i];
            px += disp_x[i];
        }
        const double ry = py - cy - ty;
        const double rx = px - cx - tx;
        sy = cy + inv_scale * (-sin_t * rx + cos_t * ry);
        sx = cx + inv_scale * (cos_t * rx + sin_t * ry);
    }

    // Geometry (bilinear) + photometric jitter; out-of-bounds samples are 0.
    Image apply_image(const Image& img) const {
        Image out = geometric ? warp_bilinear(img) : img;
        if (photometric) {
            for (std::size_t i = 0; i < out.pix.size(); ++i) {
                double v = out.pix[i];
                v = contrast * v + brightness;
                v = std::min(1.0, std::max(0.0, v));
                if (gamma != 1.0) v = std::pow(v, gamma);
                if (!noise.empty()) v += noise[i];
                out.pix[i] = std::min(1.0, std::max(0.0, v));
            }
        }
        return out;
    }

    // Geometry only (nearest neighbour); out-of-bounds samples get label 0.
    Mask apply_mask(const Mask& mask) const {
        if (!geometric) return mask;
        Mask out(mask.h, mask.w);
        for (int y = 0; y < mask.h; ++y)
            for (int x = 0; x < mask.w; ++x) {
                double sy, sx;
                source_coord(y, x, sy, sx);
                const int iy = static_cast<int>(std::lround(sy));
                const int ix = static_cast<int>(std::lround(sx));
                out.at(y, x) = (iy >= 0 && iy < mask.h && ix >= 0 && ix < mask.w)
                                   ? mask.at(iy, ix)
                                   : 0;
            }
        return out;
    }

  private:
    static std::vector<double> bilinear_upsample(const std::vector<double>& grid, int gh, int gw,
                                                 int h, int w) {
        std::vector<double> out(static_cast<std::size_t>(h) * w);
        for (int y = 0; y < h; ++y) {
            const double fy = (gh - 1) * (h > 1 ? static_cast<double>(y) / (h - 1) : 0.0);
            const int y0 = std::min(gh - 2, static_cast<int>(fy));
            const double wy = fy - y0;
            for (int x = 0; x < w; ++x) {
                const double fx = (gw - 1) * (w > 1 ? static_cast<double>(x) / (w - 1) : 0.0);
                const int x0 = std::min(gw - 2, static_cast<int>(fx));
                const double wx = fx - x0;
                const double v00 = grid[static_cast<std::size_t>(y0) * gw + x0];
                const double v01 = grid[static_cast<std::size_t>(y0) * gw + x0 + 1];
                const double v10 = grid[static_cast<std::size_t>(y0 + 1) * gw + x0];
                const double v11 = grid[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
                out[static_cast<std::size_t>(y) * w + x] =
                    (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
            }
        }
        return out;
    }

    Image warp_bilinear(const Image& img) const {
        Image out(img.h, img.w);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double sy, sx;
                source_coord(y, x, sy, sx);
                if (sy < 0.0 || sx < 0.0 || sy > img.h - 1 || sx > img.w - 1) {
                    out.at(y, x) = 0.0;
                    continue;
                }
                const int y0 = std::min(img.h - 2, static_cast<int>(sy));
                const int x0 = std::min(img.w - 2, static_cast<int>(sx));
                const double wy = sy - y0, wx = sx - x0;
                out.at(y, x) = (1 - wy) * ((1 - wx) * img.at(y0, x0) + wx * img.at(y0, x0 + 1)) +
                               wy * ((1 - wx) * img.at(y0 + 1, x0) + wx * img.at(y0 + 1, x0 + 1));
            }
        return out;
    }
};

inline std::pair<Image, Mask> weak_augment(const Image& img, const Mask& mask,
                                           const WeakAugConfig& cfg, Rng rng) {
    check_pair_shape(img, mask, "weak_augment");
    const WeakAugDraw draw = WeakAugDraw::sample(cfg, img.h, img.w, rng);
    return {draw.apply_image(img), draw.apply_mask(mask)};
}

}  // namespace ssldg
