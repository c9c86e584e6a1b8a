#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <vector>

#include "ssldg/errors.hpp"
#include "ssldg/image.hpp"
#include "ssldg/rng.hpp"

namespace ssldg {

using CurvePoint = std::array<double, 2>;  // (x, y)

// Cubic Bernstein combination of four control points, coordinate-wise.
inline CurvePoint bezier_eval(const std::array<CurvePoint, 4>& points, double k) {
    if (k < 0.0 || k > 1.0) throw ContractError("bezier_eval: k must be in [0,1]");
    const double u = 1.0 - k;
    const double b0 = u * u * u;
    const double b1 = 3.0 * u * u * k;
    const double b2 = 3.0 * u * k * k;
    const double b3 = k * k * k;
    return {b0 * points[0][0] + b1 * points[1][0] + b2 * points[2][0] + b3 * points[3][0],
            b0 * points[0][1] + b1 * points[1][1] + b2 * points[2][1] + b3 * points[3][1]};
}

// Intensity lookup built from a cubic Bezier curve with endpoints pinned to
// (0,0) and (1,1). The parametric curve is sampled at `kResolution` values of
// k, sorted by x, and queried with linear interpolation.
struct IntensityMap {
    static constexpr std::size_t kResolution = 1024;

    std::array<CurvePoint, 4> control{};
    bool monotone = false;
    std::vector<double> lut_x;
    std::vector<double> lut_y;

    static IntensityMap identity() {
        IntensityMap m;
        m.control = {CurvePoint{0.0, 0.0}, {0.0, 0.0}, {1.0, 1.0}, {1.0, 1.0}};
        m.monotone = true;
        m.lut_x = {0.0, 1.0};
        m.lut_y = {0.0, 1.0};
        return m;
    }

    double operator()(double x) const {
        if (x <= lut_x.front()) return lut_y.front();
        if (x >= lut_x.back()) return lut_y.back();
        const auto it = std::upper_bound(lut_x.begin(), lut_x.end(), x);
        const std::size_t i = static_cast<std::size_t>(it - lut_x.begin());
        const double x0 = lut_x[i - 1], x1 = lut_x[i];
        const double y0 = lut_y[i - 1], y1 = lut_y[i];
        if (x1 <= x0) return y0;
        const double t = (x - x0) / (x1 - x0);
        return y0 + t * (y1 - y0);
    }
};

namespace detail {

inline IntensityMap sample_curve(const std::array<CurvePoint, 4>& control, bool monotone) {
    IntensityMap m;
    m.control = control;
    m.monotone = monotone;
    const std::size_t R = IntensityMap::kResolution;
    std::vector<CurvePoint> pts(R);
    for (std::size_t j = 0; j < R; ++j)
        pts[j] = bezier_eval(control, static_cast<double>(j) / static_cast<double>(R - 1));
    std::stable_sort(pts.begin(), pts.end(),
                     [](const CurvePoint& a, const CurvePoint& b) { return a[0] < b[0]; });
    m.lut_x.resize(R);
    m.lut_y.resize(R);
    for (std::size_t j = 0; j < R; ++j) {
        m.lut_x[j] = pts[j][0];
        m.lut_y[j] = std::min(1.0, std::max(0.0, pts[j][1]));
    }
    return m;
}

inline bool lut_non_decreasing(const IntensityMap& m) {
    for (std::size_t i = 1; i < m.lut_y.size(); ++i)
        if (m.lut_y[i] < m.lut_y[i - 1]) return false;
    return true;
}

}  // namespace detail

// Draws the two middle control points uniformly from [0,1]^2 (endpoints are
// pinned). For monotone maps the middle x-coordinates are sorted ascending
// and the sampled curve must come out non-decreasing; after 16 rejected
// draws the identity map is returned so the operation is total.
inline IntensityMap build_intensity_map(Rng& rng, bool monotone) {
    for (int attempt = 0; attempt < 16; ++attempt) {
        CurvePoint p1{rng.uniform(), rng.uniform()};
        CurvePoint p2{rng.uniform(), rng.uniform()};
        if (monotone && p2[0] < p1[0]) std::swap(p1[0], p2[0]);
        std::array<CurvePoint, 4> control{CurvePoint{0.0, 0.0}, p1, p2, CurvePoint{1.0, 1.0}};
        IntensityMap m = detail::sample_curve(control, monotone);
        if (!monotone || detail::lut_non_decreasing(m)) return m;
    }
    return IntensityMap::identity();
}

inline Image apply_intensity_map(const Image& img, const IntensityMap& map) {
    Image out(img.h, img.w);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = img.pix[i];
        if (v < 0.0 || v > 1.0)
            throw ContractError("apply_intensity_map: input must be normalized to [0,1]");
        out.pix[i] = std::min(1.0, std::max(0.0, map(v)));
    }
    return out;
}

}  // namespace ssldg
