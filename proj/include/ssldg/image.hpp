#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "ssldg/errors.hpp"
#include "ssldg/tensor.hpp"

namespace ssldg {

// 2-D grayscale intensity image, values in [0,1] by convention.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<double> pix;

    Image() = default;
    Image(int h_, int w_, double fill = 0.0) : h(h_), w(w_), pix(static_cast<std::size_t>(h_) * w_, fill) {}

    double& at(int y, int x) { return pix[static_cast<std::size_t>(y) * w + x]; }
    double at(int y, int x) const { return pix[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const { return pix.size(); }
};

// Integer class-label map aligned with an Image.
struct Mask {
    int h = 0;
    int w = 0;
    std::vector<int> lab;

    Mask() = default;
    Mask(int h_, int w_, int fill = 0) : h(h_), w(w_), lab(static_cast<std::size_t>(h_) * w_, fill) {}

    int& at(int y, int x) { return lab[static_cast<std::size_t>(y) * w + x]; }
    int at(int y, int x) const { return lab[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const { return lab.size(); }
};

inline void check_pair_shape(const Image& img, const Mask& mask, const char* op) {
    if (img.h != mask.h || img.w != mask.w)
        throw DimensionError(std::string(op) + ": image and mask shapes differ");
}

inline Image clamp01(Image img) {
    for (double& v : img.pix) v = std::min(1.0, std::max(0.0, v));
    return img;
}

// ---------------------------------------------------------------------------
// Bridges between images and [1,C,H,W] tensors
// ---------------------------------------------------------------------------

inline Tensor to_tensor(const Image& img, bool requires_grad = false) {
    return Tensor::from(Shape{1, 1, static_cast<std::size_t>(img.h), static_cast<std::size_t>(img.w)},
                        img.pix, requires_grad);
}

inline Image to_image(const Tensor& t) {
    const auto& s = t.shape();
    int h = 0, w = 0;
    if (s.size() == 4 && s[0] == 1 && s[1] == 1) {
        h = static_cast<int>(s[2]);
        w = static_cast<int>(s[3]);
    } else if (s.size() == 2) {
        h = static_cast<int>(s[0]);
        w = static_cast<int>(s[1]);
    } else {
        throw DimensionError("to_image: expected [1,1,H,W] or [H,W]");
    }
    Image img(h, w);
    auto v = t.values();
    img.pix.assign(v.begin(), v.end());
    return img;
}

// One-hot encoding of a label map as a constant [1,C,H,W] tensor.
inline Tensor one_hot(const Mask& mask, int classes) {
    const std::size_t plane = mask.size();
    std::vector<double> data(static_cast<std::size_t>(classes) * plane, 0.0);
    for (std::size_t i = 0; i < plane; ++i) {
        const int c = mask.lab[i];
        if (c < 0 || c >= classes) throw ContractError("one_hot: label outside class range");
        data[static_cast<std::size_t>(c) * plane + i] = 1.0;
    }
    return Tensor::from(Shape{1, static_cast<std::size_t>(classes), static_cast<std::size_t>(mask.h),
                              static_cast<std::size_t>(mask.w)},
                        std::move(data));
}

// Per-pixel argmax over channels of a [1,C,H,W] probability map.
inline Mask argmax_channels(const Tensor& probs) {
    if (probs.shape().size() != 4 || probs.dim(0) != 1)
        throw DimensionError("argmax_channels: expected [1,C,H,W]");
    const std::size_t C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    const std::size_t plane = H * W;
    Mask m(static_cast<int>(H), static_cast<int>(W));
    auto v = probs.values();
    for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        double bv = v[i];
        for (std::size_t c = 1; c < C; ++c) {
            if (v[c * plane + i] > bv) {
                bv = v[c * plane + i];
                best = static_cast<int>(c);
            }
        }
        m.lab[i] = best;
    }
    return m;
}

}  // namespace ssldg
