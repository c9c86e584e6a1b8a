#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ssldg/errors.hpp"
#include "ssldg/rng.hpp"
#include "ssldg/tensor.hpp"

namespace ssldg {

// Shared-encoder / multi-decoder segmentation network. Three-level U-Net
// (two factor-2 downsamplings): the encoder is a single parameter set, each
// of the k branches owns an independent decoder and produces softmax
// probabilities over `classes` channels at input resolution.
struct SegModel {
    struct ConvParams {
        Tensor w;  // [F,C,kh,kw]
        Tensor b;  // [F]
    };

    struct Decoder {
        ConvParams dec2;  // after first upsample+skip
        ConvParams dec1;  // after second upsample+skip
        ConvParams head;  // 1x1 projection to class logits
    };

    int k = 3;
    int channels = 8;
    int classes = 4;

    ConvParams enc1, enc2, bott1, bott2;
    std::vector<Decoder> decoders;

    static SegModel build(int k, int channels, int classes, std::uint64_t seed) {
        if (k < 2) throw ContractError("SegModel::build: consistency needs at least 2 branches");
        if (channels < 1 || classes < 2) throw ContractError("SegModel::build: bad width or class count");
        SegModel m;
        m.k = k;
        m.channels = channels;
        m.classes = classes;
        const int ch = channels;
        Rng root = Rng(seed).fork(stream::kModelInit);
        std::uint64_t idx = 0;
        auto conv = [&](int out_ch, int in_ch, int ksz) {
            ConvParams c;
            c.w = he_kernel(out_ch, in_ch, ksz, root.fork(idx++));
            c.b = Tensor(Shape{static_cast<std::size_t>(out_ch)}, 0.0, true);
            return c;
        };
        m.enc1 = conv(ch, 1, 3);
        m.enc2 = conv(2 * ch, ch, 3);
        m.bott1 = conv(2 * ch, 2 * ch, 3);
        m.bott2 = conv(2 * ch, 2 * ch, 3);
        m.decoders.resize(static_cast<std::size_t>(k));
        for (auto& d : m.decoders) {
            d.dec2 = conv(2 * ch, 4 * ch, 3);
            d.dec1 = conv(ch, 3 * ch, 3);
            d.head = conv(classes, ch, 1);
        }
        return m;
    }

    // Probability map [1,classes,H,W] from decoder branch m (1-based).
    // `frozen` detaches all parameters so the pass cannot produce parameter
    // gradients (used for saliency and pseudo-label passes).
    Tensor forward_branch(const Tensor& x, int m, bool frozen = false) const {
        if (m < 1 || m > k) throw ContractError("forward_branch: branch index out of range");
        check_input(x);
        const Decoder& dec = decoders[static_cast<std::size_t>(m - 1)];

        const Tensor s1 = block(x, enc1, frozen);                  // [1, ch,  H,   W  ]
        const Tensor s2 = block(avgpool2(s1), enc2, frozen);       // [1, 2ch, H/2, W/2]
        Tensor b = block(avgpool2(s2), bott1, frozen);             // [1, 2ch, H/4, W/4]
        b = block(b, bott2, frozen);
        Tensor u2 = block(concat_channels(upsample_nearest2(b), s2), dec.dec2, frozen);
        Tensor u1 = block(concat_channels(upsample_nearest2(u2), s1), dec.dec1, frozen);
        const Tensor logits = add_channel_bias(conv2d(u1, maybe(dec.head.w, frozen), 0),
                                               maybe(dec.head.b, frozen));
        return softmax_channels(logits);
    }

    // Branch m applied to views[m-1]; encoder activations are recomputed per
    // view, so no state leaks across branches within one forward.
    std::vector<Tensor> forward_all(const std::vector<Tensor>& views, bool frozen = false) const {
        if (static_cast<int>(views.size()) != k)
            throw ContractError("forward_all: expected exactly k views");
        std::vector<Tensor> probs;
        probs.reserve(views.size());
        for (int m = 1; m <= k; ++m)
            probs.push_back(forward_branch(views[static_cast<std::size_t>(m - 1)], m, frozen));
        return probs;
    }

    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        auto push = [&](const std::string& name, const ConvParams& c) {
            out.emplace_back(name + ".w", c.w);
            out.emplace_back(name + ".b", c.b);
        };
        push("enc1", enc1);
        push("enc2", enc2);
        push("bott1", bott1);
        push("bott2", bott2);
        for (int m = 1; m <= k; ++m) {
            const auto& d = decoders[static_cast<std::size_t>(m - 1)];
            const std::string p = "branch" + std::to_string(m);
            push(p + ".dec2", d.dec2);
            push(p + ".dec1", d.dec1);
            push(p + ".head", d.head);
        }
        return out;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (auto& [name, t] : named_parameters()) out.push_back(t);
        return out;
    }

    std::vector<Tensor> encoder_parameters() const {
        return {enc1.w, enc1.b, enc2.w, enc2.b, bott1.w, bott1.b, bott2.w, bott2.b};
    }

    std::vector<Tensor> decoder_parameters(int m) const {
        if (m < 1 || m > k) throw ContractError("decoder_parameters: branch index out of range");
        const auto& d = decoders[static_cast<std::size_t>(m - 1)];
        return {d.dec2.w, d.dec2.b, d.dec1.w, d.dec1.b, d.head.w, d.head.b};
    }

    void zero_grad() const {
        for (auto& p : parameters()) {
            Tensor t = p;
            t.zero_grad();
        }
    }

  private:
    static Tensor he_kernel(int out_ch, int in_ch, int ksz, Rng rng) {
        const std::size_t n = static_cast<std::size_t>(out_ch) * in_ch * ksz * ksz;
        const double std = std::sqrt(2.0 / (static_cast<double>(in_ch) * ksz * ksz));
        std::vector<double> w(n);
        for (double& v : w) v = rng.normal() * std;
        return Tensor::from(Shape{static_cast<std::size_t>(out_ch), static_cast<std::size_t>(in_ch),
                                  static_cast<std::size_t>(ksz), static_cast<std::size_t>(ksz)},
                            std::move(w), true);
    }

    static Tensor maybe(const Tensor& t, bool frozen) { return frozen ? detach(t) : t; }

    // conv -> instance norm -> shift -> relu; the normalization keeps the
    // features insensitive to per-sample intensity scaling, which carries
    // most of the cross-domain shift.
    static Tensor block(const Tensor& x, const ConvParams& c, bool frozen) {
        return relu(add_channel_bias(instance_norm(conv2d(x, maybe(c.w, frozen), 1)),
                                     maybe(c.b, frozen)));
    }

    void check_input(const Tensor& x) const {
        if (x.shape().size() != 4 || x.dim(0) != 1 || x.dim(1) != 1)
            throw DimensionError("SegModel: input must be [1,1,H,W]");
        if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
            throw DimensionError("SegModel: H and W must be divisible by 4");
    }
};

}  // namespace ssldg
