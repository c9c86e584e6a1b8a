#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ssldg/dataio.hpp"
#include "ssldg/losses.hpp"
#include "ssldg/model.hpp"
#include "ssldg/rng.hpp"
#include "ssldg/saliency.hpp"
#include "ssldg/tensor.hpp"

namespace ssldg {

// Central finite-difference verification of every differentiable operation
// and loss. Each scenario projects the op onto a scalar through fixed random
// weights, compares backward() against (f(x+h)-f(x-h))/2h elementwise, and
// reports the worst relative error.

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

namespace detail {

struct GradScenario {
    std::string name;
    std::vector<Tensor> inputs;  // leaves, requires_grad
    std::function<Tensor(const std::vector<Tensor>&)> fn;
    // Probe only this many elements per input when positive (for expensive
    // scenarios); all elements otherwise.
    int probe_limit = 0;
};

inline double scenario_max_rel_err(GradScenario& s, Rng& probe_rng, double h = 1e-5) {
    Tensor out = s.fn(s.inputs);
    backward(out);
    std::vector<std::vector<double>> analytic;
    for (Tensor& in : s.inputs) {
        auto g = in.grad();
        analytic.emplace_back(g.begin(), g.end());
        if (analytic.back().empty()) analytic.back().assign(in.size(), 0.0);
    }

    double worst = 0.0;
    for (std::size_t ii = 0; ii < s.inputs.size(); ++ii) {
        Tensor& in = s.inputs[ii];
        std::vector<std::size_t> idx;
        if (s.probe_limit > 0 && static_cast<std::size_t>(s.probe_limit) < in.size()) {
            for (int p = 0; p < s.probe_limit; ++p)
                idx.push_back(static_cast<std::size_t>(probe_rng.below(static_cast<int>(in.size()))));
        } else {
            idx.resize(in.size());
            for (std::size_t e = 0; e < in.size(); ++e) idx[e] = e;
        }
        for (std::size_t e : idx) {
            auto v = in.values_mut();
            const double keep = v[e];
            v[e] = keep + h;
            const double fp = s.fn(s.inputs).item();
            v[e] = keep - h;
            const double fm = s.fn(s.inputs).item();
            v[e] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double ad = analytic[ii][e];
            const double rel = std::fabs(ad - fd) / std::max({std::fabs(ad), std::fabs(fd), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    for (Tensor& in : s.inputs) in.zero_grad();
    return worst;
}

inline Tensor rand_leaf(Rng& rng, Shape shape, double lo, double hi) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor rand_weights(Rng& rng, const Shape& shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::from(shape, std::move(v));
}

// Weighted-sum projection so every output element influences the scalar.
inline Tensor project(const Tensor& t, const Tensor& w) { return sum(mul(t, w)); }

}  // namespace detail

inline std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed, double tolerance = 1e-4) {
    using detail::GradScenario;
    Rng rng(seed);
    std::vector<GradScenario> scen;

    const Shape small{2, 3, 4};
    auto wsmall = detail::rand_weights(rng, small);
    auto add2 = [wsmall](const std::vector<Tensor>& in) {
        return detail::project(add(in[0], in[1]), wsmall);
    };
    scen.push_back({"add", {detail::rand_leaf(rng, small, -1, 1), detail::rand_leaf(rng, small, -1, 1)}, add2});
    scen.push_back({"sub",
                    {detail::rand_leaf(rng, small, -1, 1), detail::rand_leaf(rng, small, -1, 1)},
                    [wsmall](const std::vector<Tensor>& in) {
                        return detail::project(sub(in[0], in[1]), wsmall);
                    }});
    scen.push_back({"mul",
                    {detail::rand_leaf(rng, small, -1, 1), detail::rand_leaf(rng, small, -1, 1)},
                    [wsmall](const std::vector<Tensor>& in) {
                        return detail::project(mul(in[0], in[1]), wsmall);
                    }});
    scen.push_back({"div",
                    {detail::rand_leaf(rng, small, -1, 1), detail::rand_leaf(rng, small, 0.5, 2.0)},
                    [wsmall](const std::vector<Tensor>& in) {
                        return detail::project(div(in[0], in[1]), wsmall);
                    }});
    scen.push_back({"log",
                    {detail::rand_leaf(rng, small, 0.2, 3.0)},
                    [wsmall](const std::vector<Tensor>& in) {
                        return detail::project(log(in[0]), wsmall);
                    }});
    scen.push_back({"exp",
                    {detail::rand_leaf(rng, small, -1, 1)},
                    [wsmall](const std::vector<Tensor>& in) {
                        return detail::project(exp(in[0]), wsmall);
                    }});
    scen.push_back({"abs",
                    {detail::rand_leaf(rng, small, 0.2, 1.0)},  // kink-free region
                    [wsmall](const std::vector<Tensor>& in) {
                        return detail::project(abs(neg(in[0])), wsmall);
                    }});
    scen.push_back({"clamp",
                    {detail::rand_leaf(rng, small, 0.2, 0.8)},
                    [wsmall](const std::vector<Tensor>& in) {
                        return detail::project(clamp(in[0], 0.0, 1.0), wsmall);
                    }});
    scen.push_back({"relu",
                    {detail::rand_leaf(rng, small, 0.2, 1.0)},
                    [wsmall](const std::vector<Tensor>& in) {
                        return detail::project(relu(in[0]), wsmall);
                    }});
    scen.push_back({"sigmoid",
                    {detail::rand_leaf(rng, small, -2, 2)},
                    [wsmall](const std::vector<Tensor>& in) {
                        return detail::project(sigmoid(in[0]), wsmall);
                    }});
    scen.push_back({"sum_mean",
                    {detail::rand_leaf(rng, small, -1, 1)},
                    [](const std::vector<Tensor>& in) {
                        return add(sum(in[0]), mul_scalar(mean(in[0]), 0.7));
                    }});

    const Shape img1{1, 2, 6, 6};
    const Shape ker{3, 2, 3, 3};
    auto wconv = detail::rand_weights(rng, Shape{1, 3, 6, 6});
    scen.push_back({"conv2d",
                    {detail::rand_leaf(rng, img1, -1, 1), detail::rand_leaf(rng, ker, -1, 1)},
                    [wconv](const std::vector<Tensor>& in) {
                        return detail::project(conv2d(in[0], in[1], 1), wconv);
                    }});
    scen.push_back({"add_channel_bias",
                    {detail::rand_leaf(rng, img1, -1, 1), detail::rand_leaf(rng, Shape{2}, -1, 1)},
                    [](const std::vector<Tensor>& in) {
                        return mean(mul(add_channel_bias(in[0], in[1]), add_channel_bias(in[0], in[1])));
                    }});
    auto win = detail::rand_weights(rng, Shape{1, 2, 4, 4});
    scen.push_back({"instance_norm",
                    {detail::rand_leaf(rng, Shape{1, 2, 4, 4}, -1, 1)},
                    [win](const std::vector<Tensor>& in) {
                        return detail::project(instance_norm(in[0]), win);
                    }});
    auto wsoft = detail::rand_weights(rng, Shape{1, 3, 2, 2});
    scen.push_back({"softmax_channels",
                    {detail::rand_leaf(rng, Shape{1, 3, 2, 2}, -2, 2)},
                    [wsoft](const std::vector<Tensor>& in) {
                        return detail::project(softmax_channels(in[0]), wsoft);
                    }});
    auto wpool = detail::rand_weights(rng, Shape{1, 2, 3, 3});
    scen.push_back({"avgpool2",
                    {detail::rand_leaf(rng, Shape{1, 2, 6, 6}, -1, 1)},
                    [wpool](const std::vector<Tensor>& in) {
                        return detail::project(avgpool2(in[0]), wpool);
                    }});
    auto wup = detail::rand_weights(rng, Shape{1, 2, 8, 8});
    scen.push_back({"upsample_nearest2",
                    {detail::rand_leaf(rng, Shape{1, 2, 4, 4}, -1, 1)},
                    [wup](const std::vector<Tensor>& in) {
                        return detail::project(upsample_nearest2(in[0]), wup);
                    }});
    auto wcat = detail::rand_weights(rng, Shape{1, 5, 3, 3});
    scen.push_back({"concat_slice",
                    {detail::rand_leaf(rng, Shape{1, 2, 3, 3}, -1, 1),
                     detail::rand_leaf(rng, Shape{1, 3, 3, 3}, -1, 1)},
                    [wcat](const std::vector<Tensor>& in) {
                        const Tensor cat = concat_channels(in[0], in[1]);
                        return add(detail::project(cat, wcat), sum(slice_channel(cat, 3)));
                    }});

    // Sharpening and the consistency losses, differentiated through softmax
    // so the chain matches training exactly.
    const Shape logits{1, 2, 3, 3};
    auto consistency_inputs = [&]() {
        return std::vector<Tensor>{detail::rand_leaf(rng, logits, -1.5, 1.5),
                                   detail::rand_leaf(rng, logits, -1.5, 1.5),
                                   detail::rand_leaf(rng, logits, -1.5, 1.5)};
    };
    auto fg = [](const Tensor& l) { return slice_channel(softmax_channels(l), 1); };
    auto wsh = detail::rand_weights(rng, Shape{1, 1, 3, 3});
    scen.push_back({"sharpen",
                    {detail::rand_leaf(rng, logits, -1.5, 1.5)},
                    [fg, wsh](const std::vector<Tensor>& in) {
                        return detail::project(sharpen(fg(in[0]), 0.5), wsh);
                    }});
    scen.push_back({"loss_une",
                    consistency_inputs(),
                    [fg](const std::vector<Tensor>& in) {
                        std::vector<Tensor> sharp{sharpen(fg(in[1]), 0.4), sharpen(fg(in[2]), 0.4)};
                        const Tensor pavg = avg_probability(sharp);
                        return loss_une(pixel_uncertainty(sharp, pavg));
                    }});
    // The rectifying weights are stop-gradient by design, so the checked
    // function holds them frozen at the unperturbed snapshot. Inputs are
    // redrawn until every |p' - p_avg| clears the abs kink by a margin.
    auto draw_clear_of_kink = [&](double T) {
        for (int attempt = 0; attempt < 64; ++attempt) {
            auto in = consistency_inputs();
            std::vector<Tensor> sharp{sharpen(fg(in[1]), T), sharpen(fg(in[2]), T)};
            const Tensor pavg = avg_probability(sharp);
            double margin = 1e9;
            for (const Tensor& s : sharp)
                for (std::size_t i = 0; i < s.size(); ++i)
                    margin = std::min(margin, std::fabs(s.values()[i] - pavg.values()[i]));
            if (margin > 1e-3) return in;
        }
        throw ContractError("gradcheck: could not draw kink-free inputs");
    };
    {
        auto in = draw_clear_of_kink(0.4);
        std::vector<Tensor> sharp{sharpen(fg(in[1]), 0.4), sharpen(fg(in[2]), 0.4)};
        const Tensor pavg = avg_probability(sharp);
        const std::vector<Tensor> w0 = rectifying_weights(pixel_uncertainty(sharp, pavg));
        scen.push_back({"loss_unr", std::move(in), [fg, w0](const std::vector<Tensor>& in2) {
                            std::vector<Tensor> s{sharpen(fg(in2[1]), 0.4),
                                                  sharpen(fg(in2[2]), 0.4)};
                            return loss_unr_weighted(s, avg_probability(s), w0);
                        }});
    }
    {
        auto in = draw_clear_of_kink(0.5);
        std::vector<Tensor> sharp{sharpen(fg(in[1]), 0.5), sharpen(fg(in[2]), 0.5)};
        const Tensor pavg = avg_probability(sharp);
        const std::vector<Tensor> w0 = rectifying_weights(pixel_uncertainty(sharp, pavg));
        scen.push_back({"loss_uec", std::move(in), [fg, w0](const std::vector<Tensor>& in2) {
                            std::vector<Tensor> s{sharpen(fg(in2[1]), 0.5),
                                                  sharpen(fg(in2[2]), 0.5)};
                            const Tensor pavg2 = avg_probability(s);
                            const Tensor une = loss_une(pixel_uncertainty(s, pavg2));
                            const Tensor unr = loss_unr_weighted(s, pavg2, w0);
                            return loss_uec(une, unr, 0.5);
                        }});
    }
    scen.push_back({"loss_wsm",
                    consistency_inputs(),
                    [](const std::vector<Tensor>& in) {
                        return mutual_learning_loss(
                            {softmax_channels(in[0]), softmax_channels(in[1]), softmax_channels(in[2])},
                            2);
                    }});
    Mask dice_mask(3, 3, 0);
    {
        Rng mrng = rng.fork(77);
        for (int& v : dice_mask.lab) v = mrng.below(2);
    }
    scen.push_back({"dice_loss",
                    {detail::rand_leaf(rng, logits, -1.5, 1.5)},
                    [dice_mask](const std::vector<Tensor>& in) {
                        return dice_loss(softmax_channels(in[0]), dice_mask);
                    }});
    {
        auto in = draw_clear_of_kink(0.5);
        std::vector<Tensor> sharp{sharpen(fg(in[1]), 0.5), sharpen(fg(in[2]), 0.5)};
        const Tensor pavg = avg_probability(sharp);
        const std::vector<Tensor> w0 = rectifying_weights(pixel_uncertainty(sharp, pavg));
        scen.push_back(
            {"loss_total", std::move(in), [fg, w0, dice_mask](const std::vector<Tensor>& in2) {
                 std::vector<Tensor> probs{softmax_channels(in2[0]), softmax_channels(in2[1]),
                                           softmax_channels(in2[2])};
                 std::vector<Tensor> s{sharpen(fg(in2[1]), 0.5), sharpen(fg(in2[2]), 0.5)};
                 const Tensor pavg2 = avg_probability(s);
                 const Tensor une = loss_une(pixel_uncertainty(s, pavg2));
                 const Tensor unr = loss_unr_weighted(s, pavg2, w0);
                 LossWeights w;
                 w.T = 0.5;
                 return loss_total(dice_loss(probs[0], dice_mask), loss_uec(une, unr, w.alpha),
                                   mutual_learning_loss(probs, 3), w);
             }});
    }

    // Input-gradient saliency path: d(dice)/d(pixel) through a real model.
    {
        const SegModel model = SegModel::build(2, 4, 3, seed ^ 0xA5A5);
        Mask m(8, 8, 0);
        Rng mrng = rng.fork(78);
        for (int& v : m.lab) v = mrng.below(3);
        GradScenario s;
        s.name = "input_gradient";
        s.inputs = {detail::rand_leaf(rng, Shape{1, 1, 8, 8}, 0.05, 0.95)};
        s.fn = [model, m](const std::vector<Tensor>& in) {
            return dice_loss(model.forward_branch(in[0], 1, true), m);
        };
        s.probe_limit = 5;
        scen.push_back(std::move(s));
    }

    // Every model parameter gradient on a small network (probed).
    {
        const SegModel model = SegModel::build(2, 3, 2, seed ^ 0x1234);
        Mask m(8, 8, 0);
        Rng mrng = rng.fork(79);
        for (int& v : m.lab) v = mrng.below(2);
        const Tensor x = detail::rand_leaf(rng, Shape{1, 1, 8, 8}, 0.0, 1.0);
        GradScenario s;
        s.name = "model_parameters";
        s.inputs = model.parameters();
        s.fn = [model, m, x](const std::vector<Tensor>&) {
            return dice_loss(model.forward_branch(x, 2), m);
        };
        s.probe_limit = 6;
        scen.push_back(std::move(s));
    }

    std::vector<GradCheckResult> results;
    Rng probe(seed ^ 0xBEEF);
    for (auto& s : scen) {
        GradCheckResult r;
        r.name = s.name;
        r.max_rel_err = detail::scenario_max_rel_err(s, probe);
        r.pass = r.max_rel_err <= tolerance;
        results.push_back(std::move(r));
    }
    return results;
}

inline bool gradcheck_all_pass(const std::vector<GradCheckResult>& results) {
    for (const auto& r : results)
        if (!r.pass) return false;
    return !results.empty();
}

}  // namespace ssldg
