#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ssldg/errors.hpp"

namespace ssldg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace detail {

struct TapeNode;
using NodePtr = std::shared_ptr<TapeNode>;

// One node of the reverse-mode tape. The tape is the implicit DAG formed by
// `parents`; a node owns the cached forward value and, once backward() runs,
// its gradient buffer. `backprop` reads this node's grad and accumulates into
// the parents' grads (additive across fan-out).
struct TapeNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily during backward
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(TapeNode&)> backprop;

    std::size_t size() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Multiplies the ReLU backward rule. Only `gradcheck --inject-fault` sets it
// away from 1.0, to demonstrate that the finite-difference suite catches a
// corrupted gradient.
inline double& fault_injection_scale() {
    static double s = 1.0;
    return s;
}

}  // namespace detail

// Value-semantics handle onto a tape node. Copies are cheap and alias the
// same node. Tensors are immutable after forward construction except for the
// grad buffer and explicit leaf mutation between optimization steps.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
        : n_(std::make_shared<detail::TapeNode>()) {
        n_->value.assign(shape_numel(shape), fill);
        n_->shape = std::move(shape);
        n_->requires_grad = requires_grad;
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size())
            throw DimensionError("Tensor::from: shape does not match value count");
        Tensor t;
        t.n_ = std::make_shared<detail::TapeNode>();
        t.n_->shape = std::move(shape);
        t.n_->value = std::move(values);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from(Shape{1}, {v}, requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    std::size_t size() const { return n_->size(); }
    std::size_t dim(std::size_t i) const { return n_->shape.at(i); }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }

    std::span<const double> values() const { return n_->value; }
    // Leaf mutation (parameter updates between tapes).
    std::span<double> values_mut() { return n_->value; }

    double item() const {
        if (size() != 1) throw ContractError("Tensor::item: tensor is not scalar");
        return n_->value[0];
    }

    bool has_grad() const { return !n_->grad.empty(); }
    std::span<const double> grad() const { return n_->grad; }
    std::span<double> grad_mut() {
        n_->ensure_grad();
        return n_->grad;
    }
    void zero_grad() { n_->grad.clear(); }

    const char* op() const { return n_->op; }

    // Internal: node access for op constructors and backward().
    const detail::NodePtr& node() const { return n_; }

  private:
    explicit Tensor(detail::NodePtr n) : n_(std::move(n)) {}
    detail::NodePtr n_;

    friend Tensor make_op(const char* op, Shape shape, std::vector<double> value,
                          std::vector<detail::NodePtr> parents,
                          std::function<void(detail::TapeNode&)> backprop);
};

inline Tensor make_op(const char* op, Shape shape, std::vector<double> value,
                      std::vector<detail::NodePtr> parents,
                      std::function<void(detail::TapeNode&)> backprop) {
    auto n = std::make_shared<detail::TapeNode>();
    n->op = op;
    n->shape = std::move(shape);
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

// Populates grad buffers of every tensor reachable from `loss` that requires
// a gradient. `loss` must be scalar. Each node is visited exactly once in
// reverse topological order, so fan-out accumulates additively.
inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ContractError("backward: loss must be a scalar");
    detail::TapeNode* root = loss.node().get();
    if (!root->requires_grad) return;

    std::vector<detail::TapeNode*> order;
    std::unordered_set<detail::TapeNode*> seen;
    // Iterative post-order DFS over grad-requiring nodes.
    std::vector<std::pair<detail::TapeNode*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::TapeNode* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TapeNode* node = *it;
        if (node->backprop) node->backprop(*node);
    }
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!same_shape(a.shape(), b.shape()))
        throw DimensionError(std::string(op) + ": operand shapes differ");
}

inline void accumulate(TapeNode& dst, std::span<const double> g) {
    dst.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return make_op("add", a.shape(), std::move(out), {a.node(), b.node()},
                   [](detail::TapeNode& n) {
                       for (auto& p : n.parents)
                           if (p->requires_grad) detail::accumulate(*p, n.grad);
                   });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return make_op("sub", a.shape(), std::move(out), {a.node(), b.node()},
                   [](detail::TapeNode& n) {
                       auto& pa = *n.parents[0];
                       auto& pb = *n.parents[1];
                       if (pa.requires_grad) detail::accumulate(pa, n.grad);
                       if (pb.requires_grad) {
                           pb.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
                       }
                   });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_op("mul", a.shape(), std::move(out), {a.node(), b.node()},
                   [](detail::TapeNode& n) {
                       auto& pa = *n.parents[0];
                       auto& pb = *n.parents[1];
                       if (pa.requires_grad) {
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                               pa.grad[i] += n.grad[i] * pb.value[i];
                       }
                       if (pb.requires_grad) {
                           pb.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                               pb.grad[i] += n.grad[i] * pa.value[i];
                       }
                   });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    std::vector<double> out(a.size());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
    return make_op("div", a.shape(), std::move(out), {a.node(), b.node()},
                   [](detail::TapeNode& n) {
                       auto& pa = *n.parents[0];
                       auto& pb = *n.parents[1];
                       if (pa.requires_grad) {
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                               pa.grad[i] += n.grad[i] / pb.value[i];
                       }
                       if (pb.requires_grad) {
                           pb.ensure_grad();
                           for (std::size_t i = 0; i < n.grad.size(); ++i)
                               pb.grad[i] -= n.grad[i] * pa.value[i] / (pb.value[i] * pb.value[i]);
                       }
                   });
}

inline Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
    return make_op("add_scalar", a.shape(), std::move(out), {a.node()},
                   [](detail::TapeNode& n) { detail::accumulate(*n.parents[0], n.grad); });
}

inline Tensor mul_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    return make_op("mul_scalar", a.shape(), std::move(out), {a.node()},
                   [c](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * c;
                   });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

// ---------------------------------------------------------------------------
// Elementwise transcendental / shaping maps
// ---------------------------------------------------------------------------

inline Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
    return make_op("log", a.shape(), std::move(out), {a.node()},
                   [](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t i = 0; i < n.grad.size(); ++i)
                           p.grad[i] += n.grad[i] / p.value[i];
                   });
}

inline Tensor exp(const Tensor& a) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
    return make_op("exp", a.shape(), std::move(out), {a.node()},
                   [](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t i = 0; i < n.grad.size(); ++i)
                           p.grad[i] += n.grad[i] * n.value[i];
                   });
}

// Subgradient 0 at the kink.
inline Tensor abs(const Tensor& a) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(av[i]);
    return make_op("abs", a.shape(), std::move(out), {a.node()},
                   [](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t i = 0; i < n.grad.size(); ++i) {
                           double x = p.value[i];
                           if (x > 0.0)
                               p.grad[i] += n.grad[i];
                           else if (x < 0.0)
                               p.grad[i] -= n.grad[i];
                       }
                   });
}

// Gradient passes only strictly inside [lo, hi].
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, av[i]));
    return make_op("clamp", a.shape(), std::move(out), {a.node()},
                   [lo, hi](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t i = 0; i < n.grad.size(); ++i) {
                           double x = p.value[i];
                           if (x > lo && x < hi) p.grad[i] += n.grad[i];
                       }
                   });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    return make_op("relu", a.shape(), std::move(out), {a.node()},
                   [](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       const double scale = detail::fault_injection_scale();
                       for (std::size_t i = 0; i < n.grad.size(); ++i)
                           if (p.value[i] > 0.0) p.grad[i] += n.grad[i] * scale;
                   });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = av[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return make_op("sigmoid", a.shape(), std::move(out), {a.node()},
                   [](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t i = 0; i < n.grad.size(); ++i) {
                           double y = n.value[i];
                           p.grad[i] += n.grad[i] * y * (1.0 - y);
                       }
                   });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_op("sum", Shape{1}, {s}, {a.node()},
                   [](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0];
                   });
}

inline Tensor mean(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    return make_op("mean", Shape{1}, {s * inv}, {a.node()},
                   [inv](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t i = 0; i < p.grad.size(); ++i)
                           p.grad[i] += n.grad[0] * inv;
                   });
}

// ---------------------------------------------------------------------------
// Structural ops (NCHW)
// ---------------------------------------------------------------------------

namespace detail {
inline void expect_nchw(const Tensor& t, const char* op) {
    if (t.shape().size() != 4)
        throw DimensionError(std::string(op) + ": expected a [N,C,H,W] tensor");
}
}  // namespace detail

// Per-pixel softmax over the channel axis.
inline Tensor softmax_channels(const Tensor& x) {
    detail::expect_nchw(x, "softmax_channels");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t plane = H * W;
    std::vector<double> out(x.size());
    auto xv = x.values();
    for (std::size_t n = 0; n < N; ++n) {
        const std::size_t base = n * C * plane;
        for (std::size_t px = 0; px < plane; ++px) {
            double mx = xv[base + px];
            for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, xv[base + c * plane + px]);
            double z = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                double e = std::exp(xv[base + c * plane + px] - mx);
                out[base + c * plane + px] = e;
                z += e;
            }
            for (std::size_t c = 0; c < C; ++c) out[base + c * plane + px] /= z;
        }
    }
    return make_op("softmax_channels", x.shape(), std::move(out), {x.node()},
                   [N, C, plane](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t b = 0; b < N; ++b) {
                           const std::size_t base = b * C * plane;
                           for (std::size_t px = 0; px < plane; ++px) {
                               double dot = 0.0;
                               for (std::size_t c = 0; c < C; ++c) {
                                   const std::size_t i = base + c * plane + px;
                                   dot += n.grad[i] * n.value[i];
                               }
                               for (std::size_t c = 0; c < C; ++c) {
                                   const std::size_t i = base + c * plane + px;
                                   p.grad[i] += n.value[i] * (n.grad[i] - dot);
                               }
                           }
                       }
                   });
}

// Cross-correlation with stride 1. kernel is [F,C,kh,kw], kh/kw odd;
// padding=(kh-1)/2 preserves the spatial shape.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int padding) {
    detail::expect_nchw(input, "conv2d");
    if (kernel.shape().size() != 4) throw DimensionError("conv2d: kernel must be [F,C,kh,kw]");
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t F = kernel.dim(0), KC = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
    if (KC != C) throw DimensionError("conv2d: kernel channel count does not match input");
    if (KH % 2 == 0 || KW % 2 == 0) throw ContractError("conv2d: kernel sides must be odd");
    if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
    const std::ptrdiff_t P = padding;
    const std::ptrdiff_t OH = static_cast<std::ptrdiff_t>(H) + 2 * P - static_cast<std::ptrdiff_t>(KH) + 1;
    const std::ptrdiff_t OW = static_cast<std::ptrdiff_t>(W) + 2 * P - static_cast<std::ptrdiff_t>(KW) + 1;
    if (OH <= 0 || OW <= 0) throw DimensionError("conv2d: output would be empty");
    const std::size_t oh = static_cast<std::size_t>(OH), ow = static_cast<std::size_t>(OW);

    std::vector<double> out(N * F * oh * ow, 0.0);
    const double* in = input.values().data();
    const double* kw_ = kernel.values().data();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t f = 0; f < F; ++f) {
            double* oplane = out.data() + (n * F + f) * oh * ow;
            for (std::size_t c = 0; c < C; ++c) {
                const double* iplane = in + (n * C + c) * H * W;
                for (std::size_t ki = 0; ki < KH; ++ki) {
                    for (std::size_t kj = 0; kj < KW; ++kj) {
                        const double wv = kw_[((f * C + c) * KH + ki) * KW + kj];
                        if (wv == 0.0) continue;
                        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki) - P;
                        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj) - P;
                        const std::size_t oy0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dy));
                        const std::size_t oy1 = static_cast<std::size_t>(
                            std::min<std::ptrdiff_t>(OH, static_cast<std::ptrdiff_t>(H) - dy));
                        const std::size_t ox0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
                        const std::size_t ox1 = static_cast<std::size_t>(
                            std::min<std::ptrdiff_t>(OW, static_cast<std::ptrdiff_t>(W) - dx));
                        for (std::size_t oy = oy0; oy < oy1; ++oy) {
                            double* orow = oplane + oy * ow;
                            const double* irow = iplane + (oy + dy) * W + dx;
                            for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox];
                        }
                    }
                }
            }
        }
    }

    return make_op(
        "conv2d", Shape{N, F, oh, ow}, std::move(out), {input.node(), kernel.node()},
        [N, C, F, H, W, KH, KW, oh, ow, P](detail::TapeNode& node) {
            auto& pin = *node.parents[0];
            auto& pk = *node.parents[1];
            const bool need_in = pin.requires_grad;
            const bool need_k = pk.requires_grad;
            if (need_in) pin.ensure_grad();
            if (need_k) pk.ensure_grad();
            const double* g = node.grad.data();
            const std::ptrdiff_t OH = static_cast<std::ptrdiff_t>(oh);
            const std::ptrdiff_t OW = static_cast<std::ptrdiff_t>(ow);
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t f = 0; f < F; ++f) {
                    const double* gplane = g + (n * F + f) * oh * ow;
                    for (std::size_t c = 0; c < C; ++c) {
                        const double* iplane = pin.value.data() + (n * C + c) * H * W;
                        double* diplane = need_in ? pin.grad.data() + (n * C + c) * H * W : nullptr;
                        for (std::size_t ki = 0; ki < KH; ++ki) {
                            for (std::size_t kj = 0; kj < KW; ++kj) {
                                const std::size_t widx = ((f * C + c) * KH + ki) * KW + kj;
                                const double wv = pk.value[widx];
                                const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ki) - P;
                                const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kj) - P;
                                const std::size_t oy0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dy));
                                const std::size_t oy1 = static_cast<std::size_t>(
                                    std::min<std::ptrdiff_t>(OH, static_cast<std::ptrdiff_t>(H) - dy));
                                const std::size_t ox0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
                                const std::size_t ox1 = static_cast<std::size_t>(
                                    std::min<std::ptrdiff_t>(OW, static_cast<std::ptrdiff_t>(W) - dx));
                                double wacc = 0.0;
                                for (std::size_t oy = oy0; oy < oy1; ++oy) {
                                    const double* grow = gplane + oy * ow;
                                    const double* irow = iplane + (oy + dy) * W + dx;
                                    if (need_in) {
                                        double* drow = diplane + (oy + dy) * W + dx;
                                        for (std::size_t ox = ox0; ox < ox1; ++ox)
                                            drow[ox] += wv * grow[ox];
                                    }
                                    if (need_k) {
                                        double acc = 0.0;
                                        for (std::size_t ox = ox0; ox < ox1; ++ox)
                                            acc += grow[ox] * irow[ox];
                                        wacc += acc;
                                    }
                                }
                                if (need_k) pk.grad[widx] += wacc;
                            }
                        }
                    }
                }
            }
        });
}

// Adds a per-channel bias [C] across a [N,C,H,W] tensor.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    detail::expect_nchw(x, "add_channel_bias");
    if (bias.shape().size() != 1 || bias.dim(0) != x.dim(1))
        throw DimensionError("add_channel_bias: bias must be [C]");
    const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<double> out(x.size());
    auto xv = x.values();
    auto bv = bias.values();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) out[base + i] = xv[base + i] + bv[c];
        }
    return make_op("add_channel_bias", x.shape(), std::move(out), {x.node(), bias.node()},
                   [N, C, plane](detail::TapeNode& n) {
                       auto& px = *n.parents[0];
                       auto& pb = *n.parents[1];
                       if (px.requires_grad) detail::accumulate(px, n.grad);
                       if (pb.requires_grad) {
                           pb.ensure_grad();
                           for (std::size_t b = 0; b < N; ++b)
                               for (std::size_t c = 0; c < C; ++c) {
                                   const std::size_t base = (b * C + c) * plane;
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < plane; ++i) acc += n.grad[base + i];
                                   pb.grad[c] += acc;
                               }
                       }
                   });
}

// Factor-2 average pooling; spatial dims must be even.
inline Tensor avgpool2(const Tensor& x) {
    detail::expect_nchw(x, "avgpool2");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0) throw DimensionError("avgpool2: spatial dims must be even");
    const std::size_t oh = H / 2, ow = W / 2;
    std::vector<double> out(N * C * oh * ow);
    auto xv = x.values();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* ip = xv.data() + nc * H * W;
        double* op = out.data() + nc * oh * ow;
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                const double* r0 = ip + (2 * y) * W + 2 * xx;
                const double* r1 = r0 + W;
                op[y * ow + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
            }
    }
    return make_op("avgpool2", Shape{N, C, oh, ow}, std::move(out), {x.node()},
                   [N, C, H, W, oh, ow](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t nc = 0; nc < N * C; ++nc) {
                           const double* gp = n.grad.data() + nc * oh * ow;
                           double* dp = p.grad.data() + nc * H * W;
                           for (std::size_t y = 0; y < oh; ++y)
                               for (std::size_t xx = 0; xx < ow; ++xx) {
                                   const double g = 0.25 * gp[y * ow + xx];
                                   double* r0 = dp + (2 * y) * W + 2 * xx;
                                   double* r1 = r0 + W;
                                   r0[0] += g;
                                   r0[1] += g;
                                   r1[0] += g;
                                   r1[1] += g;
                               }
                       }
                   });
}

// Factor-2 nearest-neighbour upsampling.
inline Tensor upsample_nearest2(const Tensor& x) {
    detail::expect_nchw(x, "upsample_nearest2");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t oh = H * 2, ow = W * 2;
    std::vector<double> out(N * C * oh * ow);
    auto xv = x.values();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const double* ip = xv.data() + nc * H * W;
        double* op = out.data() + nc * oh * ow;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t xx = 0; xx < W; ++xx) {
                const double v = ip[y * W + xx];
                double* r0 = op + (2 * y) * ow + 2 * xx;
                double* r1 = r0 + ow;
                r0[0] = v;
                r0[1] = v;
                r1[0] = v;
                r1[1] = v;
            }
    }
    return make_op("upsample_nearest2", Shape{N, C, oh, ow}, std::move(out), {x.node()},
                   [N, C, H, W, oh, ow](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t nc = 0; nc < N * C; ++nc) {
                           const double* gp = n.grad.data() + nc * oh * ow;
                           double* dp = p.grad.data() + nc * H * W;
                           for (std::size_t y = 0; y < H; ++y)
                               for (std::size_t xx = 0; xx < W; ++xx) {
                                   const double* r0 = gp + (2 * y) * ow + 2 * xx;
                                   const double* r1 = r0 + ow;
                                   dp[y * W + xx] += r0[0] + r0[1] + r1[0] + r1[1];
                               }
                       }
                   });
}

// Per-sample, per-channel normalization over the spatial plane:
// y = (x - mean) / sqrt(var + eps).
inline Tensor instance_norm(const Tensor& x, double eps = 1e-5) {
    detail::expect_nchw(x, "instance_norm");
    const std::size_t NC = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<double> out(x.size());
    std::vector<double> inv_std(NC);
    auto xv = x.values();
    for (std::size_t nc = 0; nc < NC; ++nc) {
        const double* p = xv.data() + nc * plane;
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
        mean /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
        var /= static_cast<double>(plane);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[nc] = is;
        double* o = out.data() + nc * plane;
        for (std::size_t i = 0; i < plane; ++i) o[i] = (p[i] - mean) * is;
    }
    return make_op("instance_norm", x.shape(), std::move(out), {x.node()},
                   [NC, plane, inv_std](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t nc = 0; nc < NC; ++nc) {
                           const double* g = n.grad.data() + nc * plane;
                           const double* y = n.value.data() + nc * plane;
                           double* d = p.grad.data() + nc * plane;
                           double gsum = 0.0, gysum = 0.0;
                           for (std::size_t i = 0; i < plane; ++i) {
                               gsum += g[i];
                               gysum += g[i] * y[i];
                           }
                           const double inv_n = 1.0 / static_cast<double>(plane);
                           const double is = inv_std[nc];
                           for (std::size_t i = 0; i < plane; ++i)
                               d[i] += is * (g[i] - inv_n * gsum - y[i] * inv_n * gysum);
                       }
                   });
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    detail::expect_nchw(a, "concat_channels");
    detail::expect_nchw(b, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw DimensionError("concat_channels: N/H/W must match");
    const std::size_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
    const std::size_t plane = a.dim(2) * a.dim(3);
    std::vector<double> out((Ca + Cb) * N * plane);
    auto av = a.values(), bv = b.values();
    for (std::size_t n = 0; n < N; ++n) {
        std::copy(av.begin() + n * Ca * plane, av.begin() + (n + 1) * Ca * plane,
                  out.begin() + n * (Ca + Cb) * plane);
        std::copy(bv.begin() + n * Cb * plane, bv.begin() + (n + 1) * Cb * plane,
                  out.begin() + (n * (Ca + Cb) + Ca) * plane);
    }
    return make_op("concat_channels", Shape{N, Ca + Cb, a.dim(2), a.dim(3)}, std::move(out),
                   {a.node(), b.node()}, [N, Ca, Cb, plane](detail::TapeNode& n) {
                       auto& pa = *n.parents[0];
                       auto& pb = *n.parents[1];
                       if (pa.requires_grad) pa.ensure_grad();
                       if (pb.requires_grad) pb.ensure_grad();
                       for (std::size_t b = 0; b < N; ++b) {
                           const double* g = n.grad.data() + b * (Ca + Cb) * plane;
                           if (pa.requires_grad)
                               for (std::size_t i = 0; i < Ca * plane; ++i)
                                   pa.grad[b * Ca * plane + i] += g[i];
                           if (pb.requires_grad)
                               for (std::size_t i = 0; i < Cb * plane; ++i)
                                   pb.grad[b * Cb * plane + i] += g[Ca * plane + i];
                       }
                   });
}

// Extracts channel c as a [N,1,H,W] view (with gradient scatter).
inline Tensor slice_channel(const Tensor& x, std::size_t c) {
    detail::expect_nchw(x, "slice_channel");
    const std::size_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (c >= C) throw ContractError("slice_channel: channel out of range");
    std::vector<double> out(N * plane);
    auto xv = x.values();
    for (std::size_t n = 0; n < N; ++n)
        std::copy(xv.begin() + (n * C + c) * plane, xv.begin() + (n * C + c + 1) * plane,
                  out.begin() + n * plane);
    return make_op("slice_channel", Shape{N, 1, x.dim(2), x.dim(3)}, std::move(out), {x.node()},
                   [N, C, c, plane](detail::TapeNode& n) {
                       auto& p = *n.parents[0];
                       p.ensure_grad();
                       for (std::size_t b = 0; b < N; ++b)
                           for (std::size_t i = 0; i < plane; ++i)
                               p.grad[(b * C + c) * plane + i] += n.grad[b * plane + i];
                   });
}

// Copies values into a fresh leaf that blocks gradient flow.
inline Tensor detach(const Tensor& a) {
    return Tensor::from(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
}

}  // namespace ssldg
