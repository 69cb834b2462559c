// Reverse-mode autodiff over dense H x W x C arrays of doubles.
//
// A Tensor is a shared handle to a graph node holding values, an optional
// gradient buffer, and a backward closure that pulls the node's gradient
// into its parents. Graphs are built implicitly by the free functions below
// and torn down when the last handle goes out of scope, so there is no
// global tape and independent graphs can live on different threads.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mrf {

struct Shape {
    int h = 0;
    int w = 0;
    int c = 0;

    int size() const { return h * w * c; }
    bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s) {
    return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

// Contract violations (shape mismatches, bad arguments) throw this.
class contract_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw contract_error(msg);
}

class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;

        void ensure_grad() {
            if (grad.empty()) grad.assign(value.size(), 0.0);
        }
    };

    Tensor() = default;
    Tensor(int h, int w, int c, double fill = 0.0) {
        node_ = std::make_shared<Node>();
        node_->shape = Shape{h, w, c};
        node_->value.assign(static_cast<size_t>(h) * w * c, fill);
    }
    explicit Tensor(const Shape& s, double fill = 0.0) : Tensor(s.h, s.w, s.c, fill) {}

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int height() const { return node_->shape.h; }
    int width() const { return node_->shape.w; }
    int channels() const { return node_->shape.c; }
    int size() const { return node_->shape.size(); }

    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& value() { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }

    double at(int y, int x, int ch) const {
        return node_->value[(static_cast<size_t>(y) * node_->shape.w + x) * node_->shape.c + ch];
    }
    double& at(int y, int x, int ch) {
        return node_->value[(static_cast<size_t>(y) * node_->shape.w + x) * node_->shape.c + ch];
    }
    double grad_at(int y, int x, int ch) const {
        return node_->grad[(static_cast<size_t>(y) * node_->shape.w + x) * node_->shape.c + ch];
    }

    // Scalar accessors for 1x1x1 results of reductions.
    double item() const {
        check(size() == 1, "item() on non-scalar tensor " + to_string(shape()));
        return node_->value[0];
    }

    Tensor& set_requires_grad(bool rg = true) {
        node_->requires_grad = rg;
        return *this;
    }
    bool requires_grad() const { return node_->requires_grad; }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    // Deep copy of values only; the copy is a fresh leaf.
    Tensor detached_copy() const {
        Tensor t(shape());
        t.node_->value = node_->value;
        return t;
    }

    // Runs reverse-mode accumulation from this node. The node must be scalar
    // unless an explicit seed is given. Mutates the shared graph, not the
    // handle.
    void backward() const {
        check(size() == 1, "backward() needs a scalar root; got " + to_string(shape()));
        backward_seeded({1.0});
    }
    void backward_seeded(const std::vector<double>& seed) const {
        check(static_cast<int>(seed.size()) == size(), "seed size mismatch");
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        topo(node_.get(), seen, order);
        node_->ensure_grad();
        for (int i = 0; i < size(); ++i) node_->grad[i] += seed[i];
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(*n);
        }
    }

    std::shared_ptr<Node> node() const { return node_; }

    // Builder used by every op. Parents with requires_grad taint the result.
    static Tensor make(const Shape& s, std::vector<double>&& value,
                       std::vector<Tensor> parents,
                       std::function<void(Node&)> backward) {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = s;
        t.node_->value = std::move(value);
        bool rg = false;
        for (auto& p : parents) rg = rg || p.node_->requires_grad;
        if (rg) {
            // Only grad-carrying results keep the graph alive; plain inference
            // chains free intermediates as handles go out of scope.
            for (auto& p : parents) t.node_->parents.push_back(p.node_);
            t.node_->requires_grad = true;
            t.node_->backward = std::move(backward);
            for (auto& p : t.node_->parents) p->ensure_grad();
            t.node_->ensure_grad();
        }
        return t;
    }

private:
    static void topo(Node* n, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
        // Iterative DFS; graphs from integration loops can be deep.
        struct Frame {
            Node* node;
            size_t next = 0;
        };
        std::vector<Frame> stack;
        if (seen.insert(n).second) stack.push_back({n});
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.node->parents.size()) {
                Node* p = f.node->parents[f.next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p});
            } else {
                order.push_back(f.node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

using Node = Tensor::Node;

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = a.value()[i] + b.value()[i];
    return Tensor::make(a.shape(), std::move(v), {a, b}, [](Node& n) {
        for (size_t i = 0; i < n.grad.size(); ++i) {
            if (n.parents[0]->requires_grad) n.parents[0]->grad[i] += n.grad[i];
            if (n.parents[1]->requires_grad) n.parents[1]->grad[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "sub: shape mismatch");
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = a.value()[i] - b.value()[i];
    return Tensor::make(a.shape(), std::move(v), {a, b}, [](Node& n) {
        for (size_t i = 0; i < n.grad.size(); ++i) {
            if (n.parents[0]->requires_grad) n.parents[0]->grad[i] += n.grad[i];
            if (n.parents[1]->requires_grad) n.parents[1]->grad[i] -= n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "mul: shape mismatch");
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = a.value()[i] * b.value()[i];
    return Tensor::make(a.shape(), std::move(v), {a, b}, [](Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        for (size_t i = 0; i < n.grad.size(); ++i) {
            if (n.parents[0]->requires_grad) n.parents[0]->grad[i] += n.grad[i] * bv[i];
            if (n.parents[1]->requires_grad) n.parents[1]->grad[i] += n.grad[i] * av[i];
        }
    });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "div: shape mismatch");
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = a.value()[i] / b.value()[i];
    return Tensor::make(a.shape(), std::move(v), {a, b}, [](Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        for (size_t i = 0; i < n.grad.size(); ++i) {
            if (n.parents[0]->requires_grad) n.parents[0]->grad[i] += n.grad[i] / bv[i];
            if (n.parents[1]->requires_grad) n.parents[1]->grad[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = a.value()[i] * s;
    return Tensor::make(a.shape(), std::move(v), {a}, [s](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i] * s;
    });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = a.value()[i] + s;
    return Tensor::make(a.shape(), std::move(v), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i];
    });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// Multiply with broadcasting: b may have h=w=1 (per-channel gate) or c=1
// (per-pixel gate); matching dims must agree.
inline Tensor mul_broadcast(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return mul(a, b);
    const Shape as = a.shape(), bs = b.shape();
    bool channel_gate = (bs.h == 1 && bs.w == 1 && bs.c == as.c);
    bool pixel_gate = (bs.c == 1 && bs.h == as.h && bs.w == as.w);
    check(channel_gate || pixel_gate, "mul_broadcast: incompatible shapes " + to_string(as) + " vs " + to_string(bs));
    std::vector<double> v(a.size());
    if (channel_gate) {
        for (int p = 0; p < as.h * as.w; ++p)
            for (int ch = 0; ch < as.c; ++ch) v[p * as.c + ch] = a.value()[p * as.c + ch] * b.value()[ch];
    } else {
        for (int p = 0; p < as.h * as.w; ++p)
            for (int ch = 0; ch < as.c; ++ch) v[p * as.c + ch] = a.value()[p * as.c + ch] * b.value()[p];
    }
    return Tensor::make(as, std::move(v), {a, b}, [as, channel_gate](Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        for (int p = 0; p < as.h * as.w; ++p) {
            for (int ch = 0; ch < as.c; ++ch) {
                const size_t i = static_cast<size_t>(p) * as.c + ch;
                const size_t j = channel_gate ? ch : p;
                if (n.parents[0]->requires_grad) n.parents[0]->grad[i] += n.grad[i] * bv[j];
                if (n.parents[1]->requires_grad) n.parents[1]->grad[j] += n.grad[i] * av[i];
            }
        }
    });
}

// Elementwise max; ties route gradient to the first argument.
inline Tensor maximum(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "maximum: shape mismatch");
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = std::max(a.value()[i], b.value()[i]);
    return Tensor::make(a.shape(), std::move(v), {a, b}, [](Node& n) {
        const auto& av = n.parents[0]->value;
        const auto& bv = n.parents[1]->value;
        for (size_t i = 0; i < n.grad.size(); ++i) {
            if (av[i] >= bv[i]) {
                if (n.parents[0]->requires_grad) n.parents[0]->grad[i] += n.grad[i];
            } else if (n.parents[1]->requires_grad) {
                n.parents[1]->grad[i] += n.grad[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& a) {
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
    return Tensor::make(a.shape(), std::move(v), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const auto& av = n.parents[0]->value;
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (av[i] > 0.0) n.parents[0]->grad[i] += n.grad[i];
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-a.value()[i]));
    Tensor out = Tensor::make(a.shape(), std::move(v), {a}, nullptr);
    if (out.requires_grad()) {
        auto on = out.node();
        on->backward = [](Node& n) {
            if (!n.parents[0]->requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i) {
                const double y = n.value[i];
                n.parents[0]->grad[i] += n.grad[i] * y * (1.0 - y);
            }
        };
    }
    return out;
}

inline Tensor gelu(const Tensor& a) {
    std::vector<double> v(a.size());
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (int i = 0; i < a.size(); ++i) {
        const double x = a.value()[i];
        v[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
    }
    return Tensor::make(a.shape(), std::move(v), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        const auto& av = n.parents[0]->value;
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const double x = av[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            n.parents[0]->grad[i] += n.grad[i] * (cdf + x * pdf);
        }
    });
}

inline Tensor abs_t(const Tensor& a) {
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = std::fabs(a.value()[i]);
    return Tensor::make(a.shape(), std::move(v), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const auto& av = n.parents[0]->value;
        for (size_t i = 0; i < n.grad.size(); ++i) {
            const double s = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
            n.parents[0]->grad[i] += n.grad[i] * s;
        }
    });
}

inline Tensor sqrt_t(const Tensor& a, double eps = 0.0) {
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = std::sqrt(a.value()[i] + eps);
    Tensor out = Tensor::make(a.shape(), std::move(v), {a}, nullptr);
    if (out.requires_grad()) {
        out.node()->backward = [](Node& n) {
            if (!n.parents[0]->requires_grad) return;
            for (size_t i = 0; i < n.grad.size(); ++i)
                n.parents[0]->grad[i] += n.grad[i] * 0.5 / std::max(n.value[i], 1e-300);
        };
    }
    return out;
}

// x^p for x > 0 (exponent is a plain constant).
inline Tensor pow_scalar(const Tensor& a, double p) {
    std::vector<double> v(a.size());
    for (int i = 0; i < a.size(); ++i) v[i] = std::pow(a.value()[i], p);
    return Tensor::make(a.shape(), std::move(v), {a}, [p](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const auto& av = n.parents[0]->value;
        for (size_t i = 0; i < n.grad.size(); ++i)
            n.parents[0]->grad[i] += n.grad[i] * p * std::pow(av[i], p - 1.0);
    });
}

// Softmax over the channel axis at each pixel.
inline Tensor softmax_channels(const Tensor& a) {
    const Shape s = a.shape();
    std::vector<double> v(a.size());
    for (int p = 0; p < s.h * s.w; ++p) {
        const double* in = &a.value()[static_cast<size_t>(p) * s.c];
        double* out = &v[static_cast<size_t>(p) * s.c];
        double m = in[0];
        for (int ch = 1; ch < s.c; ++ch) m = std::max(m, in[ch]);
        double z = 0.0;
        for (int ch = 0; ch < s.c; ++ch) {
            out[ch] = std::exp(in[ch] - m);
            z += out[ch];
        }
        for (int ch = 0; ch < s.c; ++ch) out[ch] /= z;
    }
    return Tensor::make(s, std::move(v), {a}, [s](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (int p = 0; p < s.h * s.w; ++p) {
            const double* y = &n.value[static_cast<size_t>(p) * s.c];
            const double* gy = &n.grad[static_cast<size_t>(p) * s.c];
            double dot = 0.0;
            for (int ch = 0; ch < s.c; ++ch) dot += y[ch] * gy[ch];
            double* gx = &n.parents[0]->grad[static_cast<size_t>(p) * s.c];
            for (int ch = 0; ch < s.c; ++ch) gx[ch] += y[ch] * (gy[ch] - dot);
        }
    });
}

// Parameter-free per-position RMS normalization over channels:
// y = x / sqrt(mean_c(x^2) + eps). Pins the feature scale so downstream
// losses cannot shrink activations toward a degenerate regime.
inline Tensor rms_norm_channels(const Tensor& a, double eps = 1e-6) {
    const Shape s = a.shape();
    std::vector<double> v(a.size());
    std::vector<double> inv_n(static_cast<size_t>(s.h) * s.w);
    for (int p = 0; p < s.h * s.w; ++p) {
        const double* in = &a.value()[static_cast<size_t>(p) * s.c];
        double m = 0.0;
        for (int ch = 0; ch < s.c; ++ch) m += in[ch] * in[ch];
        const double n = 1.0 / std::sqrt(m / s.c + eps);
        inv_n[p] = n;
        for (int ch = 0; ch < s.c; ++ch) v[static_cast<size_t>(p) * s.c + ch] = in[ch] * n;
    }
    return Tensor::make(s, std::move(v), {a}, [s, inv_n = std::move(inv_n)](Node& node) {
        if (!node.parents[0]->requires_grad) return;
        for (int p = 0; p < s.h * s.w; ++p) {
            const double* y = &node.value[static_cast<size_t>(p) * s.c];
            const double* g = &node.grad[static_cast<size_t>(p) * s.c];
            double dot = 0.0;
            for (int ch = 0; ch < s.c; ++ch) dot += g[ch] * y[ch];
            dot /= s.c;
            double* gx = &node.parents[0]->grad[static_cast<size_t>(p) * s.c];
            for (int ch = 0; ch < s.c; ++ch) gx[ch] += (g[ch] - y[ch] * dot) * inv_n[p];
        }
    });
}

// Per-position layer normalization over channels.
inline Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
    const Shape s = a.shape();
    check(gamma.shape() == Shape{1, 1, s.c} && beta.shape() == Shape{1, 1, s.c}, "layer_norm: bad affine shapes");
    std::vector<double> v(a.size());
    std::vector<double> inv_std(static_cast<size_t>(s.h) * s.w);
    std::vector<double> xhat(a.size());
    for (int p = 0; p < s.h * s.w; ++p) {
        const double* in = &a.value()[static_cast<size_t>(p) * s.c];
        double mu = 0.0;
        for (int ch = 0; ch < s.c; ++ch) mu += in[ch];
        mu /= s.c;
        double var = 0.0;
        for (int ch = 0; ch < s.c; ++ch) var += (in[ch] - mu) * (in[ch] - mu);
        var /= s.c;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[p] = is;
        for (int ch = 0; ch < s.c; ++ch) {
            const double xh = (in[ch] - mu) * is;
            xhat[static_cast<size_t>(p) * s.c + ch] = xh;
            v[static_cast<size_t>(p) * s.c + ch] = xh * gamma.value()[ch] + beta.value()[ch];
        }
    }
    return Tensor::make(s, std::move(v), {a, gamma, beta},
                        [s, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& n) {
        auto& pa = *n.parents[0];
        auto& pg = *n.parents[1];
        auto& pb = *n.parents[2];
        for (int p = 0; p < s.h * s.w; ++p) {
            const double* gy = &n.grad[static_cast<size_t>(p) * s.c];
            const double* xh = &xhat[static_cast<size_t>(p) * s.c];
            if (pg.requires_grad || pb.requires_grad) {
                for (int ch = 0; ch < s.c; ++ch) {
                    if (pg.requires_grad) pg.grad[ch] += gy[ch] * xh[ch];
                    if (pb.requires_grad) pb.grad[ch] += gy[ch];
                }
            }
            if (pa.requires_grad) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int ch = 0; ch < s.c; ++ch) {
                    const double gh = gy[ch] * pg.value[ch];
                    sum_g += gh;
                    sum_gx += gh * xh[ch];
                }
                for (int ch = 0; ch < s.c; ++ch) {
                    const double gh = gy[ch] * pg.value[ch];
                    pa.grad[static_cast<size_t>(p) * s.c + ch] +=
                        inv_std[p] * (gh - sum_g / s.c - xh[ch] * sum_gx / s.c);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += a.value()[i];
    return Tensor::make(Shape{1, 1, 1}, {s}, {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (auto& g : n.parents[0]->grad) g += n.grad[0];
    });
}

inline Tensor mean_all(const Tensor& a) {
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += a.value()[i];
    const double inv_n = 1.0 / a.size();
    return Tensor::make(Shape{1, 1, 1}, {s * inv_n}, {a}, [inv_n](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (auto& g : n.parents[0]->grad) g += n.grad[0] * inv_n;
    });
}

inline Tensor channel_mean(const Tensor& a) {
    const Shape s = a.shape();
    std::vector<double> v(static_cast<size_t>(s.h) * s.w);
    for (int p = 0; p < s.h * s.w; ++p) {
        double m = 0.0;
        for (int ch = 0; ch < s.c; ++ch) m += a.value()[static_cast<size_t>(p) * s.c + ch];
        v[p] = m / s.c;
    }
    return Tensor::make(Shape{s.h, s.w, 1}, std::move(v), {a}, [s](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (int p = 0; p < s.h * s.w; ++p)
            for (int ch = 0; ch < s.c; ++ch)
                n.parents[0]->grad[static_cast<size_t>(p) * s.c + ch] += n.grad[p] / s.c;
    });
}

inline Tensor channel_max(const Tensor& a) {
    const Shape s = a.shape();
    std::vector<double> v(static_cast<size_t>(s.h) * s.w);
    std::vector<int> arg(static_cast<size_t>(s.h) * s.w);
    for (int p = 0; p < s.h * s.w; ++p) {
        int best = 0;
        double bv = a.value()[static_cast<size_t>(p) * s.c];
        for (int ch = 1; ch < s.c; ++ch) {
            const double x = a.value()[static_cast<size_t>(p) * s.c + ch];
            if (x > bv) { bv = x; best = ch; }
        }
        v[p] = bv;
        arg[p] = best;
    }
    return Tensor::make(Shape{s.h, s.w, 1}, std::move(v), {a}, [s, arg = std::move(arg)](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (int p = 0; p < s.h * s.w; ++p)
            n.parents[0]->grad[static_cast<size_t>(p) * s.c + arg[p]] += n.grad[p];
    });
}

inline Tensor global_avg_pool(const Tensor& a) {
    const Shape s = a.shape();
    std::vector<double> v(s.c, 0.0);
    for (int p = 0; p < s.h * s.w; ++p)
        for (int ch = 0; ch < s.c; ++ch) v[ch] += a.value()[static_cast<size_t>(p) * s.c + ch];
    const double inv_n = 1.0 / (s.h * s.w);
    for (auto& x : v) x *= inv_n;
    return Tensor::make(Shape{1, 1, s.c}, std::move(v), {a}, [s, inv_n](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (int p = 0; p < s.h * s.w; ++p)
            for (int ch = 0; ch < s.c; ++ch)
                n.parents[0]->grad[static_cast<size_t>(p) * s.c + ch] += n.grad[ch] * inv_n;
    });
}

inline Tensor avg_pool2(const Tensor& a) {
    const Shape s = a.shape();
    check(s.h % 2 == 0 && s.w % 2 == 0, "avg_pool2: odd spatial size " + to_string(s));
    const Shape os{s.h / 2, s.w / 2, s.c};
    std::vector<double> v(static_cast<size_t>(os.size()), 0.0);
    for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x)
            for (int ch = 0; ch < s.c; ++ch) {
                double acc = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        acc += a.value()[(static_cast<size_t>(2 * y + dy) * s.w + 2 * x + dx) * s.c + ch];
                v[(static_cast<size_t>(y) * os.w + x) * s.c + ch] = acc * 0.25;
            }
    return Tensor::make(os, std::move(v), {a}, [s, os](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (int y = 0; y < os.h; ++y)
            for (int x = 0; x < os.w; ++x)
                for (int ch = 0; ch < s.c; ++ch) {
                    const double g = n.grad[(static_cast<size_t>(y) * os.w + x) * s.c + ch] * 0.25;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            n.parents[0]->grad[(static_cast<size_t>(2 * y + dy) * s.w + 2 * x + dx) * s.c + ch] += g;
                }
    });
}

// ---------------------------------------------------------------------------
// Shape plumbing: concat / slice / pad / crop / decimate / roll
// ---------------------------------------------------------------------------

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
    check(!parts.empty(), "concat_channels: empty input");
    const int h = parts[0].height(), w = parts[0].width();
    int ctot = 0;
    for (const auto& p : parts) {
        check(p.height() == h && p.width() == w, "concat_channels: spatial mismatch");
        ctot += p.channels();
    }
    const Shape os{h, w, ctot};
    std::vector<double> v(static_cast<size_t>(os.size()));
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const int pc = p.channels();
        for (int pix = 0; pix < h * w; ++pix)
            for (int ch = 0; ch < pc; ++ch)
                v[static_cast<size_t>(pix) * ctot + off + ch] = p.value()[static_cast<size_t>(pix) * pc + ch];
        off += pc;
    }
    return Tensor::make(os, std::move(v), parts, [os, offsets](Node& n) {
        for (size_t k = 0; k < n.parents.size(); ++k) {
            auto& par = *n.parents[k];
            if (!par.requires_grad) continue;
            const int pc = par.shape.c;
            for (int pix = 0; pix < os.h * os.w; ++pix)
                for (int ch = 0; ch < pc; ++ch)
                    par.grad[static_cast<size_t>(pix) * pc + ch] +=
                        n.grad[static_cast<size_t>(pix) * os.c + offsets[k] + ch];
        }
    });
}

inline Tensor slice_channels(const Tensor& a, int c0, int c1) {
    const Shape s = a.shape();
    check(0 <= c0 && c0 < c1 && c1 <= s.c, "slice_channels: bad range");
    const Shape os{s.h, s.w, c1 - c0};
    std::vector<double> v(static_cast<size_t>(os.size()));
    for (int pix = 0; pix < s.h * s.w; ++pix)
        for (int ch = c0; ch < c1; ++ch)
            v[static_cast<size_t>(pix) * os.c + (ch - c0)] = a.value()[static_cast<size_t>(pix) * s.c + ch];
    return Tensor::make(os, std::move(v), {a}, [s, os, c0](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (int pix = 0; pix < s.h * s.w; ++pix)
            for (int ch = 0; ch < os.c; ++ch)
                n.parents[0]->grad[static_cast<size_t>(pix) * s.c + c0 + ch] +=
                    n.grad[static_cast<size_t>(pix) * os.c + ch];
    });
}

namespace detail {
inline int reflect_index(int i, int n) {
    // Reflection without repeating the border sample: -1 -> 1, n -> n-2.
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}
}  // namespace detail

inline Tensor pad_reflect(const Tensor& a, int top, int bottom, int left, int right) {
    const Shape s = a.shape();
    const Shape os{s.h + top + bottom, s.w + left + right, s.c};
    std::vector<double> v(static_cast<size_t>(os.size()));
    std::vector<int> src_pix(static_cast<size_t>(os.h) * os.w);
    for (int y = 0; y < os.h; ++y) {
        const int sy = detail::reflect_index(y - top, s.h);
        for (int x = 0; x < os.w; ++x) {
            const int sx = detail::reflect_index(x - left, s.w);
            src_pix[static_cast<size_t>(y) * os.w + x] = sy * s.w + sx;
            for (int ch = 0; ch < s.c; ++ch)
                v[(static_cast<size_t>(y) * os.w + x) * s.c + ch] =
                    a.value()[(static_cast<size_t>(sy) * s.w + sx) * s.c + ch];
        }
    }
    return Tensor::make(os, std::move(v), {a}, [os, s, src_pix = std::move(src_pix)](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (int pix = 0; pix < os.h * os.w; ++pix)
            for (int ch = 0; ch < s.c; ++ch)
                n.parents[0]->grad[static_cast<size_t>(src_pix[pix]) * s.c + ch] +=
                    n.grad[static_cast<size_t>(pix) * s.c + ch];
    });
}

inline Tensor pad_replicate(const Tensor& a, int top, int bottom, int left, int right) {
    const Shape s = a.shape();
    const Shape os{s.h + top + bottom, s.w + left + right, s.c};
    std::vector<double> v(static_cast<size_t>(os.size()));
    std::vector<int> src_pix(static_cast<size_t>(os.h) * os.w);
    for (int y = 0; y < os.h; ++y) {
        const int sy = std::clamp(y - top, 0, s.h - 1);
        for (int x = 0; x < os.w; ++x) {
            const int sx = std::clamp(x - left, 0, s.w - 1);
            src_pix[static_cast<size_t>(y) * os.w + x] = sy * s.w + sx;
            for (int ch = 0; ch < s.c; ++ch)
                v[(static_cast<size_t>(y) * os.w + x) * s.c + ch] =
                    a.value()[(static_cast<size_t>(sy) * s.w + sx) * s.c + ch];
        }
    }
    return Tensor::make(os, std::move(v), {a}, [os, s, src_pix = std::move(src_pix)](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (int pix = 0; pix < os.h * os.w; ++pix)
            for (int ch = 0; ch < s.c; ++ch)
                n.parents[0]->grad[static_cast<size_t>(src_pix[pix]) * s.c + ch] +=
                    n.grad[static_cast<size_t>(pix) * s.c + ch];
    });
}

inline Tensor crop(const Tensor& a, int top, int left, int out_h, int out_w) {
    const Shape s = a.shape();
    check(top >= 0 && left >= 0 && top + out_h <= s.h && left + out_w <= s.w, "crop: out of range");
    const Shape os{out_h, out_w, s.c};
    std::vector<double> v(static_cast<size_t>(os.size()));
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            for (int ch = 0; ch < s.c; ++ch)
                v[(static_cast<size_t>(y) * out_w + x) * s.c + ch] =
                    a.value()[(static_cast<size_t>(y + top) * s.w + x + left) * s.c + ch];
    return Tensor::make(os, std::move(v), {a}, [s, os, top, left](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (int y = 0; y < os.h; ++y)
            for (int x = 0; x < os.w; ++x)
                for (int ch = 0; ch < s.c; ++ch)
                    n.parents[0]->grad[(static_cast<size_t>(y + top) * s.w + x + left) * s.c + ch] +=
                        n.grad[(static_cast<size_t>(y) * os.w + x) * s.c + ch];
    });
}

// Keeps every stride-th sample starting at the origin.
inline Tensor decimate(const Tensor& a, int stride) {
    const Shape s = a.shape();
    check(stride >= 1, "decimate: bad stride");
    const Shape os{(s.h + stride - 1) / stride, (s.w + stride - 1) / stride, s.c};
    std::vector<double> v(static_cast<size_t>(os.size()));
    for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x)
            for (int ch = 0; ch < s.c; ++ch)
                v[(static_cast<size_t>(y) * os.w + x) * s.c + ch] =
                    a.value()[(static_cast<size_t>(y) * stride * s.w + x * stride) * s.c + ch];
    return Tensor::make(os, std::move(v), {a}, [s, os, stride](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (int y = 0; y < os.h; ++y)
            for (int x = 0; x < os.w; ++x)
                for (int ch = 0; ch < s.c; ++ch)
                    n.parents[0]->grad[(static_cast<size_t>(y) * stride * s.w + x * stride) * s.c + ch] +=
                        n.grad[(static_cast<size_t>(y) * os.w + x) * s.c + ch];
    });
}

// Cyclic spatial shift (positive = content moves down/right).
inline Tensor roll(const Tensor& a, int dy, int dx) {
    const Shape s = a.shape();
    auto wrap = [](int i, int n) { return ((i % n) + n) % n; };
    std::vector<double> v(static_cast<size_t>(s.size()));
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
            const int sy = wrap(y - dy, s.h), sx = wrap(x - dx, s.w);
            for (int ch = 0; ch < s.c; ++ch)
                v[(static_cast<size_t>(y) * s.w + x) * s.c + ch] =
                    a.value()[(static_cast<size_t>(sy) * s.w + sx) * s.c + ch];
        }
    return Tensor::make(s, std::move(v), {a}, [s, dy, dx](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        auto wrap = [](int i, int nn) { return ((i % nn) + nn) % nn; };
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                const int sy = wrap(y - dy, s.h), sx = wrap(x - dx, s.w);
                for (int ch = 0; ch < s.c; ++ch)
                    n.parents[0]->grad[(static_cast<size_t>(sy) * s.w + sx) * s.c + ch] +=
                        n.grad[(static_cast<size_t>(y) * s.w + x) * s.c + ch];
            }
    });
}

// ---------------------------------------------------------------------------
// Convolution (channel-last, zero padding, odd square or rectangular kernels)
// ---------------------------------------------------------------------------

// Weights are packed as (kh, kw, cin*cout): index [(ky*kw+kx)*cin + ci]*cout + co.
// Bias has shape (1,1,cout); pass an undefined Tensor for no bias.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                     int cin, int cout, int stride = 1, bool same_pad = true) {
    const Shape s = x.shape();
    check(s.c == cin, "conv2d: input channels " + std::to_string(s.c) + " != " + std::to_string(cin));
    const int kh = weight.height(), kw = weight.width();
    check(weight.channels() == cin * cout, "conv2d: weight channel packing mismatch");
    check(!bias.defined() || bias.shape() == Shape{1, 1, cout}, "conv2d: bad bias shape");
    const int ph = same_pad ? (kh - 1) / 2 : 0;
    const int pw = same_pad ? (kw - 1) / 2 : 0;
    const int oh = same_pad ? (s.h + stride - 1) / stride : (s.h - kh) / stride + 1;
    const int ow = same_pad ? (s.w + stride - 1) / stride : (s.w - kw) / stride + 1;
    check(oh >= 1 && ow >= 1, "conv2d: kernel larger than input");
    const Shape os{oh, ow, cout};
    std::vector<double> v(static_cast<size_t>(os.size()), 0.0);

    const double* xv = x.value().data();
    const double* wv = weight.value().data();
    std::vector<double> acc(cout);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            if (bias.defined())
                std::copy(bias.value().begin(), bias.value().end(), acc.begin());
            else
                std::fill(acc.begin(), acc.end(), 0.0);
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride + ky - ph;
                if (iy < 0 || iy >= s.h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride + kx - pw;
                    if (ix < 0 || ix >= s.w) continue;
                    const double* xp = xv + (static_cast<size_t>(iy) * s.w + ix) * cin;
                    const double* wp = wv + static_cast<size_t>(ky * kw + kx) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double xval = xp[ci];
                        const double* wrow = wp + static_cast<size_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) acc[co] += xval * wrow[co];
                    }
                }
            }
            std::copy(acc.begin(), acc.end(), &v[(static_cast<size_t>(oy) * ow + ox) * cout]);
        }
    }

    std::vector<Tensor> parents = bias.defined() ? std::vector<Tensor>{x, weight, bias}
                                                 : std::vector<Tensor>{x, weight};
    return Tensor::make(os, std::move(v), parents,
                        [s, os, kh, kw, cin, cout, stride, ph, pw, has_bias = bias.defined()](Node& n) {
        auto& px = *n.parents[0];
        auto& pw_ = *n.parents[1];
        Node* pb = has_bias ? n.parents[2].get() : nullptr;
        const double* xv = px.value.data();
        const double* wv = pw_.value.data();
        for (int oy = 0; oy < os.h; ++oy) {
            for (int ox = 0; ox < os.w; ++ox) {
                const double* gy = &n.grad[(static_cast<size_t>(oy) * os.w + ox) * cout];
                if (pb && pb->requires_grad)
                    for (int co = 0; co < cout; ++co) pb->grad[co] += gy[co];
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride + ky - ph;
                    if (iy < 0 || iy >= s.h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride + kx - pw;
                        if (ix < 0 || ix >= s.w) continue;
                        const size_t xoff = (static_cast<size_t>(iy) * s.w + ix) * cin;
                        const size_t woff = static_cast<size_t>(ky * kw + kx) * cin * cout;
                        if (pw_.requires_grad) {
                            for (int ci = 0; ci < cin; ++ci) {
                                const double xval = xv[xoff + ci];
                                double* gw = &pw_.grad[woff + static_cast<size_t>(ci) * cout];
                                for (int co = 0; co < cout; ++co) gw[co] += xval * gy[co];
                            }
                        }
                        if (px.requires_grad) {
                            for (int ci = 0; ci < cin; ++ci) {
                                const double* wrow = wv + woff + static_cast<size_t>(ci) * cout;
                                double acc = 0.0;
                                for (int co = 0; co < cout; ++co) acc += wrow[co] * gy[co];
                                px.grad[xoff + ci] += acc;
                            }
                        }
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Bilinear resize (half-pixel-center convention, border clamped)
// ---------------------------------------------------------------------------

inline Tensor upsample_bilinear(const Tensor& a, int factor) {
    check(factor >= 1, "upsample_bilinear: factor must be >= 1");
    if (factor == 1) return a;
    const Shape s = a.shape();
    const Shape os{s.h * factor, s.w * factor, s.c};
    std::vector<double> v(static_cast<size_t>(os.size()));

    struct Tap { int i0, i1; double w1; };
    std::vector<Tap> ty(os.h), tx(os.w);
    auto make_tap = [factor](int o, int n) {
        double src = (o + 0.5) / factor - 0.5;
        double fl = std::floor(src);
        int i0 = static_cast<int>(fl);
        double w1 = src - fl;
        int i1 = i0 + 1;
        i0 = std::clamp(i0, 0, n - 1);
        i1 = std::clamp(i1, 0, n - 1);
        return Tap{i0, i1, w1};
    };
    for (int y = 0; y < os.h; ++y) ty[y] = make_tap(y, s.h);
    for (int x = 0; x < os.w; ++x) tx[x] = make_tap(x, s.w);

    for (int y = 0; y < os.h; ++y) {
        for (int x = 0; x < os.w; ++x) {
            const Tap& a_y = ty[y];
            const Tap& a_x = tx[x];
            const double w00 = (1 - a_y.w1) * (1 - a_x.w1), w01 = (1 - a_y.w1) * a_x.w1;
            const double w10 = a_y.w1 * (1 - a_x.w1), w11 = a_y.w1 * a_x.w1;
            for (int ch = 0; ch < s.c; ++ch) {
                v[(static_cast<size_t>(y) * os.w + x) * s.c + ch] =
                    w00 * a.value()[(static_cast<size_t>(a_y.i0) * s.w + a_x.i0) * s.c + ch] +
                    w01 * a.value()[(static_cast<size_t>(a_y.i0) * s.w + a_x.i1) * s.c + ch] +
                    w10 * a.value()[(static_cast<size_t>(a_y.i1) * s.w + a_x.i0) * s.c + ch] +
                    w11 * a.value()[(static_cast<size_t>(a_y.i1) * s.w + a_x.i1) * s.c + ch];
            }
        }
    }
    return Tensor::make(os, std::move(v), {a}, [s, os, ty = std::move(ty), tx = std::move(tx)](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        auto& g = n.parents[0]->grad;
        for (int y = 0; y < os.h; ++y)
            for (int x = 0; x < os.w; ++x) {
                const Tap& a_y = ty[y];
                const Tap& a_x = tx[x];
                const double w00 = (1 - a_y.w1) * (1 - a_x.w1), w01 = (1 - a_y.w1) * a_x.w1;
                const double w10 = a_y.w1 * (1 - a_x.w1), w11 = a_y.w1 * a_x.w1;
                for (int ch = 0; ch < s.c; ++ch) {
                    const double gy = n.grad[(static_cast<size_t>(y) * os.w + x) * s.c + ch];
                    g[(static_cast<size_t>(a_y.i0) * s.w + a_x.i0) * s.c + ch] += w00 * gy;
                    g[(static_cast<size_t>(a_y.i0) * s.w + a_x.i1) * s.c + ch] += w01 * gy;
                    g[(static_cast<size_t>(a_y.i1) * s.w + a_x.i0) * s.c + ch] += w10 * gy;
                    g[(static_cast<size_t>(a_y.i1) * s.w + a_x.i1) * s.c + ch] += w11 * gy;
                }
            }
    });
}

}  // namespace mrf
