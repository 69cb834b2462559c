// Trainable-layer plumbing shared by the registration and fusion networks:
// named parameter registry, initializers, conv/SE wrappers, windowed
// multi-head self-attention, and Adam.
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace mrf {

// Flat registry of named leaf tensors. Names use '/'-separated scopes
// ("extract_fixed/l0/conv1/w") so tests can group gradients per submodule.
class ParamStore {
public:
    Tensor add(const std::string& name, Tensor t) {
        check(by_name_.find(name) == by_name_.end(), "duplicate parameter: " + name);
        t.set_requires_grad(true);
        by_name_[name] = t;
        order_.push_back(name);
        return t;
    }

    Tensor get(const std::string& name) const {
        auto it = by_name_.find(name);
        check(it != by_name_.end(), "unknown parameter: " + name);
        return it->second;
    }

    const std::vector<std::string>& names() const { return order_; }
    size_t count() const { return order_.size(); }

    void zero_grad() {
        for (auto& [k, t] : by_name_) t.zero_grad();
    }

    std::vector<Tensor> all() const {
        std::vector<Tensor> out;
        out.reserve(order_.size());
        for (const auto& n : order_) out.push_back(by_name_.at(n));
        return out;
    }

private:
    std::map<std::string, Tensor> by_name_;
    std::vector<std::string> order_;
};

namespace init {

// Kaiming-uniform fan-in initialization for a packed conv weight.
inline Tensor conv_weight(int k, int cin, int cout, Rng& rng) {
    Tensor w(k, k, cin * cout);
    const double bound = std::sqrt(6.0 / (k * k * cin));
    for (auto& v : w.value()) v = rng.uniform(-bound, bound);
    return w;
}

inline Tensor zeros(int h, int w, int c) { return Tensor(h, w, c); }

inline Tensor ones(int h, int w, int c) { return Tensor(h, w, c, 1.0); }

}  // namespace init

// A 2-D convolution layer with optional stride and zero-initialized variant
// for flow heads.
struct Conv {
    Tensor w, b;
    int cin = 0, cout = 0, k = 0, stride = 1;

    Conv() = default;
    Conv(ParamStore& ps, const std::string& name, int k_, int cin_, int cout_, Rng& rng,
         int stride_ = 1, bool zero_init = false)
        : cin(cin_), cout(cout_), k(k_), stride(stride_) {
        w = ps.add(name + "/w", zero_init ? init::zeros(k_, k_, cin_ * cout_)
                                          : init::conv_weight(k_, cin_, cout_, rng));
        b = ps.add(name + "/b", init::zeros(1, 1, cout_));
    }

    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, cin, cout, stride); }
};

// Squeeze-excitation channel attention: GAP -> bottleneck -> sigmoid gate.
struct SqueezeExcite {
    Conv fc1, fc2;

    SqueezeExcite() = default;
    SqueezeExcite(ParamStore& ps, const std::string& name, int channels, int reduction, Rng& rng) {
        const int hidden = std::max(1, channels / reduction);
        fc1 = Conv(ps, name + "/fc1", 1, channels, hidden, rng);
        fc2 = Conv(ps, name + "/fc2", 1, hidden, channels, rng);
    }

    Tensor gate(const Tensor& x) const { return sigmoid(fc2(relu(fc1(global_avg_pool(x))))); }

    Tensor operator()(const Tensor& x) const { return mul_broadcast(x, gate(x)); }
};

// Residual conv block: x + conv2(relu(conv1(x))).
struct ResidualConv {
    Conv c1, c2;

    ResidualConv() = default;
    ResidualConv(ParamStore& ps, const std::string& name, int channels, Rng& rng) {
        c1 = Conv(ps, name + "/c1", 3, channels, channels, rng);
        c2 = Conv(ps, name + "/c2", 3, channels, channels, rng);
    }

    Tensor operator()(const Tensor& x) const { return add(x, c2(relu(c1(x)))); }
};

// Multi-head self-attention inside non-overlapping win x win windows.
// Input is the packed qkv map (H, W, 3C); output is (H, W, C). No positional
// bias, so window contents are permutation-equivariant.
inline Tensor window_attention(const Tensor& qkv, int win, int heads) {
    const Shape s = qkv.shape();
    check(s.c % 3 == 0, "window_attention: qkv channels not divisible by 3");
    const int C = s.c / 3;
    check(C % heads == 0, "window_attention: channels not divisible by heads");
    check(s.h % win == 0 && s.w % win == 0, "window_attention: size not divisible by window");
    const int d = C / heads;
    const int n = win * win;
    const int wy_count = s.h / win, wx_count = s.w / win;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<double> out(static_cast<size_t>(s.h) * s.w * C, 0.0);
    // Softmax probabilities kept for the backward pass:
    // [window][head][query][key] flattened.
    std::vector<double> probs(static_cast<size_t>(wy_count) * wx_count * heads * n * n);

    const double* qv = qkv.value().data();
    auto tok_index = [&](int wy, int wx, int t) {
        const int y = wy * win + t / win;
        const int x = wx * win + t % win;
        return (static_cast<size_t>(y) * s.w + x) * s.c;
    };

    std::vector<double> scores(n);
    for (int wy = 0; wy < wy_count; ++wy)
        for (int wx = 0; wx < wx_count; ++wx) {
            const size_t wbase =
                (static_cast<size_t>(wy) * wx_count + wx) * heads * static_cast<size_t>(n) * n;
            for (int h = 0; h < heads; ++h) {
                const int off_q = h * d, off_k = C + h * d, off_v = 2 * C + h * d;
                double* pw = &probs[wbase + static_cast<size_t>(h) * n * n];
                for (int i = 0; i < n; ++i) {
                    const double* qi = qv + tok_index(wy, wx, i) + off_q;
                    double mx = -1e300;
                    for (int j = 0; j < n; ++j) {
                        const double* kj = qv + tok_index(wy, wx, j) + off_k;
                        double dot = 0.0;
                        for (int e = 0; e < d; ++e) dot += qi[e] * kj[e];
                        scores[j] = dot * inv_sqrt_d;
                        mx = std::max(mx, scores[j]);
                    }
                    double z = 0.0;
                    for (int j = 0; j < n; ++j) {
                        scores[j] = std::exp(scores[j] - mx);
                        z += scores[j];
                    }
                    double* prow = pw + static_cast<size_t>(i) * n;
                    for (int j = 0; j < n; ++j) prow[j] = scores[j] / z;
                    // out_i = sum_j p_ij * v_j
                    const int oy = wy * win + i / win, ox = wx * win + i % win;
                    double* orow = &out[(static_cast<size_t>(oy) * s.w + ox) * C + h * d];
                    for (int j = 0; j < n; ++j) {
                        const double* vj = qv + tok_index(wy, wx, j) + off_v;
                        const double p = prow[j];
                        for (int e = 0; e < d; ++e) orow[e] += p * vj[e];
                    }
                }
            }
        }

    const Shape os{s.h, s.w, C};
    return Tensor::make(os, std::move(out), {qkv},
                        [s, os, win, heads, d, n, wy_count, wx_count, inv_sqrt_d,
                         probs = std::move(probs)](Node& node) {
        if (!node.parents[0]->requires_grad) return;
        auto& pq = *node.parents[0];
        const int C = os.c;
        const double* qv = pq.value.data();
        auto tok_index = [&](int wy, int wx, int t) {
            const int y = wy * win + t / win;
            const int x = wx * win + t % win;
            return (static_cast<size_t>(y) * s.w + x) * s.c;
        };
        auto out_index = [&](int wy, int wx, int t) {
            const int y = wy * win + t / win;
            const int x = wx * win + t % win;
            return (static_cast<size_t>(y) * s.w + x) * C;
        };
        std::vector<double> dscore(n);
        for (int wy = 0; wy < wy_count; ++wy)
            for (int wx = 0; wx < wx_count; ++wx) {
                const size_t wbase =
                    (static_cast<size_t>(wy) * wx_count + wx) * heads * static_cast<size_t>(n) * n;
                for (int h = 0; h < heads; ++h) {
                    const int off_q = h * d, off_k = C + h * d, off_v = 2 * C + h * d;
                    const double* pw = &probs[wbase + static_cast<size_t>(h) * n * n];
                    for (int i = 0; i < n; ++i) {
                        const double* go = &node.grad[out_index(wy, wx, i) + h * d];
                        const double* prow = pw + static_cast<size_t>(i) * n;
                        // dV and dP
                        double dot_dp_p = 0.0;
                        for (int j = 0; j < n; ++j) {
                            const double* vj = qv + tok_index(wy, wx, j) + off_v;
                            double dp = 0.0;
                            for (int e = 0; e < d; ++e) dp += go[e] * vj[e];
                            dscore[j] = dp;
                            dot_dp_p += dp * prow[j];
                            double* gv = &pq.grad[tok_index(wy, wx, j) + off_v];
                            const double p = prow[j];
                            for (int e = 0; e < d; ++e) gv[e] += p * go[e];
                        }
                        // softmax backward then Q/K
                        const double* qi = qv + tok_index(wy, wx, i) + off_q;
                        double* gqi = &pq.grad[tok_index(wy, wx, i) + off_q];
                        for (int j = 0; j < n; ++j) {
                            const double ds = prow[j] * (dscore[j] - dot_dp_p) * inv_sqrt_d;
                            if (ds == 0.0) continue;
                            const double* kj = qv + tok_index(wy, wx, j) + off_k;
                            double* gkj = &pq.grad[tok_index(wy, wx, j) + off_k];
                            for (int e = 0; e < d; ++e) {
                                gqi[e] += ds * kj[e];
                                gkj[e] += ds * qi[e];
                            }
                        }
                    }
                }
            }
    });
}

// Adam with bias correction; update order follows the store's registration
// order, so training is deterministic for a fixed seed.
class Adam {
public:
    Adam(const ParamStore& ps, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(ps.all()), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].size(), 0.0);
            v_[i].assign(params_[i].size(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& val = params_[i].value();
            const auto& grad = params_[i].grad();
            if (grad.empty()) continue;
            for (size_t j = 0; j < val.size(); ++j) {
                m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * grad[j];
                v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * grad[j] * grad[j];
                val[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
            }
        }
    }

private:
    std::vector<Tensor> params_;
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace mrf
