// Training objectives: bidirectional multi-level similarity and field
// smoothness for registration; multi-scale SSIM, joint Sobel-gradient and
// saliency-weighted intensity terms for fusion.
#pragma once

#include <vector>

#include "field.hpp"
#include "registration.hpp"
#include "tensor.hpp"

namespace mrf {

struct LossWeights {
    double lambda_rev = 0.2;
    double lambda_sm = 10.0;
    double lambda_ssim = 1.0;
    double lambda_jg = 20.0;
    double lambda_svs = 5.0;
};

// ---------------------------------------------------------------------------
// Similarity feature map psi: the image plus two blurred, 2x-decimated
// copies (a 3-level Gaussian pyramid). Deterministic and differentiable.
// ---------------------------------------------------------------------------

namespace loss_detail {

inline Tensor binomial5_blur(const Tensor& x) {
    check(x.channels() == 1, "blur: expected single channel");
    static const double k[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
    Tensor kx(1, 5, 1), ky(5, 1, 1);
    for (int i = 0; i < 5; ++i) {
        kx.value()[i] = k[i];
        ky.value()[i] = k[i];
    }
    Tensor padded = pad_replicate(x, 2, 2, 2, 2);
    Tensor hor = conv2d(padded, kx, Tensor(), 1, 1, 1, /*same_pad=*/false);
    return conv2d(hor, ky, Tensor(), 1, 1, 1, /*same_pad=*/false);
}

inline Tensor clamp_min(const Tensor& x, double lo) {
    std::vector<double> v(x.size());
    for (int i = 0; i < x.size(); ++i) v[i] = std::max(x.value()[i], lo);
    return Tensor::make(x.shape(), std::move(v), {x}, [lo](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        for (size_t i = 0; i < n.grad.size(); ++i)
            if (n.parents[0]->value[i] > lo) n.parents[0]->grad[i] += n.grad[i];
    });
}

}  // namespace loss_detail

using FeatureMapper = std::function<std::vector<Tensor>(const Tensor&)>;

inline std::vector<Tensor> pyramid_features(const Tensor& image, int levels = 3) {
    std::vector<Tensor> out{image};
    Tensor cur = image;
    for (int j = 1; j < levels; ++j) {
        cur = decimate(loss_detail::binomial5_blur(cur), 2);
        out.push_back(cur);
    }
    return out;
}

inline FeatureMapper default_feature_mapper() {
    return [](const Tensor& img) { return pyramid_features(img, 3); };
}

inline Tensor feature_l1(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    check(a.size() == b.size(), "feature_l1: level count mismatch");
    Tensor acc;
    for (size_t j = 0; j < a.size(); ++j) {
        Tensor term = mean_all(abs_t(sub(a[j], b[j])));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, 1.0 / static_cast<double>(a.size()));
}

// Forward term compares the registered image against the fixed image; the
// backward term warps the fixed image with the inverse field and compares
// against the moving image.
inline Tensor loss_sim_bi(const RegistrationOutput& reg, const Tensor& fixed, const Tensor& moving,
                          const FeatureMapper& psi, const LossWeights& w, int integration_steps = 7) {
    const Tensor forward_term = feature_l1(psi(reg.registered), psi(fixed));
    if (w.lambda_rev == 0.0) return forward_term;
    const Tensor inverse = integrate_velocity(neg(reg.final_velocity), integration_steps);
    const Tensor backward_term = feature_l1(psi(warp(fixed, inverse)), psi(moving));
    return add(forward_term, scale(backward_term, w.lambda_rev));
}

// Sum over axes of the mean absolute forward difference, each mean taken
// over valid (non-trailing-border) positions and both field channels.
inline Tensor loss_smooth(const Tensor& field) {
    const Shape s = field.shape();
    const SpatialGradient g = spatial_gradient(field);
    const double nx = static_cast<double>(s.h) * (s.w - 1) * s.c;
    const double ny = static_cast<double>(s.h - 1) * s.w * s.c;
    return add(scale(sum_all(abs_t(g.dx)), 1.0 / nx), scale(sum_all(abs_t(g.dy)), 1.0 / ny));
}

inline Tensor loss_reg_total(const RegistrationOutput& reg, const Tensor& fixed,
                             const Tensor& moving, const FeatureMapper& psi, const LossWeights& w,
                             int integration_steps = 7) {
    return add(loss_sim_bi(reg, fixed, moving, psi, w, integration_steps),
               scale(loss_smooth(reg.final_field), w.lambda_sm));
}

// ---------------------------------------------------------------------------
// Multi-scale SSIM
// ---------------------------------------------------------------------------

namespace loss_detail {

inline Tensor gaussian_window(int size, double sigma) {
    Tensor w(size, size, 1);
    const int r = size / 2;
    double sum = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double dy = y - r, dx = x - r;
            const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            w.at(y, x, 0) = v;
            sum += v;
        }
    for (auto& v : w.value()) v /= sum;
    return w;
}

struct SsimTerms {
    Tensor luminance;          // mean over the valid map
    Tensor contrast_structure; // mean over the valid map
};

inline SsimTerms ssim_terms(const Tensor& a, const Tensor& b, int win, double sigma) {
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // dynamic range 1
    const Tensor g = gaussian_window(win, sigma);
    auto smooth = [&](const Tensor& x) { return conv2d(x, g, Tensor(), 1, 1, 1, false); };
    const Tensor mu1 = smooth(a), mu2 = smooth(b);
    const Tensor mu1Sq = mul(mu1, mu1), mu2Sq = mul(mu2, mu2), mu12 = mul(mu1, mu2);
    const Tensor s1 = sub(smooth(mul(a, a)), mu1Sq);
    const Tensor s2 = sub(smooth(mul(b, b)), mu2Sq);
    const Tensor s12 = sub(smooth(mul(a, b)), mu12);
    const Tensor l = div(add_scalar(scale(mu12, 2.0), c1), add_scalar(add(mu1Sq, mu2Sq), c1));
    const Tensor cs = div(add_scalar(scale(s12, 2.0), c2), add_scalar(add(s1, s2), c2));
    return {mean_all(l), mean_all(cs)};
}

}  // namespace loss_detail

// Number of MS-SSIM scales usable for a given size: at least one, at most
// the standard five, shrinking so the coarsest level keeps >= 8 px.
inline int msssim_scales(int h, int w) {
    const int m = static_cast<int>(std::floor(std::log2(std::min(h, w) / 8.0)));
    return std::max(1, std::min(5, m));
}

inline Tensor msssim(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "msssim: shape mismatch");
    static const double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    const int M = msssim_scales(a.height(), a.width());
    double wsum = 0.0;
    for (int j = 0; j < M; ++j) wsum += kWeights[j];

    Tensor x = a, y = b;
    Tensor result;
    for (int j = 0; j < M; ++j) {
        const int m = std::min(x.height(), x.width());
        const int win = std::min(11, m % 2 == 0 ? m - 1 : m);
        const double sigma = 1.5 * win / 11.0;
        auto terms = loss_detail::ssim_terms(x, y, win, sigma);
        const double wj = kWeights[j] / wsum;
        Tensor factor = (j == M - 1)
                            ? mul(pow_scalar(loss_detail::clamp_min(terms.luminance, 1e-6), wj),
                                  pow_scalar(loss_detail::clamp_min(terms.contrast_structure, 1e-6), wj))
                            : pow_scalar(loss_detail::clamp_min(terms.contrast_structure, 1e-6), wj);
        result = result.defined() ? mul(result, factor) : factor;
        if (j + 1 < M) {
            const int eh = x.height() & ~1, ew = x.width() & ~1;
            if (eh != x.height() || ew != x.width()) {
                x = crop(x, 0, 0, eh, ew);
                y = crop(y, 0, 0, eh, ew);
            }
            x = avg_pool2(x);
            y = avg_pool2(y);
        }
    }
    return result;
}

inline Tensor loss_ms_ssim(const Tensor& fused, const Tensor& ir_reg, const Tensor& vis) {
    const Tensor one(1, 1, 1, 1.0);
    return add(sub(one, msssim(fused, ir_reg)), sub(one, msssim(fused, vis)));
}

// ---------------------------------------------------------------------------
// Joint gradient loss (Sobel magnitude, replicate border)
// ---------------------------------------------------------------------------

inline Tensor sobel_magnitude(const Tensor& image) {
    check(image.channels() == 1, "sobel_magnitude: expected single channel");
    static const double gx[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    static const double gy[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
    Tensor w(3, 3, 2);
    for (int i = 0; i < 9; ++i) {
        w.value()[static_cast<size_t>(i) * 2 + 0] = gx[i];
        w.value()[static_cast<size_t>(i) * 2 + 1] = gy[i];
    }
    const Tensor g = conv2d(pad_replicate(image, 1, 1, 1, 1), w, Tensor(), 1, 2, 1, false);
    const Tensor gxs = slice_channels(g, 0, 1), gys = slice_channels(g, 1, 2);
    return sqrt_t(add(mul(gxs, gxs), mul(gys, gys)), 1e-12);
}

inline Tensor loss_jgrad(const Tensor& fused, const Tensor& ir_reg, const Tensor& vis) {
    const Tensor target = maximum(sobel_magnitude(ir_reg), sobel_magnitude(vis));
    return mean_all(abs_t(sub(sobel_magnitude(fused), target)));
}

// ---------------------------------------------------------------------------
// Saliency-weighted intensity loss
// ---------------------------------------------------------------------------

// Histogram-contrast saliency over 256 uniform bins on [0,1], min-max
// normalized. A constant image has no contrast; its map is all 0.5 by
// convention. Not differentiable; used as fixed weights.
inline Tensor saliency_map(const Tensor& image) {
    check(image.channels() == 1, "saliency_map: expected single channel");
    const int n = image.size();
    std::vector<double> hist(256, 0.0);
    std::vector<int> bins(n);
    for (int i = 0; i < n; ++i) {
        const double v = std::clamp(image.value()[i], 0.0, 1.0);
        const int b = static_cast<int>(std::lround(v * 255.0));
        bins[i] = b;
        hist[b] += 1.0 / n;
    }
    // S(b) = sum_v hist(v) * |b - v| / 255 via prefix sums.
    std::vector<double> cum_p(257, 0.0), cum_pv(257, 0.0);
    for (int v = 0; v < 256; ++v) {
        cum_p[v + 1] = cum_p[v] + hist[v];
        cum_pv[v + 1] = cum_pv[v] + hist[v] * v;
    }
    std::vector<double> sal(256);
    for (int b = 0; b < 256; ++b) {
        const double below = b * cum_p[b + 1] - cum_pv[b + 1];
        const double above = (cum_pv[256] - cum_pv[b + 1]) - b * (cum_p[256] - cum_p[b + 1]);
        sal[b] = (below + above) / 255.0;
    }
    double lo = sal[bins[0]], hi = sal[bins[0]];
    for (int i = 0; i < n; ++i) {
        lo = std::min(lo, sal[bins[i]]);
        hi = std::max(hi, sal[bins[i]]);
    }
    Tensor out(image.height(), image.width(), 1);
    if (hi - lo < 1e-12) {
        for (auto& v : out.value()) v = 0.5;
    } else {
        for (int i = 0; i < n; ++i) out.value()[i] = (sal[bins[i]] - lo) / (hi - lo);
    }
    return out;
}

// Weighted intensity target with explicit weight maps (w_ir in [0,1],
// w_vis = 1 - w_ir); the weights do not carry gradient.
inline Tensor loss_svs_weighted(const Tensor& fused, const Tensor& ir_reg, const Tensor& vis,
                                const Tensor& w_ir) {
    check(w_ir.shape() == fused.shape(), "loss_svs: weight shape mismatch");
    const Tensor w_vis = sub(Tensor(w_ir.shape(), 1.0), w_ir);
    const Tensor target = add(mul(w_ir, ir_reg), mul(w_vis, vis));
    return mean_all(abs_t(sub(target, fused)));
}

inline Tensor svs_weight_map(const Tensor& ir_reg, const Tensor& vis, double eps = 1e-6) {
    const Tensor s_ir = saliency_map(ir_reg);
    const Tensor s_vis = saliency_map(vis);
    Tensor w(ir_reg.height(), ir_reg.width(), 1);
    for (int i = 0; i < w.size(); ++i)
        w.value()[i] = s_ir.value()[i] / (s_ir.value()[i] + s_vis.value()[i] + eps);
    return w;
}

inline Tensor loss_svs(const Tensor& fused, const Tensor& ir_reg, const Tensor& vis) {
    return loss_svs_weighted(fused, ir_reg, vis, svs_weight_map(ir_reg, vis));
}

inline Tensor loss_fusion_total(const Tensor& fused, const Tensor& ir_reg, const Tensor& vis,
                                const LossWeights& w) {
    return add(add(scale(loss_ms_ssim(fused, ir_reg, vis), w.lambda_ssim),
                   scale(loss_jgrad(fused, ir_reg, vis), w.lambda_jg)),
               scale(loss_svs(fused, ir_reg, vis), w.lambda_svs));
}

}  // namespace mrf
