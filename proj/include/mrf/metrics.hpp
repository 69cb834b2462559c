// Evaluation metrics. Registration: MSE, zero-normalized cross correlation,
// mutual information. Fusion: cross correlation, summed mutual information,
// pixel-domain visual information fidelity, Gaussian-window SSIM and the
// Xydeas-Petrovic edge-preservation measure.
//
// All functions are plain deterministic scalar computations on [0,1]
// images; none of them share code with the differentiable loss paths.
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace mrf {
namespace metrics {

inline double mse(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "mse: shape mismatch");
    double acc = 0.0;
    for (int i = 0; i < a.size(); ++i) {
        const double d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    return acc / a.size();
}

// Global zero-normalized cross correlation; constant images correlate to 0.
inline double ncc(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "ncc: shape mismatch");
    const int n = a.size();
    double ma = 0.0, mb = 0.0;
    for (int i = 0; i < n; ++i) {
        ma += a.value()[i];
        mb += b.value()[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (int i = 0; i < n; ++i) {
        const double da = a.value()[i] - ma, db = b.value()[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    const double denom = std::sqrt(std::max(saa * sbb, 1e-24));
    return sab / denom;
}

// Mutual information in bits over a 32x32 joint histogram of [0,1] values.
inline double mutual_information(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "mutual_information: shape mismatch");
    constexpr int kBins = 32;
    const int n = a.size();
    std::vector<double> joint(kBins * kBins, 0.0);
    std::array<double, kBins> pa{}, pb{};
    auto bin_of = [](double v) {
        return std::min(kBins - 1, static_cast<int>(std::clamp(v, 0.0, 1.0) * kBins));
    };
    for (int i = 0; i < n; ++i) {
        const int ba = bin_of(a.value()[i]);
        const int bb = bin_of(b.value()[i]);
        joint[ba * kBins + bb] += 1.0 / n;
    }
    for (int i = 0; i < kBins; ++i)
        for (int j = 0; j < kBins; ++j) {
            pa[i] += joint[i * kBins + j];
            pb[j] += joint[i * kBins + j];
        }
    double mi = 0.0;
    for (int i = 0; i < kBins; ++i)
        for (int j = 0; j < kBins; ++j) {
            const double p = joint[i * kBins + j];
            if (p > 0.0) mi += p * std::log2(p / (pa[i] * pb[j]));
        }
    return mi;
}

inline double cc_fusion(const Tensor& fused, const Tensor& ir, const Tensor& vis) {
    return 0.5 * (ncc(fused, ir) + ncc(fused, vis));
}

inline double mi_fusion(const Tensor& fused, const Tensor& ir, const Tensor& vis) {
    return mutual_information(fused, ir) + mutual_information(fused, vis);
}

namespace detail {

// Valid-region convolution of a single-channel plane with a square kernel.
inline std::vector<double> conv_valid(const std::vector<double>& img, int h, int w,
                                      const std::vector<double>& ker, int k, int& oh, int& ow) {
    oh = h - k + 1;
    ow = w - k + 1;
    std::vector<double> out(static_cast<size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                    acc += ker[ky * k + kx] * img[static_cast<size_t>(y + ky) * w + x + kx];
            out[static_cast<size_t>(y) * ow + x] = acc;
        }
    return out;
}

inline std::vector<double> gaussian_kernel(int size, double sigma) {
    std::vector<double> k(static_cast<size_t>(size) * size);
    const int r = size / 2;
    double sum = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double dy = y - r, dx = x - r;
            k[static_cast<size_t>(y) * size + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            sum += k[static_cast<size_t>(y) * size + x];
        }
    for (auto& v : k) v /= sum;
    return k;
}

}  // namespace detail

// Standard single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01,
// K2=0.03, dynamic range 1, mean over the valid map.
inline double ssim(const Tensor& a, const Tensor& b) {
    check(a.shape() == b.shape(), "ssim: shape mismatch");
    const int h = a.height(), w = a.width();
    const int m = std::min(h, w);
    const int win = std::min(11, m % 2 == 0 ? m - 1 : m);
    const double sigma = 1.5 * win / 11.0;
    const auto g = detail::gaussian_kernel(win, sigma);
    const double c1 = 1e-4, c2 = 9e-4;

    const int n = h * w;
    std::vector<double> av(a.value()), bv(b.value());
    std::vector<double> aa(n), bb(n), ab(n);
    for (int i = 0; i < n; ++i) {
        aa[i] = av[i] * av[i];
        bb[i] = bv[i] * bv[i];
        ab[i] = av[i] * bv[i];
    }
    int oh = 0, ow = 0;
    const auto mu1 = detail::conv_valid(av, h, w, g, win, oh, ow);
    const auto mu2 = detail::conv_valid(bv, h, w, g, win, oh, ow);
    const auto saa = detail::conv_valid(aa, h, w, g, win, oh, ow);
    const auto sbb = detail::conv_valid(bb, h, w, g, win, oh, ow);
    const auto sab = detail::conv_valid(ab, h, w, g, win, oh, ow);
    double acc = 0.0;
    for (size_t i = 0; i < mu1.size(); ++i) {
        const double m1 = mu1[i], m2 = mu2[i];
        const double v1 = saa[i] - m1 * m1, v2 = sbb[i] - m2 * m2, cov = sab[i] - m1 * m2;
        acc += ((2 * m1 * m2 + c1) * (2 * cov + c2)) / ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
    }
    return acc / mu1.size();
}

inline double ssim_fusion(const Tensor& fused, const Tensor& ir, const Tensor& vis) {
    return 0.5 * (ssim(fused, ir) + ssim(fused, vis));
}

// Pixel-domain visual information fidelity over four scales with the
// published noise variance (2.0 on the 0..255 intensity scale).
inline double vif(const Tensor& reference, const Tensor& distorted) {
    check(reference.shape() == distorted.shape(), "vif: shape mismatch");
    const double sigma_nsq = 2.0;
    int h = reference.height(), w = reference.width();
    std::vector<double> ref(reference.size()), dis(distorted.size());
    for (int i = 0; i < reference.size(); ++i) {
        ref[i] = reference.value()[i] * 255.0;
        dis[i] = distorted.value()[i] * 255.0;
    }
    double num = 0.0, den = 0.0;
    for (int scale = 1; scale <= 4; ++scale) {
        const int n = (1 << (4 - scale + 1)) + 1;  // 17, 9, 5, 3
        const double sd = n / 5.0;
        const auto g = detail::gaussian_kernel(n, sd);
        int oh = 0, ow = 0;
        if (scale > 1) {
            // Smooth then subsample by 2.
            auto rs = detail::conv_valid(ref, h, w, g, n, oh, ow);
            auto ds = detail::conv_valid(dis, h, w, g, n, oh, ow);
            const int nh = (oh + 1) / 2, nw = (ow + 1) / 2;
            std::vector<double> r2(static_cast<size_t>(nh) * nw), d2(static_cast<size_t>(nh) * nw);
            for (int y = 0; y < nh; ++y)
                for (int x = 0; x < nw; ++x) {
                    r2[static_cast<size_t>(y) * nw + x] = rs[static_cast<size_t>(y) * 2 * ow + x * 2];
                    d2[static_cast<size_t>(y) * nw + x] = ds[static_cast<size_t>(y) * 2 * ow + x * 2];
                }
            ref = std::move(r2);
            dis = std::move(d2);
            h = nh;
            w = nw;
        }
        if (h < n || w < n) break;
        const auto mu1 = detail::conv_valid(ref, h, w, g, n, oh, ow);
        const auto mu2 = detail::conv_valid(dis, h, w, g, n, oh, ow);
        std::vector<double> rr(ref.size()), dd(ref.size()), rd(ref.size());
        for (size_t i = 0; i < ref.size(); ++i) {
            rr[i] = ref[i] * ref[i];
            dd[i] = dis[i] * dis[i];
            rd[i] = ref[i] * dis[i];
        }
        const auto srr = detail::conv_valid(rr, h, w, g, n, oh, ow);
        const auto sdd = detail::conv_valid(dd, h, w, g, n, oh, ow);
        const auto srd = detail::conv_valid(rd, h, w, g, n, oh, ow);
        for (size_t i = 0; i < mu1.size(); ++i) {
            double s1 = std::max(srr[i] - mu1[i] * mu1[i], 0.0);
            double s2 = std::max(sdd[i] - mu2[i] * mu2[i], 0.0);
            double s12 = srd[i] - mu1[i] * mu2[i];
            double gf = s12 / (s1 + 1e-10);
            double sv = s2 - gf * s12;
            if (s1 < 1e-10) {
                gf = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if (s2 < 1e-10) {
                gf = 0.0;
                sv = 0.0;
            }
            if (gf < 0.0) {
                sv = s2;
                gf = 0.0;
            }
            sv = std::max(sv, 1e-10);
            num += std::log10(1.0 + gf * gf * s1 / (sv + sigma_nsq));
            den += std::log10(1.0 + s1 / sigma_nsq);
        }
    }
    return den > 0.0 ? num / den : 1.0;
}

inline double vif_fusion(const Tensor& fused, const Tensor& ir, const Tensor& vis) {
    return 0.5 * (vif(ir, fused) + vif(vis, fused));
}

namespace detail {

struct EdgeMap {
    std::vector<double> strength, orientation;
    int h = 0, w = 0;
};

inline EdgeMap sobel_edges(const Tensor& img) {
    const int h = img.height(), w = img.width();
    EdgeMap e;
    e.h = h;
    e.w = w;
    e.strength.assign(static_cast<size_t>(h) * w, 0.0);
    e.orientation.assign(static_cast<size_t>(h) * w, 0.0);
    static const int gx[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    static const int gy[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sx = 0.0, sy = 0.0;
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const int iy = std::clamp(y + ky - 1, 0, h - 1);
                    const int ix = std::clamp(x + kx - 1, 0, w - 1);
                    const double v = img.at(iy, ix, 0);
                    sx += gx[ky * 3 + kx] * v;
                    sy += gy[ky * 3 + kx] * v;
                }
            e.strength[static_cast<size_t>(y) * w + x] = std::sqrt(sx * sx + sy * sy);
            e.orientation[static_cast<size_t>(y) * w + x] =
                std::atan(sy / (sx == 0.0 ? 1e-12 : sx));
        }
    return e;
}

inline double qabf_pair(const EdgeMap& src, const EdgeMap& fus, size_t i) {
    // Published constants of the edge-preservation model.
    constexpr double gamma_g = 0.9994, k_g = -15.0, sigma_g = 0.5;
    constexpr double gamma_a = 0.9879, k_a = -22.0, sigma_a = 0.8;
    constexpr double half_pi = 1.5707963267948966;
    const double ga = src.strength[i], gf = fus.strength[i];
    double gq;
    if (ga == 0.0 && gf == 0.0)
        gq = 0.0;
    else if (ga > gf)
        gq = gf / ga;
    else
        gq = ga / gf;
    const double aq = 1.0 - std::fabs(src.orientation[i] - fus.orientation[i]) / half_pi;
    const double qg = gamma_g / (1.0 + std::exp(k_g * (gq - sigma_g)));
    const double qa = gamma_a / (1.0 + std::exp(k_a * (aq - sigma_a)));
    return qg * qa;
}

}  // namespace detail

// Xydeas-Petrovic Q^{AB/F}: sigmoid-mapped strength and orientation
// preservation, weighted by source edge strength.
inline double qabf(const Tensor& fused, const Tensor& ir, const Tensor& vis) {
    check(fused.shape() == ir.shape() && fused.shape() == vis.shape(), "qabf: shape mismatch");
    const auto ea = detail::sobel_edges(ir);
    const auto eb = detail::sobel_edges(vis);
    const auto ef = detail::sobel_edges(fused);
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < ea.strength.size(); ++i) {
        const double qa = detail::qabf_pair(ea, ef, i);
        const double qb = detail::qabf_pair(eb, ef, i);
        num += qa * ea.strength[i] + qb * eb.strength[i];
        den += ea.strength[i] + eb.strength[i];
    }
    return den > 1e-12 ? num / den : 0.0;
}

}  // namespace metrics
}  // namespace mrf
