// Clean-room reference implementations of the image-quality measures used
// as cross-check oracles. They follow the published algorithm descriptions
// directly with plain nested loops and share no code with the library.
#pragma once

#include <cmath>
#include <vector>

#include "mrf/tensor.hpp"

namespace refimpl {

struct Plane {
    std::vector<double> v;
    int h = 0, w = 0;
    double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
};

inline Plane from_tensor(const mrf::Tensor& t, double scale = 1.0) {
    Plane p;
    p.h = t.height();
    p.w = t.width();
    p.v.resize(static_cast<size_t>(p.h) * p.w);
    for (int i = 0; i < t.size(); ++i) p.v[i] = t.value()[i] * scale;
    return p;
}

inline Plane gauss_filter_valid(const Plane& in, int n, double sd) {
    std::vector<double> k(static_cast<size_t>(n) * n);
    const int r = n / 2;
    double sum = 0.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            k[static_cast<size_t>(y) * n + x] =
                std::exp(-((y - r) * (y - r) + (x - r) * (x - r)) / (2.0 * sd * sd));
            sum += k[static_cast<size_t>(y) * n + x];
        }
    Plane out;
    out.h = in.h - n + 1;
    out.w = in.w - n + 1;
    out.v.assign(static_cast<size_t>(out.h) * out.w, 0.0);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
            double acc = 0.0;
            for (int ky = 0; ky < n; ++ky)
                for (int kx = 0; kx < n; ++kx)
                    acc += k[static_cast<size_t>(ky) * n + kx] * in.at(y + ky, x + kx);
            out.at(y, x) = acc / sum;
        }
    return out;
}

inline Plane multiply(const Plane& a, const Plane& b) {
    Plane out = a;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
    return out;
}

// Single-scale SSIM: Gaussian window, K1=0.01 K2=0.03, range 1, valid map.
inline double ssim(const mrf::Tensor& ta, const mrf::Tensor& tb) {
    const Plane a = from_tensor(ta), b = from_tensor(tb);
    const int m = std::min(a.h, a.w);
    const int win = std::min(11, m % 2 == 0 ? m - 1 : m);
    const double sd = 1.5 * win / 11.0;
    const Plane mu1 = gauss_filter_valid(a, win, sd);
    const Plane mu2 = gauss_filter_valid(b, win, sd);
    const Plane saa = gauss_filter_valid(multiply(a, a), win, sd);
    const Plane sbb = gauss_filter_valid(multiply(b, b), win, sd);
    const Plane sab = gauss_filter_valid(multiply(a, b), win, sd);
    const double c1 = 1e-4, c2 = 9e-4;
    double acc = 0.0;
    for (size_t i = 0; i < mu1.v.size(); ++i) {
        const double m1 = mu1.v[i], m2 = mu2.v[i];
        const double v1 = saa.v[i] - m1 * m1, v2 = sbb.v[i] - m2 * m2;
        const double cov = sab.v[i] - m1 * m2;
        acc += ((2 * m1 * m2 + c1) * (2 * cov + c2)) /
               ((m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2));
    }
    return acc / mu1.v.size();
}

// Per-scale luminance / contrast-structure means for MS-SSIM.
inline void ssim_terms(const Plane& a, const Plane& b, int win, double sd, double& l_mean,
                       double& cs_mean) {
    const Plane mu1 = gauss_filter_valid(a, win, sd);
    const Plane mu2 = gauss_filter_valid(b, win, sd);
    const Plane saa = gauss_filter_valid(multiply(a, a), win, sd);
    const Plane sbb = gauss_filter_valid(multiply(b, b), win, sd);
    const Plane sab = gauss_filter_valid(multiply(a, b), win, sd);
    const double c1 = 1e-4, c2 = 9e-4;
    double lacc = 0.0, csacc = 0.0;
    for (size_t i = 0; i < mu1.v.size(); ++i) {
        const double m1 = mu1.v[i], m2 = mu2.v[i];
        const double v1 = saa.v[i] - m1 * m1, v2 = sbb.v[i] - m2 * m2;
        const double cov = sab.v[i] - m1 * m2;
        lacc += (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
        csacc += (2 * cov + c2) / (v1 + v2 + c2);
    }
    l_mean = lacc / mu1.v.size();
    cs_mean = csacc / mu1.v.size();
}

inline Plane halve(const Plane& in) {
    Plane out;
    out.h = (in.h & ~1) / 2;
    out.w = (in.w & ~1) / 2;
    out.v.resize(static_cast<size_t>(out.h) * out.w);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            out.at(y, x) = 0.25 * (in.at(2 * y, 2 * x) + in.at(2 * y, 2 * x + 1) +
                                   in.at(2 * y + 1, 2 * x) + in.at(2 * y + 1, 2 * x + 1));
    return out;
}

inline double msssim(const mrf::Tensor& ta, const mrf::Tensor& tb) {
    static const double kW[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    const int scales =
        std::max(1, std::min(5, static_cast<int>(std::floor(
                                    std::log2(std::min(ta.height(), ta.width()) / 8.0)))));
    double wsum = 0.0;
    for (int j = 0; j < scales; ++j) wsum += kW[j];
    Plane a = from_tensor(ta), b = from_tensor(tb);
    double result = 1.0;
    for (int j = 0; j < scales; ++j) {
        const int m = std::min(a.h, a.w);
        const int win = std::min(11, m % 2 == 0 ? m - 1 : m);
        double l = 0.0, cs = 0.0;
        ssim_terms(a, b, win, 1.5 * win / 11.0, l, cs);
        const double wj = kW[j] / wsum;
        if (j == scales - 1)
            result *= std::pow(std::max(l, 1e-6), wj) * std::pow(std::max(cs, 1e-6), wj);
        else
            result *= std::pow(std::max(cs, 1e-6), wj);
        if (j + 1 < scales) {
            a = halve(a);
            b = halve(b);
        }
    }
    return result;
}

// Pixel-domain VIF, four scales, sigma_nsq = 2 on the 0..255 range.
inline double vif(const mrf::Tensor& tref, const mrf::Tensor& tdis) {
    Plane ref = from_tensor(tref, 255.0), dis = from_tensor(tdis, 255.0);
    double num = 0.0, den = 0.0;
    for (int scale = 1; scale <= 4; ++scale) {
        const int n = (1 << (5 - scale)) + 1;
        const double sd = n / 5.0;
        if (scale > 1) {
            Plane rs = gauss_filter_valid(ref, n, sd);
            Plane ds = gauss_filter_valid(dis, n, sd);
            Plane r2, d2;
            r2.h = (rs.h + 1) / 2;
            r2.w = (rs.w + 1) / 2;
            r2.v.resize(static_cast<size_t>(r2.h) * r2.w);
            d2 = r2;
            for (int y = 0; y < r2.h; ++y)
                for (int x = 0; x < r2.w; ++x) {
                    r2.at(y, x) = rs.at(2 * y, 2 * x);
                    d2.at(y, x) = ds.at(2 * y, 2 * x);
                }
            ref = r2;
            dis = d2;
        }
        if (ref.h < n || ref.w < n) break;
        const Plane mu1 = gauss_filter_valid(ref, n, sd);
        const Plane mu2 = gauss_filter_valid(dis, n, sd);
        const Plane srr = gauss_filter_valid(multiply(ref, ref), n, sd);
        const Plane sdd = gauss_filter_valid(multiply(dis, dis), n, sd);
        const Plane srd = gauss_filter_valid(multiply(ref, dis), n, sd);
        for (size_t i = 0; i < mu1.v.size(); ++i) {
            double s1 = srr.v[i] - mu1.v[i] * mu1.v[i];
            double s2 = sdd.v[i] - mu2.v[i] * mu2.v[i];
            double s12 = srd.v[i] - mu1.v[i] * mu2.v[i];
            if (s1 < 0) s1 = 0;
            if (s2 < 0) s2 = 0;
            double g = s12 / (s1 + 1e-10);
            double sv = s2 - g * s12;
            if (s1 < 1e-10) {
                g = 0;
                sv = s2;
                s1 = 0;
            }
            if (s2 < 1e-10) {
                g = 0;
                sv = 0;
            }
            if (g < 0) {
                sv = s2;
                g = 0;
            }
            if (sv <= 1e-10) sv = 1e-10;
            num += std::log10(1 + g * g * s1 / (sv + 2.0));
            den += std::log10(1 + s1 / 2.0);
        }
    }
    return den > 0 ? num / den : 1.0;
}

// Xydeas-Petrovic edge preservation with the published constants.
inline double qabf(const mrf::Tensor& tf, const mrf::Tensor& ta, const mrf::Tensor& tb) {
    const int h = tf.height(), w = tf.width();
    auto edges = [&](const mrf::Tensor& t, std::vector<double>& g, std::vector<double>& alpha) {
        g.assign(static_cast<size_t>(h) * w, 0.0);
        alpha = g;
        static const int kx[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
        static const int ky[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double sx = 0, sy = 0;
                for (int j = 0; j < 3; ++j)
                    for (int i = 0; i < 3; ++i) {
                        const int yy = std::clamp(y + j - 1, 0, h - 1);
                        const int xx = std::clamp(x + i - 1, 0, w - 1);
                        sx += kx[j * 3 + i] * t.at(yy, xx, 0);
                        sy += ky[j * 3 + i] * t.at(yy, xx, 0);
                    }
                g[static_cast<size_t>(y) * w + x] = std::hypot(sx, sy);
                alpha[static_cast<size_t>(y) * w + x] = std::atan(sy / (sx == 0 ? 1e-12 : sx));
            }
    };
    std::vector<double> gA, aA, gB, aB, gF, aF;
    edges(ta, gA, aA);
    edges(tb, gB, aB);
    edges(tf, gF, aF);
    auto q = [](double gs, double as, double gf, double af) {
        double gq;
        if (gs == 0 && gf == 0)
            gq = 0;
        else if (gs > gf)
            gq = gf / gs;
        else
            gq = gs / gf;
        const double aq = 1.0 - std::fabs(as - af) / (3.14159265358979323846 / 2.0);
        const double qg = 0.9994 / (1.0 + std::exp(-15.0 * (gq - 0.5)));
        const double qa = 0.9879 / (1.0 + std::exp(-22.0 * (aq - 0.8)));
        return qg * qa;
    };
    double num = 0, den = 0;
    for (size_t i = 0; i < gA.size(); ++i) {
        num += q(gA[i], aA[i], gF[i], aF[i]) * gA[i] + q(gB[i], aB[i], gF[i], aF[i]) * gB[i];
        den += gA[i] + gB[i];
    }
    return den > 1e-12 ? num / den : 0.0;
}

}  // namespace refimpl
