// Synthetic misalignment: random affine warps composed with Gaussian-smoothed
// elastic displacement fields, with the exact ground-truth field returned for
// supervised evaluation.
//
// Affine warps operate in normalized [-1,1] coordinates (corner-aligned,
// x_n = 2x/(W-1) - 1) about the image center; backward mapping applies the
// matrix to output coordinates to find the source sample. Translations are
// therefore fractions of the half-span: tx = 0.01 moves content by about
// 0.01 * (W-1)/2 pixels.
#pragma once

#include <array>
#include <string>

#include "field.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace mrf {

struct AffineParams {
    double theta = 0.0;  // radians
    double tx = 0.0, ty = 0.0;
    double cx = 1.0, cy = 1.0;  // scale
    double sx = 0.0, sy = 0.0;  // shear
};

struct ElasticParams {
    double sigma = 24.0;  // Gaussian std in pixels
    double alpha = 1.0;   // magnitude scale
};

struct Range {
    double lo = 0.0, hi = 0.0;
};

struct DeformationRegime {
    std::string name;
    Range theta;  // radians
    Range tx, ty;
    Range sigma;
    Range alpha;

    static DeformationRegime slight() {
        return {"slight", {0, 0}, {-0.01, 0.01}, {-0.01, 0.01}, {24, 32}, {1.0, 1.0}};
    }
    static DeformationRegime moderate() {
        const double d = 5.0 * kPi / 180.0;
        return {"moderate", {-d, d}, {-0.02, 0.02}, {-0.02, 0.02}, {16, 32}, {1.0, 1.2}};
    }
    static DeformationRegime severe() {
        const double d = 10.0 * kPi / 180.0;
        return {"severe", {-d, d}, {-0.02, 0.05}, {-0.02, 0.05}, {16, 24}, {1.0, 1.2}};
    }
    // All-identity regime; synthesize_misaligned returns the input unchanged.
    static DeformationRegime none() {
        return {"none", {0, 0}, {0, 0}, {0, 0}, {24, 24}, {0.0, 0.0}};
    }
    static DeformationRegime by_name(const std::string& n) {
        if (n == "slight") return slight();
        if (n == "moderate") return moderate();
        if (n == "severe") return severe();
        if (n == "none") return none();
        throw contract_error("unknown regime: " + n);
    }

    static constexpr double kPi = 3.14159265358979323846;
};

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 affine_matrix(const AffineParams& p) {
    check(p.cx > 0 && p.cy > 0, "affine_matrix: scales must be positive");
    const double ct = std::cos(p.theta), st = std::sin(p.theta);
    return Mat3{{{p.cx * ct + p.sx * p.cx * st, -p.cx * st + p.sx * p.cx * ct, p.tx},
                 {p.sy * p.cy * ct + p.cy * st, -p.sy * p.cy * st + p.cy * ct, p.ty},
                 {0.0, 0.0, 1.0}}};
}

inline double mat3_det(const Mat3& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

// Displacement field (pixel units) equivalent to sampling through M in
// normalized coordinates: warp(image, f) == warp_affine(image, M).
inline Tensor affine_displacement_field(int h, int w, const Mat3& m) {
    Tensor f(h, w, 2);
    const double half_w = (w - 1) / 2.0, half_h = (h - 1) / 2.0;
    for (int y = 0; y < h; ++y) {
        const double yn = half_h > 0 ? (y - half_h) / half_h : 0.0;
        for (int x = 0; x < w; ++x) {
            const double xn = half_w > 0 ? (x - half_w) / half_w : 0.0;
            const double sxn = m[0][0] * xn + m[0][1] * yn + m[0][2];
            const double syn = m[1][0] * xn + m[1][1] * yn + m[1][2];
            f.at(y, x, 0) = sxn * half_w + half_w - x;
            f.at(y, x, 1) = syn * half_h + half_h - y;
        }
    }
    return f;
}

inline Tensor warp_affine(const Tensor& image, const Mat3& m) {
    check(std::fabs(mat3_det(m)) > 1e-12, "warp_affine: singular matrix");
    return warp(image, affine_displacement_field(image.height(), image.width(), m));
}

namespace detail {
// Separable Gaussian smoothing on a raw channel, kernel radius ceil(3*sigma),
// border replication.
inline void gaussian_smooth_inplace(std::vector<double>& data, int h, int w, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += kernel[i + radius];
    }
    for (auto& k : kernel) k /= ksum;

    std::vector<double> tmp(data.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * data[static_cast<size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
            tmp[static_cast<size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * tmp[static_cast<size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
            data[static_cast<size_t>(y) * w + x] = acc;
        }
}
}  // namespace detail

// Per-pixel uniform(-1,1) displacements, Gaussian-smoothed, scaled by alpha.
// Draw order: all of dx row-major, then all of dy.
inline Tensor elastic_field(int h, int w, const ElasticParams& p, Rng& rng) {
    check(h >= 1 && w >= 1, "elastic_field: empty size");
    check(p.sigma > 0, "elastic_field: sigma must be positive");
    check(p.alpha >= 0, "elastic_field: alpha must be non-negative");
    std::vector<double> dx(static_cast<size_t>(h) * w), dy(static_cast<size_t>(h) * w);
    for (auto& v : dx) v = rng.uniform(-1.0, 1.0);
    for (auto& v : dy) v = rng.uniform(-1.0, 1.0);
    detail::gaussian_smooth_inplace(dx, h, w, p.sigma);
    detail::gaussian_smooth_inplace(dy, h, w, p.sigma);
    Tensor f(h, w, 2);
    for (int i = 0; i < h * w; ++i) {
        f.value()[static_cast<size_t>(i) * 2 + 0] = p.alpha * dx[i];
        f.value()[static_cast<size_t>(i) * 2 + 1] = p.alpha * dy[i];
    }
    return f;
}

struct MisalignedSample {
    Tensor image;        // distorted output
    Tensor total_field;  // ground truth: warp(source, total_field) ~ image
    AffineParams affine;
    ElasticParams elastic;
};

// Parameter draw order is fixed (theta, tx, ty, sigma, alpha) so a given
// (regime, seed) pair is reproducible byte for byte.
inline MisalignedSample synthesize_misaligned(const Tensor& image,
                                              const DeformationRegime& regime, Rng& rng) {
    AffineParams ap;
    ap.theta = rng.uniform(regime.theta.lo, regime.theta.hi);
    ap.tx = rng.uniform(regime.tx.lo, regime.tx.hi);
    ap.ty = rng.uniform(regime.ty.lo, regime.ty.hi);
    ElasticParams ep;
    ep.sigma = rng.uniform(regime.sigma.lo, regime.sigma.hi);
    ep.alpha = rng.uniform(regime.alpha.lo, regime.alpha.hi);

    const Mat3 m = affine_matrix(ap);
    const Tensor affine_field = affine_displacement_field(image.height(), image.width(), m);
    const Tensor elastic = elastic_field(image.height(), image.width(), ep, rng);

    const bool identity_affine = ap.theta == 0 && ap.tx == 0 && ap.ty == 0;
    const bool zero_elastic = ep.alpha == 0;

    MisalignedSample out;
    out.affine = ap;
    out.elastic = ep;
    if (identity_affine && zero_elastic) {
        // Exact passthrough; avoids interpolation fuzz in the collapsed regime.
        out.image = image.detached_copy();
        out.total_field = Tensor(image.height(), image.width(), 2);
        return out;
    }
    const Tensor affine_warped = warp(image, affine_field);
    out.image = warp(affine_warped, elastic);
    // image(A(p + e(p))) corresponds to applying the elastic field first:
    // total(p) = e(p) + affine(p + e(p)).
    out.total_field = compose(affine_field, elastic);
    return out;
}

}  // namespace mrf
