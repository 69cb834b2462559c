// Deformation-field algebra: backward warping, field resampling, vector
// integration and forward-difference gradients.
//
// Conventions (also documented in the README):
//   - Displacement fields are H x W x 2 tensors in pixel units,
//     channel 0 = x-displacement, channel 1 = y-displacement.
//   - Warping is backward: out(p) = in(p + field(p)), bilinear sampling,
//     out-of-domain coordinates clamped to the border (replication).
//   - Velocity fields share the displacement layout; integrate_velocity
//     turns a stationary velocity into a displacement by scaling and
//     squaring.
#pragma once

#include "tensor.hpp"

namespace mrf {

// Bilinear backward warp. Image may have any channel count (warped per
// channel); field must be H x W x 2 with matching spatial size.
// Differentiable in both image and field.
inline Tensor warp(const Tensor& image, const Tensor& field) {
    const Shape s = image.shape();
    check(field.channels() == 2, "warp: field must have 2 channels");
    check(field.height() == s.h && field.width() == s.w,
          "warp: image " + to_string(s) + " vs field " + to_string(field.shape()));

    std::vector<double> v(static_cast<size_t>(s.size()));
    const int H = s.h, W = s.w, C = s.c;
    const double* iv = image.value().data();
    const double* fv = field.value().data();
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const size_t fi = (static_cast<size_t>(y) * W + x) * 2;
            const double sx = x + fv[fi + 0];
            const double sy = y + fv[fi + 1];
            const double fx = std::floor(sx), fy = std::floor(sy);
            const double wx = sx - fx, wy = sy - fy;
            const int x0 = std::clamp(static_cast<int>(fx), 0, W - 1);
            const int x1 = std::clamp(static_cast<int>(fx) + 1, 0, W - 1);
            const int y0 = std::clamp(static_cast<int>(fy), 0, H - 1);
            const int y1 = std::clamp(static_cast<int>(fy) + 1, 0, H - 1);
            const double* p00 = iv + (static_cast<size_t>(y0) * W + x0) * C;
            const double* p01 = iv + (static_cast<size_t>(y0) * W + x1) * C;
            const double* p10 = iv + (static_cast<size_t>(y1) * W + x0) * C;
            const double* p11 = iv + (static_cast<size_t>(y1) * W + x1) * C;
            double* out = &v[(static_cast<size_t>(y) * W + x) * C];
            for (int ch = 0; ch < C; ++ch)
                out[ch] = (1 - wy) * ((1 - wx) * p00[ch] + wx * p01[ch]) +
                          wy * ((1 - wx) * p10[ch] + wx * p11[ch]);
        }
    }
    return Tensor::make(s, std::move(v), {image, field}, [s](Node& n) {
        auto& pi = *n.parents[0];
        auto& pf = *n.parents[1];
        const int H = s.h, W = s.w, C = s.c;
        const double* iv = pi.value.data();
        const double* fv = pf.value.data();
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const size_t fi = (static_cast<size_t>(y) * W + x) * 2;
                const double sx = x + fv[fi + 0];
                const double sy = y + fv[fi + 1];
                const double fx = std::floor(sx), fy = std::floor(sy);
                const double wx = sx - fx, wy = sy - fy;
                const int x0 = std::clamp(static_cast<int>(fx), 0, W - 1);
                const int x1 = std::clamp(static_cast<int>(fx) + 1, 0, W - 1);
                const int y0 = std::clamp(static_cast<int>(fy), 0, H - 1);
                const int y1 = std::clamp(static_cast<int>(fy) + 1, 0, H - 1);
                const size_t i00 = (static_cast<size_t>(y0) * W + x0) * C;
                const size_t i01 = (static_cast<size_t>(y0) * W + x1) * C;
                const size_t i10 = (static_cast<size_t>(y1) * W + x0) * C;
                const size_t i11 = (static_cast<size_t>(y1) * W + x1) * C;
                const double* gy = &n.grad[(static_cast<size_t>(y) * W + x) * C];
                double gsx = 0.0, gsy = 0.0;
                for (int ch = 0; ch < C; ++ch) {
                    const double g = gy[ch];
                    if (pi.requires_grad) {
                        pi.grad[i00 + ch] += g * (1 - wy) * (1 - wx);
                        pi.grad[i01 + ch] += g * (1 - wy) * wx;
                        pi.grad[i10 + ch] += g * wy * (1 - wx);
                        pi.grad[i11 + ch] += g * wy * wx;
                    }
                    // d(out)/d(sx) and d(out)/d(sy); clamped corners make the
                    // derivative vanish outside the domain automatically.
                    gsx += g * ((1 - wy) * (iv[i01 + ch] - iv[i00 + ch]) +
                                wy * (iv[i11 + ch] - iv[i10 + ch]));
                    gsy += g * ((1 - wx) * (iv[i10 + ch] - iv[i00 + ch]) +
                                wx * (iv[i11 + ch] - iv[i01 + ch]));
                }
                if (pf.requires_grad) {
                    pf.grad[fi + 0] += gsx;
                    pf.grad[fi + 1] += gsy;
                }
            }
        }
    });
}

// (f o g)(p) = g(p) + f(p + g(p)): the displacement equivalent of applying
// g first, then f.
inline Tensor compose(const Tensor& f, const Tensor& g) {
    check(f.shape() == g.shape(), "compose: shape mismatch");
    check(f.channels() == 2, "compose: fields must have 2 channels");
    return add(g, warp(f, g));
}

// Bilinear upsampling by a power-of-two factor with displacement values
// scaled by the factor, so the field expresses the same motion on the
// finer grid.
inline Tensor upsample_field(const Tensor& field, int factor) {
    check(field.channels() == 2, "upsample_field: field must have 2 channels");
    check(factor >= 1 && (factor & (factor - 1)) == 0,
          "upsample_field: factor must be a positive power of two, got " + std::to_string(factor));
    if (factor == 1) return field;
    return scale(upsample_bilinear(field, factor), static_cast<double>(factor));
}

// Scaling and squaring: phi <- v / 2^steps, then phi <- phi o phi, repeated.
inline Tensor integrate_velocity(const Tensor& velocity, int steps = 7) {
    check(velocity.channels() == 2, "integrate_velocity: velocity must have 2 channels");
    check(steps >= 1, "integrate_velocity: steps must be >= 1");
    Tensor phi = scale(velocity, std::ldexp(1.0, -steps));
    for (int i = 0; i < steps; ++i) phi = compose(phi, phi);
    return phi;
}

// Group inverse of integrate_velocity(v, steps).
inline Tensor invert_field(const Tensor& velocity, int steps = 7) {
    return integrate_velocity(neg(velocity), steps);
}

// Forward differences with zeros at the trailing border, per channel.
struct SpatialGradient {
    Tensor dx;  // a(y, x+1) - a(y, x), last column zero
    Tensor dy;  // a(y+1, x) - a(y, x), last row zero
};

inline Tensor forward_diff(const Tensor& a, int axis) {
    const Shape s = a.shape();
    check(axis == 0 || axis == 1, "forward_diff: axis must be 0 (x) or 1 (y)");
    check((axis == 0 ? s.w : s.h) >= 2, "forward_diff: spatial size too small");
    std::vector<double> v(static_cast<size_t>(s.size()), 0.0);
    const int H = s.h, W = s.w, C = s.c;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (axis == 0 && x == W - 1) continue;
            if (axis == 1 && y == H - 1) continue;
            const size_t i = (static_cast<size_t>(y) * W + x) * C;
            const size_t j = axis == 0 ? i + C : i + static_cast<size_t>(W) * C;
            for (int ch = 0; ch < C; ++ch) v[i + ch] = a.value()[j + ch] - a.value()[i + ch];
        }
    return Tensor::make(s, std::move(v), {a}, [s, axis](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const int H = s.h, W = s.w, C = s.c;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (axis == 0 && x == W - 1) continue;
                if (axis == 1 && y == H - 1) continue;
                const size_t i = (static_cast<size_t>(y) * W + x) * C;
                const size_t j = axis == 0 ? i + C : i + static_cast<size_t>(W) * C;
                for (int ch = 0; ch < C; ++ch) {
                    n.parents[0]->grad[j + ch] += n.grad[i + ch];
                    n.parents[0]->grad[i + ch] -= n.grad[i + ch];
                }
            }
    });
}

inline SpatialGradient spatial_gradient(const Tensor& a) {
    return SpatialGradient{forward_diff(a, 0), forward_diff(a, 1)};
}

// Mean Euclidean magnitude of a 2-channel field over the interior, with a
// border band excluded; used by inverse-consistency checks.
inline double interior_mean_magnitude(const Tensor& field, int border) {
    const Shape s = field.shape();
    check(field.channels() == 2, "interior_mean_magnitude: field must have 2 channels");
    double acc = 0.0;
    int count = 0;
    for (int y = border; y < s.h - border; ++y)
        for (int x = border; x < s.w - border; ++x) {
            const double fx = field.at(y, x, 0), fy = field.at(y, x, 1);
            acc += std::sqrt(fx * fx + fy * fy);
            ++count;
        }
    check(count > 0, "interior_mean_magnitude: border too wide");
    return acc / count;
}

}  // namespace mrf
