#include <doctest.h>

#include "mrf/field.hpp"
#include "mrf/synth.hpp"
#include "oracles.hpp"

using namespace mrf;

namespace {
Tensor dot_image(int h, int w, int dy, int dx) {
    Tensor img(h, w, 1, 0.0);
    img.at(dy, dx, 0) = 1.0;
    return img;
}

std::pair<int, int> brightest(const Tensor& img) {
    int by = 0, bx = 0;
    double best = -1.0;
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            if (img.at(y, x, 0) > best) {
                best = img.at(y, x, 0);
                by = y;
                bx = x;
            }
    return {by, bx};
}
}  // namespace

TEST_CASE("affine_matrix reproduces the closed form") {
    SUBCASE("identity parameters give the identity matrix") {
        const Mat3 m = affine_matrix(AffineParams{});
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) CHECK(m[i][j] == doctest::Approx(i == j ? 1.0 : 0.0));
    }
    SUBCASE("pure quarter rotation") {
        AffineParams p;
        p.theta = DeformationRegime::kPi / 2;
        const Mat3 m = affine_matrix(p);
        // Cross-checked against composing a pure rotation matrix.
        CHECK(m[0][0] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(m[0][1] == doctest::Approx(-1.0));
        CHECK(m[1][0] == doctest::Approx(1.0));
        CHECK(m[1][1] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(m[2][2] == 1.0);
    }
    SUBCASE("pure scale lands on the diagonal") {
        AffineParams p;
        p.cx = 2.0;
        const Mat3 m = affine_matrix(p);
        CHECK(m[0][0] == doctest::Approx(2.0));
        CHECK(m[0][1] == doctest::Approx(0.0));
        CHECK(m[1][0] == doctest::Approx(0.0));
        CHECK(m[1][1] == doctest::Approx(1.0));
    }
    SUBCASE("non-positive scales are rejected") {
        AffineParams p;
        p.cx = 0.0;
        CHECK_THROWS_AS(affine_matrix(p), contract_error);
    }
}

TEST_CASE("warp_affine with the identity matrix is a no-op") {
    Rng rng(9);
    const Tensor img = oracle::random_tensor(8, 8, 1, rng);
    const Tensor out = warp_affine(img, affine_matrix(AffineParams{}));
    CHECK(oracle::max_abs_diff(out, img) <= 1e-12);
}

TEST_CASE("warp_affine rejects a singular matrix") {
    const Tensor img(8, 8, 1);
    Mat3 m{};  // all zeros
    CHECK_THROWS_AS(warp_affine(img, m), contract_error);
}

TEST_CASE("warp_affine translation moves content by tx * (W-1)/2 pixels") {
    // A bright dot at the center; tx at the slight-regime bound 0.01 on a
    // wide image so the shift is a whole pixel: 0.01 * (201-1)/2 = 1.
    const int w = 201, h = 9;
    Tensor img = dot_image(h, w, 4, 100);
    AffineParams p;
    p.tx = 0.01;
    const Tensor out = warp_affine(img, affine_matrix(p));
    // Sampling at x + 1 pulls content one pixel to the left.
    CHECK(brightest(out) == std::pair<int, int>{4, 99});
}

TEST_CASE("warp_affine quarter rotation moves a dot to the hand-rotated position") {
    const int n = 9;
    Tensor img = dot_image(n, n, 4, 7);  // right of center
    AffineParams p;
    p.theta = DeformationRegime::kPi / 2;
    const Tensor out = warp_affine(img, affine_matrix(p));
    // Sample position of output pixel (y, x) is the input rotated by +90
    // degrees in normalized coords: dot lands where sampling hits (4, 7):
    // xn' = -yn, yn' = xn => output dot at normalized (xn=-0, yn=...).
    // Hand evaluation: input dot at (row 4, col 7) = normalized (0.75, 0);
    // output (y, x) samples input at (-yn, xn): need (-yn, xn) = (0.75, 0)
    // => yn = -0.75, xn = 0 => output dot at (row 1, col 4).
    CHECK(brightest(out) == std::pair<int, int>{1, 4});
}

TEST_CASE("elastic_field with zero alpha is the zero field") {
    Rng rng(1);
    const Tensor f = elastic_field(16, 16, ElasticParams{24.0, 0.0}, rng);
    for (double v : f.value()) CHECK(v == 0.0);
}

TEST_CASE("elastic_field magnitudes stay within the smoothed input range") {
    Rng rng(2);
    const Tensor f = elastic_field(48, 48, ElasticParams{24.0, 1.0}, rng);
    for (double v : f.value()) CHECK(std::fabs(v) <= 1.0);
}

TEST_CASE("larger sigma yields smoother elastic fields across 20 seeds") {
    // Needs a domain comfortably larger than the kernels to be meaningful.
    int wins = 0;
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng_a(100 + seed), rng_b(100 + seed);
        const Tensor fa = elastic_field(224, 224, ElasticParams{16.0, 1.0}, rng_a);
        const Tensor fb = elastic_field(224, 224, ElasticParams{32.0, 1.0}, rng_b);
        auto mean_grad = [](const Tensor& f) {
            const auto g = spatial_gradient(f);
            double acc = 0.0;
            for (double v : g.dx.value()) acc += std::fabs(v);
            for (double v : g.dy.value()) acc += std::fabs(v);
            return acc / (2.0 * f.size());
        };
        if (mean_grad(fb) < mean_grad(fa)) ++wins;
    }
    CHECK(wins == 20);
}

TEST_CASE("synthesize_misaligned with a collapsed regime returns the input untouched") {
    Rng rng(31);
    const Tensor img = oracle::random_tensor(16, 16, 1, rng);
    Rng sample_rng(7);
    const auto s = synthesize_misaligned(img, DeformationRegime::none(), sample_rng);
    CHECK(oracle::max_abs_diff(s.image, img) == 0.0);
    for (double v : s.total_field.value()) CHECK(v == 0.0);
}

TEST_CASE("sampled parameters stay inside their regime ranges") {
    const auto slight = DeformationRegime::slight();
    const auto severe = DeformationRegime::severe();
    Tensor img(8, 8, 1, 0.5);
    for (int i = 0; i < 200; ++i) {
        Rng rng = Rng::split(900, i);
        const auto s = synthesize_misaligned(img, slight, rng);
        CHECK(s.affine.theta == 0.0);  // slight regime has no rotation
        CHECK(s.affine.tx >= -0.01);
        CHECK(s.affine.tx <= 0.01);
        CHECK(s.affine.ty >= -0.01);
        CHECK(s.affine.ty <= 0.01);
        CHECK(s.elastic.sigma >= 24.0);
        CHECK(s.elastic.sigma <= 32.0);
        CHECK(s.elastic.alpha == 1.0);

        Rng rng2 = Rng::split(901, i);
        const auto sv = synthesize_misaligned(img, severe, rng2);
        CHECK(std::fabs(sv.affine.theta) <= 10.0 * DeformationRegime::kPi / 180.0 + 1e-12);
        CHECK(sv.affine.tx >= -0.02);
        CHECK(sv.affine.tx <= 0.05);
        CHECK(sv.elastic.sigma >= 16.0);
        CHECK(sv.elastic.sigma <= 24.0);
        CHECK(sv.elastic.alpha >= 1.0);
        CHECK(sv.elastic.alpha <= 1.2);
    }
}

TEST_CASE("synthesis is deterministic for a fixed (image, regime, seed)") {
    Rng img_rng(77);
    const Tensor img = oracle::random_tensor(32, 32, 1, img_rng);
    Rng a(123), b(123);
    const auto s1 = synthesize_misaligned(img, DeformationRegime::moderate(), a);
    const auto s2 = synthesize_misaligned(img, DeformationRegime::moderate(), b);
    CHECK(oracle::max_abs_diff(s1.image, s2.image) == 0.0);
    CHECK(oracle::max_abs_diff(s1.total_field, s2.total_field) == 0.0);
}

// The distorted image passes through two interpolations (affine then
// elastic) while the replay through the composed field interpolates once,
// so the comparison needs smooth content; the 1e-3 budget covers the
// compounded-interpolation residual, not aliasing of per-pixel noise.
TEST_CASE("the returned total field reproduces the distorted image") {
    Rng img_rng(88);
    Tensor img(48, 48, 1, 0.3);
    for (int b = 0; b < 6; ++b) {
        const double cy = img_rng.uniform(5, 43), cx = img_rng.uniform(5, 43);
        const double r = img_rng.uniform(5, 12), amp = img_rng.uniform(-0.4, 0.5);
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x)
                img.at(y, x, 0) += amp * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) /
                                                  (2 * r * r));
    }
    for (auto& v : img.value()) v = std::clamp(v, 0.0, 1.0);
    for (const char* name : {"slight", "moderate", "severe"}) {
        Rng rng(55);
        const auto s = synthesize_misaligned(img, DeformationRegime::by_name(name), rng);
        const Tensor replay = warp(img, s.total_field);
        CHECK(oracle::mean_abs_diff(replay, s.image) <= 1e-3);
    }
}
