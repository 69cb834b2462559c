#include <doctest.h>

#include <filesystem>

#include "mrf/field.hpp"
#include "mrf/io.hpp"
#include "mrf/rng.hpp"
#include "mrf/synth.hpp"
#include "oracles.hpp"

using namespace mrf;

TEST_CASE("warp with a zero field is the identity, exactly") {
    Rng rng(11);
    const Tensor img = oracle::random_tensor(9, 13, 1, rng);
    const Tensor zero(9, 13, 2);
    const Tensor out = warp(img, zero);
    CHECK(oracle::max_abs_diff(out, img) == 0.0);
}

TEST_CASE("warp shifts a horizontal ramp by one column in the interior") {
    const int h = 8, w = 8;
    Tensor img(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.at(y, x, 0) = static_cast<double>(x) / (w - 1);
    Tensor field(h, w, 2);
    for (int i = 0; i < h * w; ++i) field.value()[static_cast<size_t>(i) * 2] = 1.0;
    const Tensor out = warp(img, field);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w - 1; ++x)
            CHECK(out.at(y, x, 0) == doctest::Approx(img.at(y, x + 1, 0)).epsilon(1e-12));
    // Rightmost column replicates the border sample.
    for (int y = 0; y < h; ++y)
        CHECK(out.at(y, w - 1, 0) == doctest::Approx(img.at(y, w - 1, 0)).epsilon(1e-12));
}

TEST_CASE("warp replicates the border on a 4x4 checkerboard pushed off the right edge") {
    Tensor img(4, 4, 1);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) img.at(y, x, 0) = (x + y) % 2 ? 1.0 : 0.0;
    Tensor field(4, 4, 2);
    for (int i = 0; i < 16; ++i) field.value()[static_cast<size_t>(i) * 2] = 10.0;  // far right
    const Tensor out = warp(img, field);
    // Sampling clamps to column 3 for every output pixel.
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(out.at(y, x, 0) == img.at(y, 3, 0));
}

TEST_CASE("warp agrees with the brute-force bilinear oracle on random 8x8 cases") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor img = oracle::random_tensor(8, 8, 1, rng);
        const Tensor field = oracle::random_tensor(8, 8, 2, rng, -3.0, 3.0);
        CHECK(oracle::max_abs_diff(warp(img, field), oracle::warp_brute(img, field)) <= 1e-6);
    }
}

TEST_CASE("upsample_field keeps factor-1 fields unchanged and rejects non-powers of two") {
    Rng rng(3);
    const Tensor f = oracle::random_tensor(4, 4, 2, rng, -2.0, 2.0);
    CHECK(oracle::max_abs_diff(upsample_field(f, 1), f) == 0.0);
    CHECK_THROWS_AS(upsample_field(f, 3), contract_error);
    CHECK_THROWS_AS(upsample_field(f, 0), contract_error);
    CHECK_THROWS_AS(upsample_field(f, 6), contract_error);
}

TEST_CASE("upsample_field scales a constant field by the factor everywhere") {
    Tensor f(2, 2, 2);
    for (int i = 0; i < 4; ++i) {
        f.value()[static_cast<size_t>(i) * 2 + 0] = 1.0;
        f.value()[static_cast<size_t>(i) * 2 + 1] = 1.0;
    }
    const Tensor up = upsample_field(f, 2);
    CHECK(up.height() == 4);
    CHECK(up.width() == 4);
    for (int i = 0; i < up.size(); ++i) CHECK(up.value()[i] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("upsample_field matches an independent bilinear oracle on a corner impulse") {
    Tensor f(2, 2, 2);
    f.at(0, 0, 0) = 1.0;  // single nonzero corner
    const int factor = 2;
    const Tensor up = upsample_field(f, factor);
    // Oracle: half-pixel-center bilinear interpolation, then scale by factor.
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const double sy = (y + 0.5) / factor - 0.5;
            const double sx = (x + 0.5) / factor - 0.5;
            const double expect =
                factor * oracle::bilinear_sample(f.value(), 2, 2, 2, 0, sx, sy);
            CHECK(up.at(y, x, 0) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("integrate_velocity of zero velocity is zero") {
    Tensor v(6, 6, 2);
    const Tensor phi = integrate_velocity(v, 7);
    for (double x : phi.value()) CHECK(x == 0.0);
}

TEST_CASE("integrate_velocity of a constant velocity is that translation in the interior") {
    const int n = 16;
    Tensor v(n, n, 2);
    for (int i = 0; i < n * n; ++i) v.value()[static_cast<size_t>(i) * 2] = 3.0;
    const Tensor phi = integrate_velocity(v, 7);
    // Border band of width max|v| is distorted by replication; skip it.
    for (int y = 4; y < n - 4; ++y)
        for (int x = 4; x < n - 4; ++x) {
            CHECK(phi.at(y, x, 0) == doctest::Approx(3.0).epsilon(1e-5));
            CHECK(std::fabs(phi.at(y, x, 1)) <= 1e-5);
        }
}

TEST_CASE("integrate/invert are inverse to each other on slight-regime fields") {
    Rng rng(29);
    const ElasticParams ep{24.0, 1.0};
    for (int trial = 0; trial < 3; ++trial) {
        Tensor v = elastic_field(32, 32, ep, rng);
        // Add a small constant drift comparable to slight-regime translations.
        for (int i = 0; i < v.size(); i += 2) v.value()[i] += 0.3;
        const Tensor fwd = integrate_velocity(v, 7);
        const Tensor bwd = invert_field(v, 7);
        const Tensor residual = compose(fwd, bwd);
        CHECK(interior_mean_magnitude(residual, 2) <= 0.1);
    }
}

TEST_CASE("compose has zero as identity and adds constant translations") {
    Rng rng(5);
    const Tensor g = oracle::random_tensor(8, 8, 2, rng, -1.0, 1.0);
    const Tensor zero(8, 8, 2);
    CHECK(oracle::max_abs_diff(compose(zero, g), g) == 0.0);

    Tensor cf(8, 8, 2), cg(8, 8, 2);
    for (int i = 0; i < 64; ++i) {
        cf.value()[static_cast<size_t>(i) * 2 + 0] = 1.0;
        cg.value()[static_cast<size_t>(i) * 2 + 1] = 1.0;
    }
    const Tensor fg = compose(cf, cg);
    for (int y = 1; y < 6; ++y)
        for (int x = 1; x < 6; ++x) {
            CHECK(fg.at(y, x, 0) == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(fg.at(y, x, 1) == doctest::Approx(1.0).epsilon(1e-12));
        }
    // compose(f, zero) = zero + f sampled at identity = f.
    CHECK(oracle::max_abs_diff(compose(cf, zero), cf) == 0.0);
}

TEST_CASE("compose is associative on constant fields in the interior") {
    auto constant_field = [](double fx, double fy) {
        Tensor f(12, 12, 2);
        for (int i = 0; i < 144; ++i) {
            f.value()[static_cast<size_t>(i) * 2 + 0] = fx;
            f.value()[static_cast<size_t>(i) * 2 + 1] = fy;
        }
        return f;
    };
    const Tensor a = constant_field(1.0, 0.5), b = constant_field(-0.5, 1.0),
                 c = constant_field(0.25, -0.75);
    const Tensor lhs = compose(compose(a, b), c);
    const Tensor rhs = compose(a, compose(b, c));
    for (int y = 3; y < 9; ++y)
        for (int x = 3; x < 9; ++x)
            for (int ch = 0; ch < 2; ++ch)
                CHECK(std::fabs(lhs.at(y, x, ch) - rhs.at(y, x, ch)) <= 1e-6);
}

TEST_CASE("spatial_gradient matches direct differences") {
    Rng rng(41);
    SUBCASE("constant input has zero gradients") {
        const Tensor c(5, 7, 2, 0.37);
        const auto g = spatial_gradient(c);
        for (double v : g.dx.value()) CHECK(v == 0.0);
        for (double v : g.dy.value()) CHECK(v == 0.0);
    }
    SUBCASE("x ramp has unit x-gradient except the last column") {
        Tensor r(6, 6, 1);
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) r.at(y, x, 0) = x;
        const auto g = spatial_gradient(r);
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) {
                CHECK(g.dx.at(y, x, 0) == (x == 5 ? 0.0 : 1.0));
                CHECK(g.dy.at(y, x, 0) == 0.0);
            }
    }
    SUBCASE("random 3x3 input matches hand-computed differences") {
        const Tensor t = oracle::random_tensor(3, 3, 1, rng);
        const auto g = spatial_gradient(t);
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) {
                const double ex = x < 2 ? t.at(y, x + 1, 0) - t.at(y, x, 0) : 0.0;
                const double ey = y < 2 ? t.at(y + 1, x, 0) - t.at(y, x, 0) : 0.0;
                CHECK(g.dx.at(y, x, 0) == doctest::Approx(ex).epsilon(1e-12));
                CHECK(g.dy.at(y, x, 0) == doctest::Approx(ey).epsilon(1e-12));
            }
    }
}

TEST_CASE("field operations pass central finite-difference gradient checks") {
    Rng rng(53);
    const int n = 6;
    Tensor img = oracle::random_tensor(n, n, 1, rng);
    // Non-integer displacements keep the FD probe away from bilinear kinks.
    Tensor field = oracle::random_tensor(n, n, 2, rng, -1.3, 1.3);
    for (auto& v : field.value()) v += 0.01;

    SUBCASE("warp w.r.t. image and field") {
        Tensor field_c = field.detached_copy();
        auto build_img = [&]() { return mean_all(mul(warp(img, field_c), warp(img, field_c))); };
        auto r1 = oracle::fd_gradient_check(img, build_img, oracle::spread_coords(img.size(), 12));
        CHECK(r1.max_rel <= 1e-4);

        Tensor img_c = img.detached_copy();
        auto build_field = [&]() { return mean_all(mul(warp(img_c, field), warp(img_c, field))); };
        auto r2 =
            oracle::fd_gradient_check(field, build_field, oracle::spread_coords(field.size(), 12));
        CHECK(r2.max_rel <= 1e-4);
    }
    SUBCASE("compose w.r.t. both fields") {
        Tensor other = oracle::random_tensor(n, n, 2, rng, -1.0, 1.0);
        auto build = [&]() { return mean_all(mul(compose(field, other), compose(field, other))); };
        auto r = oracle::fd_gradient_check(field, build, oracle::spread_coords(field.size(), 10));
        CHECK(r.max_rel <= 1e-4);
        auto build2 = [&]() { return mean_all(mul(compose(other, field), compose(other, field))); };
        auto r2 = oracle::fd_gradient_check(field, build2, oracle::spread_coords(field.size(), 10));
        CHECK(r2.max_rel <= 1e-4);
    }
    SUBCASE("integrate_velocity w.r.t. velocity") {
        Tensor vel = oracle::random_tensor(n, n, 2, rng, -0.8, 0.8);
        auto build = [&]() {
            const Tensor phi = integrate_velocity(vel, 4);
            return mean_all(mul(phi, phi));
        };
        auto r = oracle::fd_gradient_check(vel, build, oracle::spread_coords(vel.size(), 10));
        CHECK(r.max_rel <= 1e-4);
    }
    SUBCASE("upsample_field w.r.t. field") {
        Tensor small = oracle::random_tensor(3, 3, 2, rng, -1.0, 1.0);
        auto build = [&]() {
            const Tensor up = upsample_field(small, 2);
            return mean_all(mul(up, up));
        };
        auto r = oracle::fd_gradient_check(small, build, oracle::spread_coords(small.size(), 10));
        CHECK(r.max_rel <= 1e-4);
    }
    SUBCASE("spatial_gradient w.r.t. input") {
        auto build = [&]() {
            const auto g = spatial_gradient(img);
            return add(mean_all(mul(g.dx, g.dx)), mean_all(mul(g.dy, g.dy)));
        };
        auto r = oracle::fd_gradient_check(img, build, oracle::spread_coords(img.size(), 12));
        CHECK(r.max_rel <= 1e-4);
    }
}

TEST_CASE("field files round-trip losslessly at 32-bit precision") {
    Rng rng(71);
    Tensor f = oracle::random_tensor(7, 5, 2, rng, -8.0, 8.0);
    // Store exactly representable floats so the round trip is bit-lossless.
    for (auto& v : f.value()) v = static_cast<double>(static_cast<float>(v));
    const std::string path = (std::filesystem::temp_directory_path() / "mrf_field_rt.bin").string();
    save_field(path, f);
    const Tensor back = load_field(path);
    CHECK(back.shape() == f.shape());
    CHECK(oracle::max_abs_diff(back, f) == 0.0);
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".meta");
}

TEST_CASE("warp rejects mismatched shapes") {
    const Tensor img(8, 8, 1);
    const Tensor small(4, 4, 2);
    CHECK_THROWS_AS(warp(img, small), contract_error);
    const Tensor onechan(8, 8, 1);
    CHECK_THROWS_AS(warp(img, onechan), contract_error);
}
