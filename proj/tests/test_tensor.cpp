#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "freetuner/rng.hpp"
#include "freetuner/tensor.hpp"
#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using ft::Shape;
using ft::Tensor;

namespace {
std::vector<double> random_vec(std::size_t n, ft::Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}
}  // namespace

TEST_CASE("tensor construction and accessors") {
    Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(t.rank() == 2);
    CHECK(t.dim(0) == 2);
    CHECK(t.dim(1) == 3);
    CHECK(t.numel() == 6);
    CHECK(t.at(4) == 5.0);
    CHECK_FALSE(t.on_tape());

    Tensor fill(Shape{4}, 0.5);
    for (std::size_t i = 0; i < 4; ++i) CHECK(fill.at(i) == 0.5);

    CHECK(Tensor::scalar(7.0).value() == 7.0);
    CHECK_FALSE(Tensor().defined());

    CHECK_THROWS_AS(Tensor(Shape{2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(Shape{-1}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(Shape{3}, std::vector<double>{1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}).value(), std::invalid_argument);
}

TEST_CASE("elementwise forward values") {
    ft::Rng rng(11);
    const Shape s{3, 4};
    const auto av = random_vec(12, rng), bv = random_vec(12, rng, 0.5, 2.0);
    Tensor a(s, av), b(s, bv);

    Tensor sum = ft::add(a, b), dif = ft::sub(a, b), prd = ft::mul(a, b), quo = ft::div(a, b);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(sum.at(i) == av[i] + bv[i]);
        CHECK(dif.at(i) == av[i] - bv[i]);
        CHECK(prd.at(i) == av[i] * bv[i]);
        CHECK(quo.at(i) == av[i] / bv[i]);
    }
    CHECK(ft::add_scalar(a, 3.0).at(5) == av[5] + 3.0);
    CHECK(ft::mul_scalar(a, -2.0).at(5) == av[5] * -2.0);
    CHECK(ft::neg(a).at(7) == -av[7]);
    CHECK(ft::exp(a).at(0) == std::exp(av[0]));
    CHECK(ft::log(b).at(0) == std::log(bv[0]));
    CHECK(ft::sqrt(b).at(3) == std::sqrt(bv[3]));
    CHECK(ft::relu(a).at(2) == std::max(0.0, av[2]));
    CHECK(ft::sigmoid(a).at(2) == doctest::Approx(1.0 / (1.0 + std::exp(-av[2]))).epsilon(1e-15));
    CHECK(ft::silu(a).at(2) == doctest::Approx(av[2] / (1.0 + std::exp(-av[2]))).epsilon(1e-15));
    CHECK(ft::abs(a).at(6) == std::abs(av[6]));
    CHECK(ft::clamp_min(a, 0.25).at(9) == std::max(0.25, av[9]));

    CHECK_THROWS_AS(ft::add(a, Tensor(Shape{4, 3}, 0.0)), std::invalid_argument);
}

TEST_CASE("reductions") {
    const std::vector<double> v{3, -1, 2, 7, 0, -5};
    Tensor m(Shape{2, 3}, v);
    CHECK(ft::sum(m).value() == 6.0);
    CHECK(ft::mean(m).value() == 1.0);
    Tensor rs = ft::row_sum(m);
    CHECK(rs.shape() == Shape{2});
    CHECK(rs.at(0) == 4.0);
    CHECK(rs.at(1) == 2.0);
    CHECK(ft::reduce_max(m).value() == 7.0);
    CHECK(ft::reduce_min(m).value() == -5.0);
    Tensor cm = ft::colwise_max(m);
    CHECK(cm.shape() == Shape{3});
    CHECK(cm.at(0) == 7.0);
    CHECK(cm.at(1) == 0.0);
    CHECK(cm.at(2) == 2.0);
    Tensor rm = ft::rowwise_max(m);
    CHECK(rm.at(0) == 3.0);
    CHECK(rm.at(1) == 7.0);
}

TEST_CASE("reshape and transpose") {
    Tensor m(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor r = ft::reshape(m, Shape{3, 2});
    CHECK(r.at(1) == 2.0);  // row-major layout preserved
    CHECK_THROWS_AS(ft::reshape(m, Shape{4, 2}), std::invalid_argument);
    Tensor t = ft::transpose(m);
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.at(0) == 1.0);
    CHECK(t.at(1) == 4.0);
    CHECK(t.at(4) == 3.0);
}

TEST_CASE("rowwise broadcast") {
    Tensor m(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor v(Shape{2}, std::vector<double>{10, 100});
    CHECK(ft::rows_add(m, v).at(4) == 105.0);
    CHECK(ft::rows_sub(m, v).at(0) == -9.0);
    CHECK(ft::rows_mul(m, v).at(5) == 600.0);
    CHECK(ft::rows_div(m, v).at(3) == doctest::Approx(0.04).epsilon(1e-15));
    CHECK_THROWS_AS(ft::rows_add(m, Tensor(Shape{3}, 1.0)), std::invalid_argument);
}

TEST_CASE("matmul against long-double loops") {
    ft::Rng rng(5);
    const int A = 7, B = 5, C = 9;
    auto av = random_vec(static_cast<std::size_t>(A) * B, rng);
    auto bv = random_vec(static_cast<std::size_t>(B) * C, rng);
    Tensor got = ft::matmul(Tensor(Shape{A, B}, av), Tensor(Shape{B, C}, bv));
    auto want = oracle::matmul_ld(av, bv, A, B, C);
    REQUIRE(got.numel() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(oracle::rel_err(got.at(i), want[i]) < 1e-13);
    CHECK_THROWS_AS(ft::matmul(Tensor(Shape{2, 3}, 0.0), Tensor(Shape{2, 3}, 0.0)),
                    std::invalid_argument);
}

TEST_CASE("gather_rows / select_columns / topk_values") {
    Tensor table(Shape{3, 2}, std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor g = ft::gather_rows(table, {2, 0, 2});
    CHECK(g.shape() == Shape{3, 2});
    CHECK(g.at(0) == 5.0);
    CHECK(g.at(3) == 2.0);
    CHECK(g.at(4) == 5.0);
    CHECK_THROWS_AS(ft::gather_rows(table, {3}), std::invalid_argument);

    Tensor m(Shape{2, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    Tensor sc = ft::select_columns(m, {3, 1});
    CHECK(sc.shape() == Shape{2, 2});
    CHECK(sc.at(0) == 4.0);
    CHECK(sc.at(1) == 2.0);
    CHECK(sc.at(2) == 8.0);

    Tensor v(Shape{6}, std::vector<double>{3, 9, 3, -1, 9, 5});
    Tensor tk = ft::topk_values(v, 3);
    CHECK(tk.shape() == Shape{3});
    CHECK(tk.at(0) == 9.0);
    CHECK(tk.at(1) == 9.0);
    CHECK(tk.at(2) == 5.0);
    CHECK_THROWS_AS(ft::topk_values(v, 7), std::invalid_argument);
    CHECK_THROWS_AS(ft::topk_values(v, 0), std::invalid_argument);
}

TEST_CASE("softmax_rows matches long-double oracle and sums to one") {
    ft::Rng rng(23);
    const int R = 6, C = 11;
    auto v = random_vec(static_cast<std::size_t>(R) * C, rng, -30.0, 30.0);
    Tensor got = ft::softmax_rows(Tensor(Shape{R, C}, v));
    auto want = oracle::softmax_rows_ld(v, R, C);
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(oracle::rel_err(got.at(i), want[i]) < 1e-13);
    for (int r = 0; r < R; ++r) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += got.at(static_cast<std::size_t>(r) * C + c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(ft::softmax_rows(Tensor()), std::invalid_argument);
}

TEST_CASE("softmax_rows is stable under large offsets") {
    Tensor a(Shape{1, 3}, std::vector<double>{1000.0, 1001.0, 1002.0});
    Tensor b(Shape{1, 3}, std::vector<double>{0.0, 1.0, 2.0});
    Tensor sa = ft::softmax_rows(a), sb = ft::softmax_rows(b);
    for (std::size_t i = 0; i < 3; ++i) CHECK(sa.at(i) == doctest::Approx(sb.at(i)).epsilon(1e-12));

    Tensor uniform = ft::softmax_rows(Tensor(Shape{1, 4}, std::vector<double>{0, 0, 0, 0}));
    for (std::size_t i = 0; i < 4; ++i) CHECK(uniform.at(i) == 0.25);

    Tensor extreme = ft::softmax_rows(Tensor(Shape{1, 2}, std::vector<double>{1000.0, 0.0}));
    CHECK(extreme.at(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(extreme.at(1) < 1e-300);
    CHECK(std::isfinite(extreme.at(0)));
}

TEST_CASE("conv2d_3x3 matches naive oracle") {
    ft::Rng rng(31);
    const int Ci = 3, H = 5, W = 6, Co = 4;
    auto xv = random_vec(static_cast<std::size_t>(Ci) * H * W, rng);
    auto wv = random_vec(static_cast<std::size_t>(Co) * Ci * 9, rng);
    auto bv = random_vec(static_cast<std::size_t>(Co), rng);
    Tensor got = ft::conv2d_3x3(Tensor(Shape{Ci, H, W}, xv), Tensor(Shape{Co, Ci, 3, 3}, wv),
                                Tensor(Shape{Co}, bv));
    CHECK(got.shape() == Shape{Co, H, W});
    auto want = oracle::conv3x3_naive(xv, wv, bv, Ci, H, W, Co);
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(oracle::rel_err(got.at(i), want[i]) < 1e-12);
}

TEST_CASE("pooling, upsampling and the depth rearrangements") {
    Tensor x(Shape{1, 2, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    Tensor p = ft::avg_pool2(x);
    CHECK(p.shape() == Shape{1, 1, 2});
    CHECK(p.at(0) == 3.5);
    CHECK(p.at(1) == 5.5);
    CHECK_THROWS_AS(ft::avg_pool2(Tensor(Shape{1, 3, 4}, 0.0)), std::invalid_argument);

    Tensor u = ft::upsample_nearest2(p);
    CHECK(u.shape() == Shape{1, 2, 4});
    CHECK(u.at(0) == 3.5);
    CHECK(u.at(1) == 3.5);
    CHECK(u.at(6) == 5.5);

    // space_to_depth channel layout: channel 4c + 2dy + dx.
    Tensor sd = ft::space_to_depth2(x);
    CHECK(sd.shape() == Shape{4, 1, 2});
    CHECK(sd.at(0) == 1.0);  // dy=0 dx=0
    CHECK(sd.at(1) == 3.0);
    CHECK(sd.at(2) == 2.0);  // dy=0 dx=1
    CHECK(sd.at(4) == 5.0);  // dy=1 dx=0
    CHECK(sd.at(7) == 8.0);  // dy=1 dx=1

    Tensor rt = ft::depth_to_space2(sd);
    REQUIRE(rt.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(rt.at(i) == x.at(i));
}

TEST_CASE("bilinear_resize conventions") {
    ft::Rng rng(7);
    const int C = 2, H = 5, W = 7;
    auto xv = random_vec(static_cast<std::size_t>(C) * H * W, rng);
    Tensor x(Shape{C, H, W}, xv);

    SUBCASE("identity at equal size") {
        Tensor y = ft::bilinear_resize(x, H, W);
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == doctest::Approx(x.at(i)).epsilon(1e-14));
    }
    SUBCASE("constant image stays constant at any size") {
        Tensor c(Shape{1, 3, 3}, 0.75);
        Tensor y = ft::bilinear_resize(c, 8, 5);
        for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == doctest::Approx(0.75).epsilon(1e-14));
    }
    SUBCASE("matches the align-corners-false sample oracle") {
        const int oh = 9, ow = 4;
        Tensor y = ft::bilinear_resize(x, oh, ow);
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    const double want = oracle::bilinear_sample_ld(
                        xv, H, W, static_cast<std::size_t>(c) * H * W, oy, ox, oh, ow);
                    CHECK(oracle::rel_err(y.at((static_cast<std::size_t>(c) * oh + oy) * ow + ox), want) < 1e-12);
                }
    }
    SUBCASE("linear ramp is reproduced exactly when upsampling") {
        // A ramp along x stays a ramp under bilinear interpolation.
        std::vector<double> ramp(16);
        for (int i = 0; i < 16; ++i) ramp[static_cast<std::size_t>(i)] = static_cast<double>(i % 4);
        Tensor y = ft::bilinear_resize(Tensor(Shape{1, 4, 4}, ramp), 4, 8);
        // Interior: source coord for ox is (ox+0.5)/2 - 0.5.
        CHECK(y.at(2) == doctest::Approx(0.75).epsilon(1e-14));
        CHECK(y.at(3) == doctest::Approx(1.25).epsilon(1e-14));
        CHECK(y.at(0) == doctest::Approx(0.0).epsilon(1e-14));  // clamped edge
        CHECK(y.at(7) == doctest::Approx(3.0).epsilon(1e-14));
    }
}

TEST_CASE("channel_stats matches naive loops") {
    ft::Rng rng(13);
    const int C = 4, H = 5, W = 3;
    auto fv = random_vec(static_cast<std::size_t>(C) * H * W, rng);
    Tensor f(Shape{C, H, W}, fv);

    SUBCASE("unweighted") {
        auto [mu, sigma] = ft::channel_stats(f);
        auto want = oracle::channel_stats_naive(fv, C, H * W);
        for (int c = 0; c < C; ++c) {
            CHECK(oracle::rel_err(mu.at(static_cast<std::size_t>(c)), want.mu[static_cast<std::size_t>(c)]) < 1e-12);
            CHECK(oracle::rel_err(sigma.at(static_cast<std::size_t>(c)), want.sigma[static_cast<std::size_t>(c)]) < 1e-12);
        }
    }
    SUBCASE("weighted") {
        auto wv = random_vec(static_cast<std::size_t>(H) * W, rng, 0.0, 1.0);
        auto [mu, sigma] = ft::channel_stats(f, Tensor(Shape{H, W}, wv));
        auto want = oracle::channel_stats_naive(fv, C, H * W, &wv);
        for (int c = 0; c < C; ++c) {
            CHECK(oracle::rel_err(mu.at(static_cast<std::size_t>(c)), want.mu[static_cast<std::size_t>(c)]) < 1e-11);
            CHECK(oracle::rel_err(sigma.at(static_cast<std::size_t>(c)), want.sigma[static_cast<std::size_t>(c)]) < 1e-11);
        }
    }
    SUBCASE("sigma clamp on constant channels") {
        Tensor flat(Shape{2, 2, 2}, 3.0);
        auto [mu, sigma] = ft::channel_stats(flat);
        CHECK(mu.at(0) == doctest::Approx(3.0));
        CHECK(sigma.at(0) == ft::kSigmaFloor);
        CHECK(sigma.at(1) == ft::kSigmaFloor);
    }
    SUBCASE("two-point channel") {
        auto [mu, sigma] = ft::channel_stats(Tensor(Shape{1, 1, 2}, std::vector<double>{0.0, 2.0}));
        CHECK(mu.at(0) == 1.0);
        CHECK(sigma.at(0) == 1.0);
    }
    SUBCASE("weight validation") {
        CHECK_THROWS_AS(ft::channel_stats(f, Tensor(Shape{H, W}, 0.0)), std::invalid_argument);
        std::vector<double> neg(static_cast<std::size_t>(H) * W, 1.0);
        neg[0] = -0.5;
        CHECK_THROWS_AS(ft::channel_stats(f, Tensor(Shape{H, W}, neg)), std::invalid_argument);
        CHECK_THROWS_AS(ft::channel_stats(f, Tensor(Shape{W, H}, 1.0)), std::invalid_argument);
    }
}

TEST_CASE("adain") {
    SUBCASE("maps content stats onto style stats") {
        // content channel has mean 0 / std 1; style has mean 5 / std 2.
        Tensor content(Shape{1, 1, 2}, std::vector<double>{-1.0, 1.0});
        Tensor style(Shape{1, 1, 2}, std::vector<double>{3.0, 7.0});
        Tensor out = ft::adain(content, style);
        CHECK(out.at(0) == doctest::Approx(3.0).epsilon(1e-12));
        CHECK(out.at(1) == doctest::Approx(7.0).epsilon(1e-12));  // content value 1 -> 7
    }
    SUBCASE("is a fixed point on itself") {
        ft::Rng rng(99);
        auto fv = random_vec(3 * 4 * 4, rng);
        Tensor f(Shape{3, 4, 4}, fv);
        Tensor out = ft::adain(f, f);
        for (std::size_t i = 0; i < f.numel(); ++i)
            CHECK(std::abs(out.at(i) - f.at(i)) < 1e-9);
    }
    SUBCASE("result carries the style statistics") {
        ft::Rng rng(100);
        Tensor c(Shape{2, 6, 6}, random_vec(72, rng));
        Tensor s(Shape{2, 3, 5}, random_vec(30, rng, -5.0, 5.0));
        auto [mu_s, sig_s] = ft::channel_stats(s);
        auto [mu_o, sig_o] = ft::channel_stats(ft::adain(c, s));
        for (int ch = 0; ch < 2; ++ch) {
            CHECK(mu_o.at(static_cast<std::size_t>(ch)) == doctest::Approx(mu_s.at(static_cast<std::size_t>(ch))).epsilon(1e-9));
            CHECK(sig_o.at(static_cast<std::size_t>(ch)) == doctest::Approx(sig_s.at(static_cast<std::size_t>(ch))).epsilon(1e-9));
        }
    }
    SUBCASE("channel mismatch is rejected") {
        CHECK_THROWS_AS(ft::adain(Tensor(Shape{2, 2, 2}, 0.0), Tensor(Shape{3, 2, 2}, 0.0)),
                        std::invalid_argument);
    }
}

TEST_CASE("pca") {
    SUBCASE("recovers a dominant axis") {
        // Points spread along (1,1)/sqrt(2) with tiny orthogonal noise.
        ft::Rng rng(42);
        const int N = 40;
        std::vector<double> rows(static_cast<std::size_t>(N) * 2);
        for (int n = 0; n < N; ++n) {
            const double t = rng.uniform(-3.0, 3.0), e = rng.uniform(-0.01, 0.01);
            rows[static_cast<std::size_t>(n) * 2] = t + e + 10.0;
            rows[static_cast<std::size_t>(n) * 2 + 1] = t - e - 4.0;
        }
        auto r = ft::pca_full(ft::Tensor(Shape{N, 2}, rows), 2);
        CHECK(r.mean.at(0) == doctest::Approx(10.0).epsilon(0.2));
        CHECK(r.mean.at(1) == doctest::Approx(-4.0).epsilon(0.2));
        // First component ~ (1,1)/sqrt(2), sign fixed positive.
        CHECK(r.components.at(0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-2));
        CHECK(r.components.at(1) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-2));
        CHECK(r.eigenvalues[0] > 100.0 * r.eigenvalues[1]);
        CHECK(r.eigenvalues[0] >= r.eigenvalues[1]);
        CHECK(r.eigenvalues[1] >= 0.0);
    }
    SUBCASE("projection equals centered dot products and components are orthonormal") {
        ft::Rng rng(43);
        const int N = 12, D = 5, K = 3;
        std::vector<double> rows(static_cast<std::size_t>(N) * D);
        for (auto& x : rows) x = rng.uniform(-1.0, 1.0);
        auto r = ft::pca_full(ft::Tensor(Shape{N, D}, rows), K);
        REQUIRE(r.projection.shape() == Shape{N, K});
        for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) {
                double dot = 0.0;
                for (int d = 0; d < D; ++d)
                    dot += r.components.at(static_cast<std::size_t>(i) * D + d) *
                           r.components.at(static_cast<std::size_t>(j) * D + d);
                CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
            }
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < K; ++k) {
                double want = 0.0;
                for (int d = 0; d < D; ++d)
                    want += (rows[static_cast<std::size_t>(n) * D + d] - r.mean.at(static_cast<std::size_t>(d))) *
                            r.components.at(static_cast<std::size_t>(k) * D + d);
                CHECK(r.projection.at(static_cast<std::size_t>(n) * K + k) == doctest::Approx(want).epsilon(1e-10));
            }
    }
    SUBCASE("rank-1 data reconstructs exactly with one component") {
        const int N = 10;
        std::vector<double> rows(static_cast<std::size_t>(N) * 2);
        for (int n = 0; n < N; ++n) {
            rows[static_cast<std::size_t>(n) * 2] = 1.0 + 0.5 * n;
            rows[static_cast<std::size_t>(n) * 2 + 1] = -2.0 + 1.5 * n;
        }
        auto r = ft::pca_full(ft::Tensor(Shape{N, 2}, rows), 1);
        for (int n = 0; n < N; ++n)
            for (int d = 0; d < 2; ++d) {
                const double recon = r.mean.at(static_cast<std::size_t>(d)) +
                                     r.projection.at(static_cast<std::size_t>(n)) * r.components.at(static_cast<std::size_t>(d));
                CHECK(std::abs(recon - rows[static_cast<std::size_t>(n) * 2 + d]) < 1e-9);
            }
    }
    SUBCASE("isotropic cloud has balanced explained variance") {
        ft::Rng rng(77);
        const int N = 4000, D = 3;
        std::vector<double> rows(static_cast<std::size_t>(N) * D);
        for (auto& x : rows) x = rng.normal();
        auto r = ft::pca_full(ft::Tensor(Shape{N, D}, rows), D);
        CHECK(r.eigenvalues[0] / r.eigenvalues[static_cast<std::size_t>(D - 1)] < 1.10);
    }
    SUBCASE("doubling the data doubles the projections") {
        ft::Rng rng(78);
        const int N = 9, D = 4;
        std::vector<double> rows(static_cast<std::size_t>(N) * D), twice(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            rows[i] = rng.uniform(-1.0, 1.0);
            twice[i] = 2.0 * rows[i];
        }
        Tensor p1 = ft::pca_project(Tensor(Shape{N, D}, rows), 2);
        Tensor p2 = ft::pca_project(Tensor(Shape{N, D}, twice), 2);
        for (std::size_t i = 0; i < p1.numel(); ++i)
            CHECK(p2.at(i) == doctest::Approx(2.0 * p1.at(i)).epsilon(1e-9));
    }
    SUBCASE("argument validation") {
        CHECK_THROWS_AS(ft::pca_project(Tensor(Shape{3, 2}, 0.0), 3), std::invalid_argument);
        CHECK_THROWS_AS(ft::pca_project(Tensor(Shape{3, 2}, 0.0), 0), std::invalid_argument);
        CHECK_THROWS_AS(ft::pca_project(Tensor(Shape{4}, 0.0), 1), std::invalid_argument);
    }
}

TEST_CASE("rng determinism and distribution sanity") {
    ft::Rng a(1234), b(1234), c(1235);
    for (int i = 0; i < 32; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(a.next_u64() != c.next_u64());

    ft::Rng r(77);
    double mn = 1.0, mx = 0.0, acc = 0.0;
    const int N = 20000;
    for (int i = 0; i < N; ++i) {
        const double u = r.uniform();
        mn = std::min(mn, u);
        mx = std::max(mx, u);
        acc += u;
    }
    CHECK(mn >= 0.0);
    CHECK(mx < 1.0);
    CHECK(acc / N == doctest::Approx(0.5).epsilon(0.02));

    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < N; ++i) {
        const double z = r.normal();
        m1 += z;
        m2 += z * z;
    }
    CHECK(m1 / N == doctest::Approx(0.0).epsilon(0.05));
    CHECK(m2 / N == doctest::Approx(1.0).epsilon(0.05));

    for (int i = 0; i < 100; ++i) CHECK(r.below(7) < 7);
}
