#include <cmath>
#include <numeric>

#include "doctest.h"
#include "lrformer/cost.hpp"
#include "lrformer/errors.hpp"
#include "lrformer/gradcheck.hpp"
#include "lrformer/tensor.hpp"
#include "test_util.hpp"

using namespace lrf;
using lrf::test::max_abs_diff;
using lrf::test::random_tensor;

namespace {

// Independent references, written as naive loops.

std::vector<double> naive_matmul(const Tensor64& a, const Tensor64& b) {
    const std::size_t n = a.dim(0), k = a.dim(1), p = b.dim(1);
    std::vector<double> c(n * p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            long double s = 0;
            for (std::size_t q = 0; q < k; ++q) {
                s += static_cast<long double>(a.at({i, q})) * b.at({q, j});
            }
            c[i * p + j] = static_cast<double>(s);
        }
    }
    return c;
}

std::vector<double> naive_conv(const Tensor64& x, const Tensor64& w, const Tensor64& bias, std::size_t stride,
                               std::size_t pad, std::size_t groups) {
    const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t Co = w.dim(0), K = w.dim(2);
    const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
    const std::size_t cig = Ci / groups, cog = Co / groups;
    std::vector<double> y(B * Co * Ho * Wo, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    long double s = bias.data()[co];
                    const std::size_t g = co / cog;
                    for (std::size_t ci = 0; ci < cig; ++ci)
                        for (std::size_t ky = 0; ky < K; ++ky)
                            for (std::size_t kx = 0; kx < K; ++kx) {
                                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                                    continue;
                                s += static_cast<long double>(
                                         x.at({b, g * cig + ci, static_cast<std::size_t>(iy),
                                               static_cast<std::size_t>(ix)})) *
                                     w.at({co, ci, ky, kx});
                            }
                    y[((b * Co + co) * Ho + oy) * Wo + ox] = static_cast<double>(s);
                }
    return y;
}

// Per-pixel half-pixel bilinear formula.
double bilinear_at(const Tensor64& x, std::size_t c, std::size_t oy, std::size_t ox, std::size_t oh,
                   std::size_t ow) {
    const std::size_t H = x.dim(2), W = x.dim(3);
    auto src = [](std::size_t o, std::size_t in, std::size_t out) {
        const double s = (o + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
        return s < 0 ? 0.0 : s;
    };
    const double sy = src(oy, H, oh), sx = src(ox, W, ow);
    const auto y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
    const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const double fy = sy - y0, fx = sx - x0;
    return (1 - fy) * ((1 - fx) * x.at({0, c, y0, x0}) + fx * x.at({0, c, y0, x1})) +
           fy * ((1 - fx) * x.at({0, c, y1, x0}) + fx * x.at({0, c, y1, x1}));
}

}  // namespace

TEST_CASE("matmul identity and hand-computed cases") {
    Tensor64 eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto b = random_tensor({3, 4}, 1);
    CHECK(max_abs_diff(matmul(eye, b), b) == 0.0);

    Tensor64 a({2, 2}, {1, 2, 3, 4});
    Tensor64 ones({2, 1}, {1, 1});
    auto c = matmul(a, ones);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c.data()[0] == 3.0);
    CHECK(c.data()[1] == 7.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    auto a = random_tensor({5, 7}, 2, "a");
    auto b = random_tensor({7, 3}, 2, "b");
    auto ref = naive_matmul(a, b);
    CHECK(max_abs_diff<double>(matmul(a, b).data(), ref) < 1e-6);

    auto af = a.cast<float>();
    auto bf = b.cast<float>();
    CHECK(max_abs_diff<double>(matmul(af, bf).cast<double>().data(), ref) < 1e-6);
}

TEST_CASE("matmul broadcasts batch dims") {
    auto a = random_tensor({2, 3, 4, 5}, 3, "a");
    auto b = random_tensor({5, 2}, 3, "b");
    auto c = matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 3, 4, 2});
    auto a1 = reshape(a, {24, 5});
    CHECK(max_abs_diff<double>(c.data(), matmul(a1, b).data()) < 1e-12);

    auto b3 = random_tensor({3, 5, 2}, 4, "b3");
    auto c3 = matmul(a, b3);
    REQUIRE(c3.shape() == Shape{2, 3, 4, 2});
    // batch (1, 2): a[1,2] x b3[2]
    Tensor64 a12({4, 5}, std::vector<double>(a.data().begin() + (5 * 20), a.data().begin() + (6 * 20)));
    Tensor64 b32({5, 2}, std::vector<double>(b3.data().begin() + 20, b3.data().begin() + 30));
    auto ref = matmul(a12, b32);
    CHECK(max_abs_diff<double>(std::span<const double>(c3.data().data() + 5 * 8, 8), ref.data()) < 1e-12);

    CHECK_THROWS_AS(matmul(random_tensor({2, 3}, 1), random_tensor({4, 2}, 1)), DimensionError);
    CHECK_THROWS_AS(matmul(random_tensor({2, 2, 3}, 1), random_tensor({3, 3, 2}, 1)), DimensionError);
}

TEST_CASE("softmax values and stability") {
    auto u = softmax(Tensor64({4}, {0, 0, 0, 0}), 0);
    for (double v : u.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

    auto big = softmax(Tensor({2}, {1000.f, 1000.f}), 0);
    CHECK(big.data()[0] == doctest::Approx(0.5));
    CHECK(big.data()[1] == doctest::Approx(0.5));

    auto s = softmax(Tensor64({3}, {1, 2, 3}), 0);
    long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L), z = e1 + e2 + e3;
    CHECK(std::abs(s.data()[0] - static_cast<double>(e1 / z)) < 1e-7);
    CHECK(std::abs(s.data()[1] - static_cast<double>(e2 / z)) < 1e-7);
    CHECK(std::abs(s.data()[2] - static_cast<double>(e3 / z)) < 1e-7);
}

TEST_CASE("softmax rows sum to one and ignore additive shifts") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto x = random_tensor({3, 5, 4}, seed, "x", -5, 5);
        for (int axis : {0, 1, 2, -1}) {
            auto y = softmax(x, axis);
            const std::size_t ax = static_cast<std::size_t>(axis < 0 ? axis + 3 : axis);
            // sum along axis
            std::size_t inner = 1;
            for (std::size_t d = ax + 1; d < 3; ++d) inner *= x.shape()[d];
            const std::size_t len = x.shape()[ax];
            const std::size_t outer = x.numel() / (len * inner);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t c = 0; c < inner; ++c) {
                    double s = 0;
                    for (std::size_t i = 0; i < len; ++i) s += y.data()[(o * len + i) * inner + c];
                    CHECK(std::abs(s - 1.0) < 1e-6);
                }
            auto shifted = add(x, Tensor64::scalar(3.7));
            CHECK(max_abs_diff(softmax(shifted, axis), y) < 1e-6);
            for (double v : y.data()) {
                CHECK(v > 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("layer_norm examples") {
    Tensor64 one({4}, std::vector<double>(4, 1.0));
    Tensor64 zero({4}, std::vector<double>(4, 0.0));
    auto c = layer_norm(Tensor64({2, 4}, std::vector<double>(8, 3.5)), one, zero, 1e-6);
    for (double v : c.data()) CHECK(v == 0.0);

    Tensor64 g2({2}, {1, 1}), b2({2}, {0, 0});
    auto s = layer_norm(Tensor64({2}, {1, 3}), g2, b2, 1e-12);
    CHECK(s.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(s.data()[1] == doctest::Approx(1.0).epsilon(1e-9));

    Tensor64 g64(Shape{64}, 1.0), b64(Shape{64}, 0.0);
    auto r = layer_norm(random_tensor({64}, 11, "x", -3, 3), g64, b64, 1e-6);
    double m = 0, v = 0;
    for (double x : r.data()) m += x;
    m /= 64;
    for (double x : r.data()) v += (x - m) * (x - m);
    v /= 64;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(v - 1.0) < 1e-4);

    CHECK_THROWS_AS(layer_norm(random_tensor({2, 3}, 1), g2, b2, 1e-6), DimensionError);
}

TEST_CASE("layer_norm is invariant to positive affine input maps") {
    Tensor64 g(Shape{16}, 1.0), b(Shape{16}, 0.0);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto x = random_tensor({3, 16}, seed);
        RandomStream rng(seed, "affine");
        const double a = rng.uniform(0.5, 4.0), shift = rng.uniform(-3, 3);
        auto y = add(scale(x, a), Tensor64::scalar(shift));
        CHECK(max_abs_diff(layer_norm(x, g, b, 1e-6), layer_norm(y, g, b, 1e-6)) < 1e-4);
    }
}

TEST_CASE("gelu matches the erf definition") {
    auto z = gelu(Tensor64({1}, {0.0}));
    CHECK(z.data()[0] == 0.0);
    auto big = gelu(Tensor64({2}, {12.0, -12.0}));
    CHECK(std::abs(big.data()[0] - 12.0) < 1e-12);
    CHECK(std::abs(big.data()[1]) < 1e-12);
    auto one = gelu(Tensor64({1}, {1.0}));
    const long double ref = 0.5L * (1.0L + std::erf(1.0L / std::sqrt(2.0L)));
    CHECK(std::abs(one.data()[0] - static_cast<double>(ref)) < 1e-7);
}

TEST_CASE("conv2d examples") {
    // 1x1 permutation of 3 channels
    auto x = random_tensor({1, 3, 4, 4}, 5);
    Tensor64 perm({3, 3, 1, 1}, {0, 0, 1, 1, 0, 0, 0, 1, 0});
    auto y = conv2d(x, perm, nullptr);
    const std::size_t plane = 16;
    const std::size_t src_of[3] = {2, 0, 1};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < plane; ++i) CHECK(y.data()[c * plane + i] == x.data()[src_of[c] * plane + i]);

    // depthwise box sum
    Tensor64 cst({1, 2, 5, 5}, std::vector<double>(50, 1.5));
    Tensor64 ones({2, 1, 3, 3}, std::vector<double>(18, 1.0));
    auto box = conv2d(cst, ones, nullptr, {.stride = 1, .pad = 1, .groups = 2});
    CHECK(box.at({0, 1, 2, 2}) == doctest::Approx(9 * 1.5));
    CHECK(box.at({0, 0, 0, 0}) == doctest::Approx(4 * 1.5));

    CHECK_THROWS_AS(conv2d(random_tensor({1, 3, 4, 4}, 1), random_tensor({4, 1, 3, 3}, 1), nullptr,
                           {.stride = 1, .pad = 1, .groups = 2}),
                    ConfigError);
}

TEST_CASE("conv2d matches the direct loop oracle") {
    struct Case {
        std::size_t ci, co, k, stride, pad, groups, h;
    };
    const Case cases[] = {{3, 4, 3, 1, 1, 1, 5}, {3, 4, 3, 2, 1, 1, 5}, {3, 6, 7, 4, 3, 1, 9},
                          {4, 4, 3, 1, 1, 4, 5}, {4, 6, 3, 2, 1, 2, 6}, {3, 5, 1, 1, 0, 1, 5},
                          {6, 6, 3, 2, 1, 6, 7}};
    std::uint64_t seed = 0;
    for (const auto& c : cases) {
        auto x = random_tensor({2, c.ci, c.h, c.h}, ++seed, "x");
        auto w = random_tensor({c.co, c.ci / c.groups, c.k, c.k}, seed, "w");
        auto b = random_tensor({c.co}, seed, "b");
        auto y = conv2d(x, w, &b, {.stride = c.stride, .pad = c.pad, .groups = c.groups});
        auto ref = naive_conv(x, w, b, c.stride, c.pad, c.groups);
        CHECK(max_abs_diff<double>(y.data(), ref) < 1e-6);
        auto yf = conv2d(x.cast<float>(), w.cast<float>(), nullptr, {c.stride, c.pad, c.groups});
        CHECK(yf.numel() == ref.size());
    }
    // spec case: random 1x3x5x5
    auto x = random_tensor({1, 3, 5, 5}, 99, "x");
    auto w = random_tensor({2, 3, 3, 3}, 99, "w");
    Tensor64 zb(Shape{2}, 0.0);
    auto yf = conv2d(x.cast<float>(), w.cast<float>(), nullptr, {1, 1, 1});
    CHECK(max_abs_diff<double>(yf.cast<double>().data(), naive_conv(x, w, zb, 1, 1, 1)) < 1e-6);
}

TEST_CASE("adaptive_avg_pool2d examples") {
    auto x = random_tensor({1, 2, 4, 4}, 3);
    CHECK(max_abs_diff(adaptive_avg_pool2d(x, 4, 4), x) == 0.0);

    auto c = adaptive_avg_pool2d(Tensor64({1, 1, 7, 5}, std::vector<double>(35, 2.25)), 3, 2);
    for (double v : c.data()) CHECK(v == doctest::Approx(2.25));

    std::vector<double> ramp(16);
    std::iota(ramp.begin(), ramp.end(), 0.0);
    auto p = adaptive_avg_pool2d(Tensor64({1, 1, 4, 4}, ramp), 2, 2);
    CHECK(p.data()[0] == 2.5);
    CHECK(p.data()[1] == 4.5);
    CHECK(p.data()[2] == 10.5);
    CHECK(p.data()[3] == 12.5);

    CHECK_THROWS_AS(adaptive_avg_pool2d(x, 0, 2), ConfigError);
}

TEST_CASE("adaptive pool bins cover every row") {
    for (std::size_t in = 1; in <= 40; ++in) {
        for (std::size_t out = 1; out <= in; ++out) {
            std::vector<int> hits(in, 0);
            std::size_t prev_begin = 0;
            for (std::size_t i = 0; i < out; ++i) {
                const auto b = pool_bin_begin(i, in, out), e = pool_bin_end(i, in, out);
                REQUIRE(b < e);
                REQUIRE(e <= in);
                CHECK(b >= prev_begin);
                prev_begin = b;
                for (auto r = b; r < e; ++r) ++hits[r];
            }
            CHECK(pool_bin_begin(0, in, out) == 0);
            CHECK(pool_bin_end(out - 1, in, out) == in);
            for (int h : hits) CHECK(h >= 1);
            if (in % out == 0) {
                for (int h : hits) CHECK(h == 1);
            }
        }
    }
}

TEST_CASE("bilinear_resize examples") {
    auto x = random_tensor({2, 3, 5, 6}, 8);
    auto same = bilinear_resize(x, 5, 6);
    CHECK(std::equal(same.data().begin(), same.data().end(), x.data().begin()));

    auto c = bilinear_resize(Tensor64({1, 1, 3, 2}, std::vector<double>(6, -0.75)), 7, 9);
    for (double v : c.data()) CHECK(v == doctest::Approx(-0.75));

    auto small = random_tensor({1, 2, 2, 2}, 9);
    auto up = bilinear_resize(small, 4, 4);
    double diff = 0;
    for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                diff = std::max(diff, std::abs(up.at({0, ch, i, j}) - bilinear_at(small, ch, i, j, 4, 4)));
    CHECK(diff < 1e-6);

    auto down = bilinear_resize(x, 3, 4);
    diff = 0;
    auto x0 = random_tensor({1, 3, 5, 6}, 8);
    auto d0 = bilinear_resize(x0, 3, 4);
    for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                diff = std::max(diff, std::abs(d0.at({0, ch, i, j}) - bilinear_at(x0, ch, i, j, 3, 4)));
    CHECK(diff < 1e-12);
    CHECK(down.shape() == Shape{2, 3, 3, 4});
}

TEST_CASE("backward basics") {
    auto x = random_tensor({3, 4}, 1);
    x.set_requires_grad(true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);

    Tensor64 a({2, 2}, {1, 2, 3, 4}, true);
    Tensor64 b({2, 2}, {5, 6, 7, 8}, true);
    backward(sum(matmul(a, b)));
    // d/dA sum(AB) = 1 * B^T, rows of ones times B^T: each entry (i,k) = sum_j B[k,j]
    CHECK(a.grad()[0] == 11.0);
    CHECK(a.grad()[1] == 15.0);
    CHECK(a.grad()[2] == 11.0);
    CHECK(a.grad()[3] == 15.0);
    CHECK(b.grad()[0] == 4.0);
    CHECK(b.grad()[1] == 4.0);
    CHECK(b.grad()[2] == 6.0);
    CHECK(b.grad()[3] == 6.0);
    CHECK(default_tape<double>().size() == 0);

    auto m = matmul(a, b);
    CHECK_THROWS_AS(backward(m), UsageError);
    CHECK(default_tape<double>().size() == 0);

    Tensor64 plain({2}, {1, 2});
    CHECK_THROWS_AS(backward(sum(plain)), UsageError);
}

TEST_CASE("tape records only with grad enabled") {
    auto x = random_tensor({4}, 1);
    x.set_requires_grad(true);
    {
        NoGradGuard guard;
        auto y = gelu(x);
        CHECK_FALSE(y.requires_grad());
        CHECK(default_tape<double>().size() == 0);
    }
    auto y = gelu(x);
    CHECK(y.requires_grad());
    CHECK(default_tape<double>().size() == 1);
    default_tape<double>().clear();
}

TEST_CASE("non-finite results are errors") {
    Tensor64 x({2}, {1e308, 1e308});
    CHECK_THROWS_AS(add(x, x), NumericalError);
}

TEST_CASE("finite_diff_grad examples") {
    auto x = random_tensor({5}, 2);
    auto g = finite_diff_grad<double>([](const Tensor64& t) { return sum(t).item(); }, x, 1e-4);
    for (double v : g.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    Tensor64 q({2}, {1, 2});
    auto gq = finite_diff_grad<double>([](const Tensor64& t) { return sum(mul(t, t)).item(); }, q, 1e-4);
    CHECK(std::abs(gq.data()[0] - 2.0) < 1e-6);
    CHECK(std::abs(gq.data()[1] - 4.0) < 1e-6);
}

TEST_CASE("finite differences agree with backward on a two-layer MLP") {
    auto x = random_tensor({4, 6}, 21, "x");
    auto w1 = random_tensor({6, 8}, 21, "w1");
    auto b1 = random_tensor({8}, 21, "b1");
    auto w2 = random_tensor({8, 3}, 21, "w2");
    auto loss = [&] { return mean(mul(matmul(gelu(add(matmul(x, w1), b1)), w2), matmul(gelu(add(matmul(x, w1), b1)), w2))); };
    auto r = check_gradients({{"x", x}, {"w1", w1}, {"b1", b1}, {"w2", w2}}, loss);
    CHECK(r.checked == 24 + 48 + 8 + 24);
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("every operator passes a finite-difference check") {
    GradCheckOptions opt;
    auto check = [&](std::vector<NamedTensor64> in, const std::function<Tensor64()>& f) {
        auto r = check_gradients(std::move(in), f, opt);
        INFO("worst " << r.worst);
        CHECK(r.max_rel_err < 1e-3);
    };
    auto w = random_tensor({2, 3, 5}, 100, "weights");  // random projection to make losses non-trivial
    auto x = random_tensor({2, 3, 5}, 101);
    auto y = random_tensor({5}, 102);
    check({{"x", x}, {"y", y}}, [&] { return sum(mul(add(x, y), w)); });
    check({{"x", x}, {"y", y}}, [&] { return sum(mul(mul(x, y), w)); });
    check({{"x", x}}, [&] { return sum(mul(scale(x, 2.5), w)); });
    auto a = random_tensor({2, 3, 4}, 103), b = random_tensor({4, 5}, 104);
    check({{"a", a}, {"b", b}}, [&] { return sum(mul(matmul(a, b), random_tensor({2, 3, 5}, 7))); });
    check({{"x", x}}, [&] { return sum(mul(softmax(x, 1), w)); });
    check({{"x", x}}, [&] { return sum(mul(softmax(x, -1), w)); });
    auto g = random_tensor({5}, 105), be = random_tensor({5}, 106);
    check({{"x", x}, {"g", g}, {"b", be}}, [&] { return sum(mul(layer_norm(x, g, be, 1e-6), w)); });
    check({{"x", x}}, [&] { return sum(mul(gelu(x), w)); });
    check({{"x", x}}, [&] { return sum(mul(reshape(permute(x, {2, 0, 1}), {2, 3, 5}), w)); });
    auto x2 = random_tensor({2, 2, 5}, 107);
    check({{"x", x}, {"x2", x2}}, [&] { return sum(mul(concat<double>({x, x2}, 1), random_tensor({2, 5, 5}, 9))); });

    auto img = random_tensor({1, 4, 6, 6}, 108);
    auto k = random_tensor({6, 2, 3, 3}, 109), kb = random_tensor({6}, 110);
    auto probe = random_tensor({1, 6, 3, 3}, 111);
    check({{"img", img}, {"k", k}, {"kb", kb}},
          [&] { return sum(mul(conv2d(img, k, &kb, {.stride = 2, .pad = 1, .groups = 2}), probe)); });
    auto dw = random_tensor({4, 1, 3, 3}, 112);
    auto probe_dw = random_tensor({1, 4, 6, 6}, 113);
    check({{"img", img}, {"dw", dw}}, [&] { return sum(mul(conv2d(img, dw, nullptr, {1, 1, 4}), probe_dw)); });
    auto pw = random_tensor({3, 4, 1, 1}, 114);
    auto probe_pw = random_tensor({1, 3, 6, 6}, 115);
    check({{"img", img}, {"pw", pw}}, [&] { return sum(mul(conv2d(img, pw, nullptr), probe_pw)); });
    auto probe_pool = random_tensor({1, 4, 4, 3}, 116);
    check({{"img", img}}, [&] { return sum(mul(adaptive_avg_pool2d(img, 4, 3), probe_pool)); });
    auto probe_up = random_tensor({1, 4, 9, 11}, 117);
    check({{"img", img}}, [&] { return sum(mul(bilinear_resize(img, 9, 11), probe_up)); });
    check({{"img", img}}, [&] { return mean(mul(img, img)); });
}

TEST_CASE("operators report MACs to an installed counter") {
    CostCounter counter;
    {
        CountingScope scope(counter);
        (void)matmul(random_tensor({2, 3, 4}, 1), random_tensor({4, 5}, 2));
        {
            CostContext ctx(CostCategory::attn_core, true);
            (void)matmul(random_tensor({3, 4}, 1), random_tensor({4, 2}, 2));
            (void)bilinear_resize(random_tensor({1, 2, 2, 2}, 1), 4, 4);
        }
        (void)conv2d(random_tensor({1, 64, 8, 8}, 1), random_tensor({64, 64, 1, 1}, 2), nullptr);
        (void)adaptive_avg_pool2d(random_tensor({1, 2, 4, 4}, 1), 2, 2);
        (void)gelu(random_tensor({10}, 1));
    }
    (void)matmul(random_tensor({3, 4}, 1), random_tensor({4, 2}, 2));  // not counted
    CHECK(counter.total(CostCategory::conv) == 2 * 3 * 4 * 5 + 64 * 64 * 64);
    CHECK(counter.total(CostCategory::attn_core) == 24);
    CHECK(counter.total(CostCategory::interp) == 4 * 32);
    CHECK(counter.attention_interp() == 4 * 32);
    CHECK(counter.total(CostCategory::other) == 32);
    CHECK(counter.total(CostCategory::norm_act) == 10);
    CHECK(counter.headline() == 120 + 64 * 64 * 64 + 24 + 128);
}
