#include <catch2/catch_amalgamated.hpp>

#include "dntsc/core/autodiff.hpp"
#include "dntsc/core/bvn.hpp"
#include "dntsc/core/nn.hpp"
#include "dntsc/core/normal.hpp"
#include "dntsc/core/ops.hpp"
#include "dntsc/core/rng.hpp"
#include "dntsc/core/tensor.hpp"
#include "test_util.hpp"

using namespace dntsc;
using test_util::grad_check;
using test_util::rel_err;

TEST_CASE("tensor basics", "[core]") {
    Tensor t(Shape{2, 3}, 1.5);
    REQUIRE(t.numel() == 6);
    REQUIRE(t.at({1, 2}) == 1.5);
    REQUIRE_THROWS_AS(Tensor(Shape{0, 2}), ShapeError);
    Tensor r = t.reshaped(Shape{3, 2});
    REQUIRE(r.dim(0) == 3);
    REQUIRE_THROWS_AS(t.reshaped(Shape{4, 2}), ShapeError);
}

TEST_CASE("rng determinism and statistics", "[core][rng]") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng r(7);
    const int n = 200000;
    std::vector<double> u(n);
    double mean = 0.0;
    for (auto& x : u) {
        x = r.uniform_open();
        REQUIRE(x > 0.0);
        REQUIRE(x < 1.0);
        mean += x;
    }
    mean /= n;
    REQUIRE(std::fabs(mean - 0.5) < 0.005);
    // KS against U(0,1): critical value at alpha=0.01 is 1.63/sqrt(n)
    REQUIRE(test_util::ks_statistic(u) < 1.63 / std::sqrt(static_cast<double>(n)));

    Rng g(9);
    double m1 = 0.0, m2 = 0.0;
    for (int i = 0; i < 200000; ++i) {
        const double x = g.normal();
        m1 += x;
        m2 += x * x;
    }
    m1 /= 200000;
    m2 /= 200000;
    REQUIRE(std::fabs(m1) < 0.01);
    REQUIRE(std::fabs(m2 - 1.0) < 0.02);

    // substreams with different tags decorrelate
    Rng s1 = substream(5, "a");
    Rng s2 = substream(5, "b");
    REQUIRE(s1.next_u64() != s2.next_u64());
}

TEST_CASE("autodiff elementwise and reduction gradients", "[core][autodiff]") {
    Rng rng(11);
    auto x = ad::leaf(Tensor::normal(Shape{3, 4}, 0.0, 1.0, rng));
    auto y = ad::leaf(Tensor::normal(Shape{3, 4}, 0.0, 1.0, rng));
    auto b = ad::leaf(Tensor::normal(Shape{1, 4}, 0.0, 1.0, rng));
    auto c = ad::leaf(Tensor::normal(Shape{3, 1}, 0.0, 1.0, rng));

    auto build = [&]() {
        using namespace ad;
        Var t = add(mul(x, y), b);  // row broadcast
        t = sub(t, mul(x, c));      // col broadcast
        t = add(gelu(t), softplus(neg(t)));
        t = mul(t, tanh_(scale(t, 0.3)));
        t = add(t, exp_(scale(t, 0.1)));
        t = add(t, sqrt_(add_const(square(t), 1.0)));
        return mean_all(t);
    };
    Rng pick(3);
    auto res = grad_check({x, y, b, c}, build, pick, 40);
    REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("autodiff matmul, softmax, layernorm, concat, slice", "[core][autodiff]") {
    Rng rng(12);
    auto a = ad::leaf(Tensor::normal(Shape{4, 5}, 0.0, 1.0, rng));
    auto w = ad::leaf(Tensor::normal(Shape{5, 6}, 0.0, 0.5, rng));
    auto g = ad::leaf(Tensor::full(Shape{6}, 1.0));
    auto be = ad::leaf(Tensor::zeros(Shape{6}));

    auto build = [&]() {
        using namespace ad;
        Var t = matmul(a, w);
        t = layer_norm(t, g, be);
        t = softmax_rows(t);
        Var left = slice_cols(t, 0, 3);
        Var right = slice_cols(t, 3, 3);
        Var joined = concat_cols({left, right});
        Var rows = concat_rows({slice_rows(joined, 0, 2), slice_rows(joined, 2, 2)});
        return sum_all(mul(rows, rows));
    };
    Rng pick(4);
    auto res = grad_check({a, w, g, be}, build, pick, 40);
    REQUIRE(res.max_rel_err < 1e-5);
}

TEST_CASE("autodiff conv and conv transpose gradients", "[core][autodiff]") {
    Rng rng(13);
    auto x = ad::leaf(Tensor::normal(Shape{6 * 8, 3}, 0.0, 1.0, rng));
    auto w = ad::leaf(Tensor::normal(Shape{3 * 3 * 3, 5}, 0.0, 0.3, rng));
    auto wt = ad::leaf(Tensor::normal(Shape{2 * 2 * 5, 4}, 0.0, 0.3, rng));

    auto build = [&]() {
        using namespace ad;
        Var t = conv2d(x, 6, 8, w, 3, 3, 2, 1);                 // -> 3x4x5
        t = relu(t);
        t = conv_transpose2d(t, 3, 4, wt, 2, 2, 2, 0, 6, 8);    // -> 6x8x4
        return sum_all(square(t));
    };
    Rng pick(5);
    auto res = grad_check({x, w, wt}, build, pick, 40);
    REQUIRE(res.max_rel_err < 1e-5);
}

TEST_CASE("permute_gather and gather_rows gradients", "[core][autodiff]") {
    Rng rng(14);
    auto x = ad::leaf(Tensor::normal(Shape{5, 3}, 0.0, 1.0, rng));
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    for (std::int64_t i = 14; i >= 0; --i) idx->push_back(i == 7 ? -1 : i);
    auto rows = std::make_shared<std::vector<std::int64_t>>(std::vector<std::int64_t>{4, 0, 0, 2});

    auto build = [&]() {
        using namespace ad;
        Var t = permute_gather(x, idx, Shape{5, 3});
        Var r = gather_rows(x, rows);
        return add(sum_all(square(t)), sum_all(mul(r, r)));
    };
    Rng pick(6);
    auto res = grad_check({x}, build, pick, 20);
    REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("normal cdf accuracy", "[core][normal]") {
    REQUIRE(norm_cdf(0.0) == Catch::Approx(0.5).epsilon(1e-14));
    REQUIRE(norm_cdf(0.5) == Catch::Approx(0.69146246127401312).epsilon(1e-13));
    REQUIRE(norm_cdf(-8.0) == Catch::Approx(6.22096057427178e-16).epsilon(1e-10));
    REQUIRE(norm_cdf(1.959963984540054) == Catch::Approx(0.975).epsilon(1e-12));
}

TEST_CASE("bivariate normal cdf against closed forms", "[core][bvn]") {
    for (double x : {-1.3, 0.0, 0.7, 2.2})
        for (double y : {-0.4, 0.1, 1.8})
            REQUIRE(bvn_cdf(x, y, 0.0) == Catch::Approx(norm_cdf(x) * norm_cdf(y)).epsilon(1e-13));
    REQUIRE(bvn_cdf(0.3, 1.1, 0.99999) ==
            Catch::Approx(norm_cdf(std::min(0.3, 1.1))).margin(1e-5));
    REQUIRE(bvn_cdf(0.3, 1.1, -0.99999) ==
            Catch::Approx(std::max(0.0, norm_cdf(0.3) + norm_cdf(1.1) - 1.0)).margin(1e-5));
    // P(X<=0, Y<=0) = 1/4 + asin(rho)/(2 pi)
    for (double rho : {-0.9, -0.5, -0.1, 0.2, 0.6, 0.95}) {
        REQUIRE(bvn_cdf(0.0, 0.0, rho) ==
                Catch::Approx(0.25 + std::asin(rho) / kTwoPi).epsilon(1e-12));
        REQUIRE(bvn_cdf(0.4, -0.2, rho) == Catch::Approx(bvn_cdf(-0.2, 0.4, rho)).epsilon(1e-12));
    }
}

TEST_CASE("bivariate normal cdf against Monte Carlo", "[core][bvn]") {
    Rng rng(99);
    const int n = 2000000;
    for (double rho : {-0.9, -0.3, 0.45, 0.9}) {
        const double x = rng.uniform(-1.5, 1.5);
        const double y = rng.uniform(-1.5, 1.5);
        const double c = std::sqrt(1.0 - rho * rho);
        long hits = 0;
        for (int i = 0; i < n; ++i) {
            const double z1 = rng.normal();
            const double z2 = rho * z1 + c * rng.normal();
            if (z1 <= x && z2 <= y) ++hits;
        }
        const double p_mc = static_cast<double>(hits) / n;
        const double p = bvn_cdf(x, y, rho);
        const double se = std::sqrt(p * (1.0 - p) / n);
        REQUIRE(std::fabs(p - p_mc) < 4.0 * se + 1e-9);
    }
}

TEST_CASE("bvn cdf partial derivatives match finite differences", "[core][bvn]") {
    const double h = 1e-6;
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const double x = rng.uniform(-2.0, 2.0);
        const double y = rng.uniform(-2.0, 2.0);
        const double rho = rng.uniform(-0.95, 0.95);
        double dx, dy, dr;
        bvn_cdf_derivs(x, y, rho, &dx, &dy, &dr);
        const double fdx = (bvn_cdf(x + h, y, rho) - bvn_cdf(x - h, y, rho)) / (2 * h);
        const double fdy = (bvn_cdf(x, y + h, rho) - bvn_cdf(x, y - h, rho)) / (2 * h);
        const double fdr = (bvn_cdf(x, y, rho + h) - bvn_cdf(x, y, rho - h)) / (2 * h);
        REQUIRE(rel_err(dx, fdx) < 1e-5);
        REQUIRE(rel_err(dy, fdy) < 1e-5);
        REQUIRE(rel_err(dr, fdr) < 1e-5);
    }
}

TEST_CASE("bilinear sample values and gradients", "[core][autodiff]") {
    Rng rng(21);
    auto grid = ad::leaf(Tensor::normal(Shape{4 * 6, 2}, 0.0, 1.0, rng));
    {
        Tensor coords(Shape{2, 2});
        coords[0] = 3.0;  // x
        coords[1] = 2.0;  // y
        coords[2] = 0.0;
        coords[3] = 0.0;
        auto out = ad::bilinear_sample(grid, 4, 6, ad::constant(coords));
        REQUIRE(out->value.at({0, 0}) == grid->value[(2 * 6 + 3) * 2]);
        REQUIRE(out->value.at({1, 1}) == grid->value[1]);
    }
    {
        Tensor coords(Shape{1, 2});
        coords[0] = -5.0;
        coords[1] = 1.0;
        auto out = ad::bilinear_sample(grid, 4, 6, ad::constant(coords));
        REQUIRE(out->value[0] == 0.0);
        REQUIRE(out->value[1] == 0.0);
    }
    auto coords = ad::leaf(Tensor(Shape{5, 2}));
    Rng jr(3);
    for (std::int64_t i = 0; i < 5; ++i) {
        coords->value[i * 2] = jr.uniform(0.3, 4.3);
        coords->value[i * 2 + 1] = jr.uniform(0.3, 2.7);
    }
    auto build = [&]() {
        return ad::sum_all(ad::square(ad::bilinear_sample(grid, 4, 6, coords)));
    };
    Rng pick(8);
    auto res = grad_check({grid, coords}, build, pick, 30);
    REQUIRE(res.max_rel_err < 1e-5);
}

TEST_CASE("swin block runs and is differentiable", "[core][nn]") {
    nn::ParamStore ps(123);
    nn::SwinBlock blk(ps, "blk", 8, 2, 2, 4, 8, 4, 2);  // 4x8 grid, window 4, shift 2
    Rng rng(2);
    auto x = ad::leaf(Tensor::normal(Shape{32, 8}, 0.0, 1.0, rng));
    auto build = [&]() { return ad::mean_all(ad::square(blk(x))); };
    std::vector<ad::Var> leaves = {x};
    for (auto& [name, v] : ps.all()) leaves.push_back(v);
    Rng pick(9);
    auto res = grad_check(leaves, build, pick, 60);
    REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("param store reproducibility and freezing", "[core][nn]") {
    nn::ParamStore a(77), b(77), c(78);
    nn::Linear la(a, "lin", 4, 3), lb(b, "lin", 4, 3), lc(c, "lin", 4, 3);
    for (std::int64_t i = 0; i < la.w->value.numel(); ++i) {
        REQUIRE(la.w->value[i] == lb.w->value[i]);
    }
    bool all_same = true;
    for (std::int64_t i = 0; i < la.w->value.numel(); ++i)
        if (la.w->value[i] != lc.w->value[i]) all_same = false;
    REQUIRE_FALSE(all_same);
    a.freeze("lin.");
    REQUIRE(a.is_frozen("lin.w"));
    REQUIRE_FALSE(a.is_frozen("other.w"));
    REQUIRE_THROWS_AS(a.get("nope"), ConfigError);
}
