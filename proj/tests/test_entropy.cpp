#include <catch2/catch_amalgamated.hpp>

#include "dntsc/entropy.hpp"
#include "test_util.hpp"

using namespace dntsc;
using test_util::GmmSpec;
using test_util::grad_check;
using test_util::make_gmm;

TEST_CASE("latent bin pmf values and normalization", "[entropy]") {
    // high-precision oracle: Phi(1/2) - Phi(-1/2)
    REQUIRE(latent_bin_pmf(0, 0.0, 1.0) ==
            Catch::Approx(0.38292492254802621).epsilon(1e-12));
    double sum = 0.0;
    for (long t = -50; t <= 50; ++t) sum += latent_bin_pmf(t, 0.0, 1.0);
    REQUIRE(std::fabs(sum - 1.0) < 1e-12);
    // near-deterministic: all mass in the nearest bin
    REQUIRE(latent_bin_pmf(2, 2.3, kSigmaMin) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE_THROWS_AS(latent_bin_pmf(0, 0.0, 0.5 * kSigmaMin), ParamError);

    // full-support normalization for random (mu, sigma)
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const double mu = rng.uniform(-10.0, 10.0);
        const double sigma = rng.uniform(0.05, 4.0);
        double s = 0.0;
        const long c = std::lround(mu);
        for (long t = c - 60; t <= c + 60; ++t) s += latent_bin_pmf(t, mu, sigma);
        REQUIRE(std::fabs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("latent rate bits", "[entropy]") {
    GaussianParams p;
    p.h = 2;
    p.w = 2;
    p.c = 3;
    p.mu = Tensor(Shape{4, 3});
    p.sigma = Tensor(Shape{4, 3}, 1.0);
    Tensor y(Shape{4, 3});  // all at bin centers, mu = center
    RateReport rep = latent_rate_bits(y, p);
    const double per_elem = -std::log2(0.38292492254802621);
    REQUIRE(per_elem == Catch::Approx(1.3848665342909897).epsilon(1e-12));
    for (double tb : rep.token_bits) REQUIRE(tb == Catch::Approx(3 * per_elem).epsilon(1e-12));
    // total equals the sum of per-token sums exactly
    double tok_sum = 0.0;
    for (double tb : rep.token_bits) tok_sum += tb;
    REQUIRE(rep.latent_bits == tok_sum);
    // doubling sigma strictly increases total bits for y at bin centers
    GaussianParams p2 = p;
    p2.sigma = Tensor(Shape{4, 3}, 2.0);
    REQUIRE(latent_rate_bits(y, p2).latent_bits > rep.latent_bits);
}

TEST_CASE("total code rate", "[entropy]") {
    REQUIRE(total_code_rate(1000.0, 200.0) == 1100.0);
    REQUIRE(total_code_rate(0.0, 0.0) == 0.0);
    REQUIRE(total_code_rate(32268.0, 1000.0) == 32768.0);
    REQUIRE_THROWS_AS(total_code_rate(-1.0, 0.0), ParamError);
    RateReport rep;
    rep.latent_bits = 1234.5;
    rep.joint_hyper_bits = 77.25;
    REQUIRE(rep.total() == rep.latent_bits + 0.5 * rep.joint_hyper_bits);
}

TEST_CASE("joint hyper pdf", "[entropy]") {
    auto model = make_gmm(1, {{{1.0, 0.0, 0.0, 1.0, 1.0, 0.0}}});
    REQUIRE(model.pdf(0.0, 0.0, 0) == Catch::Approx(0.15915494309189535).epsilon(1e-5));
    // exchange-symmetric model
    auto sym = make_gmm(1, {{{0.5, 0.3, 0.3, 1.2, 1.2, 0.4}, {0.5, -0.8, -0.8, 0.7, 0.7, 0.4}}});
    for (double a : {-1.0, 0.2, 0.9})
        for (double b : {-0.5, 0.4}) {
            REQUIRE(sym.pdf(a, b, 0) == Catch::Approx(sym.pdf(b, a, 0)).epsilon(1e-12));
        }
    // density integrates to one (midpoint quadrature oracle over [-10,10]^2)
    auto m2 = make_gmm(1, {{{0.6, 0.5, -0.3, 1.1, 0.8, 0.6}, {0.4, -1.0, 0.7, 0.6, 1.4, -0.5}}});
    const int n = 500;
    const double hstep = 20.0 / n;
    double integral = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double z1 = -10.0 + (i + 0.5) * hstep;
            const double z2 = -10.0 + (j + 0.5) * hstep;
            integral += m2.pdf(z1, z2, 0) * hstep * hstep;
        }
    REQUIRE(std::fabs(integral - 1.0) < 1e-3);
}

TEST_CASE("joint hyper bin pmf", "[entropy]") {
    auto model = make_gmm(1, {{{1.0, 0.0, 0.0, 1.0, 1.0, 0.0}}});
    REQUIRE(model.bin_pmf(0, 0, 0) == Catch::Approx(0.14663149630841187).epsilon(1e-5));
    // product structure at rho=0 to high accuracy
    const double p1 = gauss_bin_pmf(0.0, 0.0, model.component(0, 0).s1);
    REQUIRE(model.bin_pmf(0, 0, 0) == Catch::Approx(p1 * p1).margin(1e-12));

    // bin masses over a wide box sum to 1 for random K=1 models
    Rng rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        GmmSpec spec{1.0, rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(0.4, 3.0),
                     rng.uniform(0.4, 3.0), rng.uniform(-0.9, 0.9)};
        auto m = make_gmm(1, {{spec}});
        double sum = 0.0;
        for (int t1 = -40; t1 <= 40; ++t1)
            for (int t2 = -40; t2 <= 40; ++t2) sum += m.bin_pmf(t1, t2, 0);
        REQUIRE(std::fabs(sum - 1.0) < 1e-5);
    }

    // marginalizing the joint bin mass over t2 matches the univariate
    // mixture bin mass of z1
    auto mk2 = make_gmm(1, {{{0.7, 0.4, -0.2, 1.0, 0.8, 0.5}, {0.3, -1.2, 0.9, 0.7, 1.3, -0.6}}});
    for (int t1 = -2; t1 <= 2; ++t1) {
        double marg = 0.0;
        for (int t2 = -40; t2 <= 40; ++t2) marg += mk2.bin_pmf(t1, t2, 0);
        REQUIRE(marg == Catch::Approx(mk2.marginal_bin_pmf(0, 0, t1)).margin(1e-7));
    }

    // correlated bin mass against a Monte Carlo oracle (3 standard errors)
    {
        auto mc_model = make_gmm(1, {{{1.0, 0.0, 0.0, 1.0, 1.0, 0.9}}});
        Rng mc(41);
        const int n = 1000000;
        long hits = 0;
        const double c = std::sqrt(1.0 - 0.9 * 0.9);
        for (int i = 0; i < n; ++i) {
            const double z1 = mc.normal();
            const double z2 = 0.9 * z1 + c * mc.normal();
            if (std::fabs(z1) <= 0.5 && std::fabs(z2) <= 0.5) ++hits;
        }
        const double p_mc = static_cast<double>(hits) / n;
        const double p = mc_model.bin_pmf(0, 0, 0);
        const double se = std::sqrt(p * (1.0 - p) / n);
        REQUIRE(std::fabs(p - p_mc) < 3.0 * se + 1e-4);
    }
}

TEST_CASE("joint hyper entropy bits", "[entropy]") {
    auto model = make_gmm(8, std::vector<std::vector<GmmSpec>>(
                                 8, {{1.0, 0.0, 0.0, 1.0, 1.0, 0.0}}));
    Tensor z1(Shape{8}), z2(Shape{8});
    const double bits = model.entropy_bits(z1, z2);
    REQUIRE(bits == Catch::Approx(22.157864548655835).epsilon(1e-4));
    // equals the sum of per-element terms exactly
    double manual = 0.0;
    for (int j = 0; j < 8; ++j) manual += -std::log2(model.bin_pmf(0.0, 0.0, j));
    REQUIRE(bits == manual);
    // a near-deterministic pair costs almost nothing
    auto tight = make_gmm(1, {{{1.0, 3.0, -2.0, 0.02, 0.02, 0.0}}});
    Tensor a(Shape{1}), b(Shape{1});
    a[0] = 3.0;
    b[0] = -2.0;
    REQUIRE(tight.entropy_bits(a, b) < 1e-6);
    REQUIRE_THROWS_AS(model.entropy_bits(Tensor(Shape{7}), z2), ShapeError);
}

TEST_CASE("mmse peer estimate", "[entropy]") {
    // K=1 closed form: z2* = m2 + rho (s2/s1)(z1 - m1)
    auto model = make_gmm(1, {{{1.0, 0.0, 0.0, 1.0, 1.0, 0.5}}});
    Tensor z1(Shape{1});
    z1[0] = 1.0;
    REQUIRE(model.mmse_peer_estimate(z1)[0] == Catch::Approx(0.5).epsilon(1e-9));
    // rho = 0: the estimate is m2 regardless of z1
    auto indep = make_gmm(1, {{{1.0, 0.7, -1.3, 1.0, 2.0, 0.0}}});
    for (double v : {-3.0, 0.0, 2.5}) {
        Tensor z(Shape{1});
        z[0] = v;
        REQUIRE(indep.mmse_peer_estimate(z)[0] == Catch::Approx(-1.3).epsilon(1e-12));
    }
    // K=2 against a quadrature oracle for E[z2 | z1]
    auto k2 = make_gmm(1, {{{0.6, 0.5, -0.4, 1.1, 0.8, 0.7}, {0.4, -1.5, 1.2, 0.7, 1.5, -0.3}}});
    for (double v : {-1.0, 0.3, 1.7}) {
        Tensor z(Shape{1});
        z[0] = v;
        const double est = k2.mmse_peer_estimate(z)[0];
        // Simpson quadrature of num/den over z2 in [-14, 14]
        const int n = 8000;
        const double a = -14.0, b = 14.0, hq = (b - a) / n;
        double num = 0.0, den = 0.0;
        for (int i = 0; i <= n; ++i) {
            const double z2 = a + i * hq;
            const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            const double f = k2.pdf(v, z2, 0);
            num += w * z2 * f;
            den += w * f;
        }
        REQUIRE(est == Catch::Approx(num / den).margin(1e-6));
    }
}

TEST_CASE("per-token entropy behaves like an expected code length", "[entropy]") {
    // monotone in sigma
    double prev = 0.0;
    for (double s : {0.3, 0.6, 1.2, 2.4, 4.8}) {
        const double h = gaussian_discrete_entropy_bits(0.37, s);
        REQUIRE(h > prev);
        prev = h;
    }
    // tiny sigma: near-zero entropy
    REQUIRE(gaussian_discrete_entropy_bits(5.0, kSigmaMin) < 1e-9);
    // matches a direct expectation oracle: E[-log2 pmf(round(y))] over samples
    Rng rng(53);
    const double mu = 0.83, sigma = 1.7;
    const double h = gaussian_discrete_entropy_bits(mu, sigma);
    double acc = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double y = mu + sigma * rng.normal();
        acc += -std::log2(gauss_bin_pmf(std::round(y), mu, sigma));
    }
    acc /= n;
    REQUIRE(h == Catch::Approx(acc).margin(0.02));

    // per-token aggregation: scaling all sigmas up raises every token estimate
    GaussianParams p;
    p.h = 1;
    p.w = 4;
    p.c = 2;
    Rng r2(8);
    p.mu = Tensor::normal(Shape{4, 2}, 0.0, 2.0, r2);
    p.sigma = Tensor::uniform(Shape{4, 2}, 0.5, 2.0, r2);
    GaussianParams p_wide = p;
    p_wide.sigma = p.sigma;
    for (std::int64_t i = 0; i < p_wide.sigma.numel(); ++i) p_wide.sigma[i] *= 2.0;
    auto t1 = per_token_entropy_bits(p);
    auto t2 = per_token_entropy_bits(p_wide);
    for (std::size_t i = 0; i < t1.size(); ++i) {
        REQUIRE(t1[i] >= 0.0);
        REQUIRE(t2[i] > t1[i]);
    }
}

TEST_CASE("independence ablation factorizes the joint bin mass", "[entropy]") {
    nn::ParamStore ps(3);
    JointHyperModel model(ps, "d", 6, 1, /*independent=*/true);
    Rng rng(5);
    // randomize raw parameters; rho stays clamped to zero by the flag
    for (auto& [name, v] : ps.all())
        for (std::int64_t i = 0; i < v->value.numel(); ++i) v->value[i] += rng.uniform(-1.0, 1.0);
    for (std::int64_t j = 0; j < 6; ++j)
        for (int t1 = -2; t1 <= 2; ++t1)
            for (int t2 = -2; t2 <= 2; ++t2) {
                const double joint = model.bin_pmf(t1, t2, j);
                const double prod =
                    model.marginal_bin_pmf(0, j, t1) * model.marginal_bin_pmf(1, j, t2);
                REQUIRE(joint == Catch::Approx(prod).margin(1e-7));
            }
}

TEST_CASE("gmm rate bits are differentiable", "[entropy][grad]") {
    nn::ParamStore ps(4);
    JointHyperModel model(ps, "d", 5, 2);
    Rng rng(6);
    for (auto& [name, v] : ps.all())
        for (std::int64_t i = 0; i < v->value.numel(); ++i) v->value[i] += 0.3 * rng.normal();
    auto z1 = ad::leaf(Tensor::normal(Shape{5, 1}, 0.0, 1.0, rng));
    auto z2 = ad::leaf(Tensor::normal(Shape{5, 1}, 0.0, 1.0, rng));
    auto build = [&]() { return model.rate_bits_var(z1, z2); };
    std::vector<ad::Var> leaves = {z1, z2};
    for (auto& [name, v] : ps.all()) leaves.push_back(v);
    Rng pick(7);
    auto res = grad_check(leaves, build, pick, 60, 1e-5, 1e-7);
    REQUIRE(res.max_rel_err < 1e-3);
    // training-time value agrees with the inference bin mass at the same point
    const double bits = build()->value[0];
    double manual = 0.0;
    for (std::int64_t j = 0; j < 5; ++j)
        manual += -std::log2(std::max(model.bin_pmf(z1->value[j], z2->value[j], j), kTinyProb));
    REQUIRE(bits == Catch::Approx(manual).epsilon(1e-9));
}

TEST_CASE("gauss rate bits op is differentiable", "[entropy][grad]") {
    Rng rng(9);
    auto y = ad::leaf(Tensor::normal(Shape{4, 3}, 0.0, 1.5, rng));
    auto mu = ad::leaf(Tensor::normal(Shape{4, 3}, 0.0, 1.0, rng));
    auto sr = ad::leaf(Tensor::normal(Shape{4, 3}, 0.5, 0.3, rng));
    auto build = [&]() {
        auto sigma = ad::add_const(ad::softplus(sr), kSigmaMin);
        return ad::sum_all(ad_ops::gauss_rate_bits_op(y, mu, sigma));
    };
    Rng pick(10);
    auto res = grad_check({y, mu, sr}, build, pick, 40, 1e-5, 1e-7);
    REQUIRE(res.max_rel_err < 1e-3);
}

TEST_CASE("cholesky accessor is consistent with component parameters", "[entropy]") {
    auto model = make_gmm(1, {{{1.0, 0.4, -0.7, 1.3, 0.9, 0.65}}});
    double l11, l21, l22;
    model.cholesky(0, 0, &l11, &l21, &l22);
    const GmmComponent c = model.component(0, 0);
    // L L^T reproduces the covariance [s1^2, rho s1 s2; rho s1 s2, s2^2]
    REQUIRE(l11 * l11 == Catch::Approx(c.s1 * c.s1).epsilon(1e-12));
    REQUIRE(l11 * l21 == Catch::Approx(c.rho * c.s1 * c.s2).epsilon(1e-12));
    REQUIRE(l21 * l21 + l22 * l22 == Catch::Approx(c.s2 * c.s2).epsilon(1e-12));
    REQUIRE(std::fabs(c.rho) <= 0.999);
}
