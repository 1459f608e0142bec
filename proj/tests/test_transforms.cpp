#include <catch2/catch_amalgamated.hpp>

#include "dntsc/transforms.hpp"
#include "test_util.hpp"

using namespace dntsc;
using test_util::grad_check;

namespace {

TransformConfig small_tf(std::uint64_t seed = 5) {
    TransformConfig c;
    c.channels = {8, 8, 8, 8};
    c.blocks = {1, 1, 1, 1};
    c.heads = {2, 2, 2, 2};
    c.hyper_channels = 4;
    c.mlp_ratio = 2;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("config validation", "[transforms]") {
    TransformConfig c = small_tf();
    REQUIRE_NOTHROW(c.validate());
    TransformConfig bad = c;
    bad.channels[1] = 9;  // not divisible by 2 heads
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.patch_size = 4;  // total downsampling would be 32
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
    // the paper-scale configuration is itself valid
    TransformConfig paper;
    REQUIRE_NOTHROW(paper.validate());
    REQUIRE(paper.channels == std::array<std::int64_t, 4>{128, 160, 192, 256});
    REQUIRE(paper.blocks == std::array<std::int64_t, 4>{2, 2, 6, 2});
    REQUIRE(paper.heads == std::array<std::int64_t, 4>{4, 8, 8, 8});
    REQUIRE(paper.patch_size == 2);
}

TEST_CASE("latent token view round-trips exactly", "[transforms]") {
    Rng rng(3);
    Latent l(2, 3, 4, Tensor::normal(Shape{2, 3, 4}, 0.0, 1.0, rng));
    Tensor tv = l.token_view();
    REQUIRE(tv.dim(0) == 6);
    REQUIRE(tv.dim(1) == 4);
    Latent back = Latent::from_tokens(2, 3, 4, tv);
    for (std::int64_t i = 0; i < l.grid.numel(); ++i) REQUIRE(back.grid[i] == l.grid[i]);
}

TEST_CASE("analysis transform shapes and determinism", "[transforms]") {
    // 128x256 input -> 8x16 latent (the paper-size spatial contract), checked
    // at reduced width
    nn::ParamStore ps(7);
    AnalysisTransform ga(ps, "ga", small_tf(), 128, 256);
    Rng rng(1);
    Tensor img = Tensor::uniform(Shape{128, 256, 3}, 0.0, 1.0, rng);
    Latent y = ga.analyze(img);
    REQUIRE(y.h == 8);
    REQUIRE(y.w == 16);
    REQUIRE(y.c == 8);
    REQUIRE(y.tokens() == 128);
    Latent y2 = ga.analyze(img);
    for (std::int64_t i = 0; i < y.grid.numel(); ++i) REQUIRE(y.grid[i] == y2.grid[i]);

    // micro config: 16x32 -> 1x2
    nn::ParamStore ps2(8);
    AnalysisTransform micro(ps2, "ga", small_tf(), 16, 32);
    Tensor mimg = Tensor::uniform(Shape{16, 32, 3}, 0.0, 1.0, rng);
    Latent my = micro.analyze(mimg);
    REQUIRE(my.h == 1);
    REQUIRE(my.w == 2);
    REQUIRE(my.c == 8);
}

TEST_CASE("analysis transform input checks", "[transforms]") {
    nn::ParamStore ps(7);
    REQUIRE_THROWS_AS(AnalysisTransform(ps, "bad", small_tf(), 120, 256), ShapeError);
    AnalysisTransform ga(ps, "ga", small_tf(), 16, 32);
    Tensor img(Shape{16, 32, 3}, 0.5);
    img[5] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(ga.analyze(img), InputError);
    Tensor wrong(Shape{32, 32, 3}, 0.5);
    REQUIRE_THROWS_AS(ga.analyze(wrong), ShapeError);
}

TEST_CASE("independent per-user parameters, shared synthesis", "[transforms]") {
    ModelConfig mc = test_util::micro_config();
    Model model(mc);
    // distributed encoders have independent parameter sets
    REQUIRE(model.store.has("ga1.embed.w"));
    REQUIRE(model.store.has("ga2.embed.w"));
    const Tensor& w1 = model.store.get("ga1.embed.w")->value;
    const Tensor& w2 = model.store.get("ga2.embed.w")->value;
    bool same = true;
    for (std::int64_t i = 0; i < w1.numel(); ++i)
        if (w1[i] != w2[i]) same = false;
    REQUIRE_FALSE(same);
    // exactly one synthesis transform
    REQUIRE(model.store.has("gs.embed.w"));
    REQUIRE_FALSE(model.store.has("gs1.embed.w"));
    // same seed rebuilds identical initial parameters
    Model model_b(mc);
    for (const auto& [name, v] : model.store.all()) {
        const Tensor& other = model_b.store.get(name)->value;
        for (std::int64_t i = 0; i < v->value.numel(); ++i) REQUIRE(v->value[i] == other[i]);
    }
}

TEST_CASE("joint synthesis output contract", "[transforms]") {
    ModelConfig mc = test_util::micro_config();
    Model model(mc);
    Rng rng(4);
    Latent main(1, 2, 8, Tensor::normal(Shape{1, 2, 8}, 0.0, 1.0, rng));
    Latent side(1, 2, 8, Tensor::normal(Shape{1, 2, 8}, 0.0, 1.0, rng));
    Tensor img = model.gs.synthesize(main, side);
    REQUIRE(img.dim(0) == 16);
    REQUIRE(img.dim(1) == 32);
    REQUIRE(img.dim(2) == 3);
    for (std::int64_t i = 0; i < img.numel(); ++i) {
        REQUIRE(img[i] >= 0.0);
        REQUIRE(img[i] <= 1.0);
    }
    // all-zero side input is the side-info-disabled ablation path
    Latent zero_side(1, 2, 8, Tensor::zeros(Shape{1, 2, 8}));
    REQUIRE_NOTHROW(model.gs.synthesize(main, zero_side));
    // shape mismatch is rejected
    Latent bad(2, 2, 8, Tensor::zeros(Shape{2, 2, 8}));
    REQUIRE_THROWS_AS(model.gs.synthesize(main, bad), ShapeError);
}

TEST_CASE("joint synthesis gradient w.r.t. main latent", "[transforms][grad]") {
    ModelConfig mc = test_util::micro_config();
    Model model(mc);
    // jitter parameters away from the structured init
    Rng jr(17);
    for (auto& [name, v] : model.store.all())
        for (std::int64_t i = 0; i < v->value.numel(); ++i) v->value[i] += 0.02 * jr.normal();
    Rng rng(5);
    auto main = ad::leaf(Tensor::normal(Shape{2, 8}, 0.0, 0.7, rng));
    auto side = ad::leaf(Tensor::normal(Shape{2, 8}, 0.0, 0.7, rng));
    auto build = [&]() { return ad::mean_all(ad::square(model.gs.forward(main, side))); };
    Rng pick(6);
    auto res = grad_check({main, side}, build, pick, 24, 1e-5, 1e-7);
    REQUIRE(res.max_rel_err < 1e-3);
}

TEST_CASE("hyper transforms shapes and sigma floor", "[transforms]") {
    nn::ParamStore ps(11);
    HyperAnalysis ha(ps, "ha", 8, 4);
    HyperSynthesis hs(ps, "hs", 8, 4);
    Rng rng(6);
    // 8x16 latent -> 2x4 hyperprior (two stride-2 stages)
    Latent y(8, 16, 8, Tensor::normal(Shape{8, 16, 8}, 0.0, 1.0, rng));
    Hyperprior z = ha.analyze(y);
    REQUIRE(z.h == 2);
    REQUIRE(z.w == 4);
    REQUIRE(z.c == 4);
    REQUIRE(z.numel() < y.tokens() * y.c);  // N_z < N_y
    // determinism
    Hyperprior z2 = ha.analyze(y);
    for (std::int64_t i = 0; i < z.grid.numel(); ++i) REQUIRE(z.grid[i] == z2.grid[i]);
    // inverse spatial mapping + strictly positive sigma over many trials
    GaussianParams p = hs.synthesize(z, 8, 16);
    REQUIRE(p.mu.dim(0) == 128);
    REQUIRE(p.mu.dim(1) == 8);
    for (int trial = 0; trial < 100; ++trial) {
        Hyperprior zr(2, 4, 4, Tensor::normal(Shape{2, 4, 4}, 0.0, 3.0, rng));
        GaussianParams pr = hs.synthesize(zr, 8, 16);
        for (std::int64_t i = 0; i < pr.sigma.numel(); ++i) REQUIRE(pr.sigma[i] > 0.0);
    }
    // micro-scale: 1x2 latent -> 1x1 hyperprior and back
    Latent ym(1, 2, 8, Tensor::normal(Shape{1, 2, 8}, 0.0, 1.0, rng));
    Hyperprior zm = ha.analyze(ym);
    REQUIRE(zm.h == 1);
    REQUIRE(zm.w == 1);
    GaussianParams pm = hs.synthesize(zm, 1, 2);
    REQUIRE(pm.mu.dim(0) == 2);
}

TEST_CASE("hyper synthesis gradient flows to z", "[transforms][grad]") {
    nn::ParamStore ps(12);
    HyperSynthesis hs(ps, "hs", 8, 4);
    Rng jr(9);
    for (auto& [name, v] : ps.all())
        for (std::int64_t i = 0; i < v->value.numel(); ++i) v->value[i] += 0.05 * jr.normal();
    Rng rng(7);
    auto z = ad::leaf(Tensor::normal(Shape{2, 4}, 0.0, 1.0, rng));  // 1x2 grid, 4 channels
    auto build = [&]() {
        auto p = hs.forward(z, 1, 2, 1, 2);
        return ad::sum_all(ad::add(ad::square(p.mu), p.sigma));
    };
    Rng pick(10);
    auto res = grad_check({z}, build, pick, 16, 1e-5, 1e-7);
    REQUIRE(res.max_rel_err < 1e-3);
}
