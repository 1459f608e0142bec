#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "dntsc/core/nn.hpp"

namespace dntsc {

// Width of z; see HyperSynthesis for the sigma head details.
inline constexpr double kSigmaMin = 1e-6;

struct TransformConfig {
    std::array<std::int64_t, 4> channels{128, 160, 192, 256};
    std::array<std::int64_t, 4> blocks{2, 2, 6, 2};
    std::array<std::int64_t, 4> heads{4, 8, 8, 8};
    std::int64_t patch_size = 2;
    std::int64_t window_size = 4;
    std::int64_t window_shift = 2;
    std::int64_t hyper_channels = 192;
    std::int64_t mlp_ratio = 4;
    std::uint64_t seed = 0;

    void validate() const {
        for (int i = 0; i < 4; ++i) {
            if (channels[i] <= 0 || blocks[i] <= 0 || heads[i] <= 0)
                throw ConfigError("transform config entries must be positive");
            if (channels[i] % heads[i] != 0)
                throw ConfigError("stage width must be divisible by its head count");
        }
        if (hyper_channels <= 0 || window_size <= 0 || mlp_ratio <= 0)
            throw ConfigError("transform config entries must be positive");
        if (window_shift < 0 || window_shift >= window_size)
            throw ConfigError("window shift must lie in [0, window)");
        // patch embedding x three 2x merges must total a 16x reduction
        if (patch_size * 8 != 16)
            throw ConfigError("total downsampling factor must be 16 (patch_size 2)");
    }

    std::int64_t latent_channels() const { return channels[3]; }
};

namespace detail {
inline std::int64_t ceil_div2(std::int64_t v) { return (v + 1) / 2; }
}

// 3-D feature grids are stored row-major as (h, w, c); the flattened token
// view (h*w, c) shares the same memory layout, so the reshape round-trips
// exactly.
struct Latent {
    std::int64_t h = 0, w = 0, c = 0;
    Tensor grid;  // shape (h, w, c)

    Latent() = default;
    Latent(std::int64_t h_, std::int64_t w_, std::int64_t c_, Tensor g)
        : h(h_), w(w_), c(c_), grid(std::move(g)) {}

    std::int64_t tokens() const { return h * w; }
    Tensor token_view() const { return grid.reshaped(Shape{h * w, c}); }
    static Latent from_tokens(std::int64_t h, std::int64_t w, std::int64_t c, const Tensor& t) {
        return Latent(h, w, c, t.reshaped(Shape{h, w, c}));
    }
};

struct Hyperprior {
    std::int64_t h = 0, w = 0, c = 0;
    Tensor grid;

    Hyperprior() = default;
    Hyperprior(std::int64_t h_, std::int64_t w_, std::int64_t c_, Tensor g)
        : h(h_), w(w_), c(c_), grid(std::move(g)) {}
    Tensor token_view() const { return grid.reshaped(Shape{h * w, c}); }
    std::int64_t numel() const { return h * w * c; }
};

struct GaussianParams {
    std::int64_t h = 0, w = 0, c = 0;
    Tensor mu, sigma;  // each (h*w, c)
};

struct GaussianParamsVar {
    std::int64_t h = 0, w = 0, c = 0;
    ad::Var mu, sigma;
};

// Four stages of windowed-attention blocks with strided patch-merging
// convolutions between them; maps (H,W,3) to (H/16, W/16, C4).
struct AnalysisTransform {
    TransformConfig cfg;
    std::int64_t img_h = 0, img_w = 0;
    nn::Conv2d embed;
    std::array<nn::Conv2d, 3> merges;
    std::vector<std::vector<nn::SwinBlock>> stages;

    AnalysisTransform() = default;
    AnalysisTransform(nn::ParamStore& ps, const std::string& name, const TransformConfig& c,
                      std::int64_t H, std::int64_t W)
        : cfg(c), img_h(H), img_w(W) {
        cfg.validate();
        if (H % 16 != 0 || W % 16 != 0)
            throw ShapeError("image dims must be divisible by 16, got " + std::to_string(H) + "x" +
                             std::to_string(W));
        embed = nn::Conv2d(ps, name + ".embed", 3, cfg.channels[0], cfg.patch_size, cfg.patch_size, 0);
        std::int64_t h = H / cfg.patch_size, w = W / cfg.patch_size;
        stages.resize(4);
        for (int s = 0; s < 4; ++s) {
            for (std::int64_t b = 0; b < cfg.blocks[static_cast<std::size_t>(s)]; ++b) {
                const bool shifted = (b % 2 == 1) && cfg.window_shift > 0;
                stages[static_cast<std::size_t>(s)].emplace_back(
                    ps, name + ".stage" + std::to_string(s) + ".block" + std::to_string(b),
                    cfg.channels[static_cast<std::size_t>(s)], cfg.heads[static_cast<std::size_t>(s)],
                    cfg.mlp_ratio, h, w, cfg.window_size, shifted ? cfg.window_shift : 0);
            }
            if (s < 3) {
                merges[static_cast<std::size_t>(s)] =
                    nn::Conv2d(ps, name + ".merge" + std::to_string(s),
                               cfg.channels[static_cast<std::size_t>(s)],
                               cfg.channels[static_cast<std::size_t>(s) + 1], 2, 2, 0);
                h /= 2;
                w /= 2;
            }
        }
    }

    ad::Var forward(const ad::Var& image_tokens) const {
        std::int64_t h = 0, w = 0;
        ad::Var x = embed(image_tokens, img_h, img_w, &h, &w);
        for (int s = 0; s < 4; ++s) {
            for (const auto& blk : stages[static_cast<std::size_t>(s)]) x = blk(x);
            if (s < 3) {
                std::int64_t nh = 0, nw = 0;
                x = merges[static_cast<std::size_t>(s)](x, h, w, &nh, &nw);
                h = nh;
                w = nw;
            }
        }
        return x;  // (H/16 * W/16, C4)
    }

    Latent analyze(const Tensor& image) const {
        if (image.ndim() != 3 || image.dim(2) != 3)
            throw ShapeError("expected (H,W,3) image, got " + shape_str(image.shape()));
        if (image.dim(0) != img_h || image.dim(1) != img_w)
            throw ShapeError("image size does not match the transform's build size");
        if (!image.all_finite()) throw InputError("image contains non-finite values");
        ad::NoGradGuard ng;
        ad::Var x = ad::constant(image.reshaped(Shape{img_h * img_w, 3}));
        Tensor y = forward(x)->value;
        return Latent::from_tokens(img_h / 16, img_w / 16, cfg.latent_channels(), y);
    }
};

// Joint synthesis: the main latent concatenated channel-wise with the aligned
// side latent, mirrored structure of the analysis transform, output clamped
// to [0,1].
struct SynthesisTransform {
    TransformConfig cfg;
    std::int64_t img_h = 0, img_w = 0;
    nn::Linear embed;  // 2*C4 -> C4 (1x1)
    std::array<nn::ConvTranspose2d, 3> expands;
    nn::ConvTranspose2d to_image;
    std::vector<std::vector<nn::SwinBlock>> stages;  // indexed 3,2,1,0 order of use

    SynthesisTransform() = default;
    SynthesisTransform(nn::ParamStore& ps, const std::string& name, const TransformConfig& c,
                       std::int64_t H, std::int64_t W)
        : cfg(c), img_h(H), img_w(W) {
        cfg.validate();
        embed = nn::Linear(ps, name + ".embed", 2 * cfg.channels[3], cfg.channels[3]);
        stages.resize(4);
        std::int64_t h = H / 16, w = W / 16;
        for (int s = 3; s >= 0; --s) {
            for (std::int64_t b = 0; b < cfg.blocks[static_cast<std::size_t>(s)]; ++b) {
                const bool shifted = (b % 2 == 1) && cfg.window_shift > 0;
                stages[static_cast<std::size_t>(s)].emplace_back(
                    ps, name + ".stage" + std::to_string(s) + ".block" + std::to_string(b),
                    cfg.channels[static_cast<std::size_t>(s)], cfg.heads[static_cast<std::size_t>(s)],
                    cfg.mlp_ratio, h, w, cfg.window_size, shifted ? cfg.window_shift : 0);
            }
            if (s > 0) {
                expands[static_cast<std::size_t>(s - 1)] = nn::ConvTranspose2d(
                    ps, name + ".expand" + std::to_string(s),
                    cfg.channels[static_cast<std::size_t>(s)],
                    cfg.channels[static_cast<std::size_t>(s) - 1], 2, 2, 0);
                h *= 2;
                w *= 2;
            }
        }
        to_image = nn::ConvTranspose2d(ps, name + ".to_image", cfg.channels[0], 3, cfg.patch_size,
                                       cfg.patch_size, 0, 0.1);
        // start reconstructions mid-range so the [0,1] clamp is inactive
        to_image.b->value.fill(0.5);
    }

    ad::Var forward(const ad::Var& main_tokens, const ad::Var& side_tokens) const {
        if (!main_tokens->value.same_shape(side_tokens->value))
            throw ShapeError("main/side latent shape mismatch in joint synthesis");
        std::int64_t h = img_h / 16, w = img_w / 16;
        ad::Var x = embed(ad::concat_cols({main_tokens, side_tokens}));
        for (int s = 3; s >= 0; --s) {
            for (const auto& blk : stages[static_cast<std::size_t>(s)]) x = blk(x);
            if (s > 0) {
                x = expands[static_cast<std::size_t>(s - 1)](x, h, w, h * 2, w * 2);
                h *= 2;
                w *= 2;
            }
        }
        x = to_image(x, h, w, img_h, img_w);
        return ad::clamp(x, 0.0, 1.0);
    }

    Tensor synthesize(const Latent& main, const Latent& side_aligned) const {
        if (main.h != side_aligned.h || main.w != side_aligned.w || main.c != side_aligned.c)
            throw ShapeError("main/side latent shape mismatch in joint synthesis");
        ad::NoGradGuard ng;
        Tensor img = forward(ad::constant(main.token_view()), ad::constant(side_aligned.token_view()))
                         ->value;
        return img.reshaped(Shape{img_h, img_w, 3});
    }
};

// Two stride-2 convolution stages (ReLU between) mapping the latent grid to
// the hyperprior grid via ceil division.
struct HyperAnalysis {
    nn::Conv2d down1, down2;
    std::int64_t in_c = 0, out_c = 0;

    HyperAnalysis() = default;
    HyperAnalysis(nn::ParamStore& ps, const std::string& name, std::int64_t latent_c,
                  std::int64_t hyper_c)
        : in_c(latent_c), out_c(hyper_c) {
        down1 = nn::Conv2d(ps, name + ".down1", latent_c, hyper_c, 3, 2, 1);
        down2 = nn::Conv2d(ps, name + ".down2", hyper_c, hyper_c, 3, 2, 1);
    }

    ad::Var forward(const ad::Var& latent_tokens, std::int64_t h, std::int64_t w) const {
        std::int64_t mh = 0, mw = 0, zh = 0, zw = 0;
        ad::Var x = ad::relu(down1(latent_tokens, h, w, &mh, &mw));
        return down2(x, mh, mw, &zh, &zw);
    }

    Hyperprior analyze(const Latent& y) const {
        ad::NoGradGuard ng;
        Tensor z = forward(ad::constant(y.token_view()), y.h, y.w)->value;
        const std::int64_t zh = detail::ceil_div2(detail::ceil_div2(y.h));
        const std::int64_t zw = detail::ceil_div2(detail::ceil_div2(y.w));
        return Hyperprior(zh, zw, out_c, z.reshaped(Shape{zh, zw, out_c}));
    }
};

// Mirrored transposed convolutions; emits per-element (mu, sigma) for the
// latent. The sigma head is softplus-activated then floored at kSigmaMin, and
// its bias starts at softplus^-1(1) so initial scales are near one.
struct HyperSynthesis {
    nn::ConvTranspose2d up1, up2;
    std::int64_t latent_c = 0, hyper_c = 0;

    HyperSynthesis() = default;
    HyperSynthesis(nn::ParamStore& ps, const std::string& name, std::int64_t latent_channels,
                   std::int64_t hyper_channels)
        : latent_c(latent_channels), hyper_c(hyper_channels) {
        up1 = nn::ConvTranspose2d(ps, name + ".up1", hyper_channels, hyper_channels, 3, 2, 1);
        up2 = nn::ConvTranspose2d(ps, name + ".up2", hyper_channels, 2 * latent_channels, 3, 2, 1);
        for (std::int64_t c = 0; c < latent_channels; ++c)
            up2.b->value[latent_channels + c] = 0.54132485461292319;  // softplus(x) = 1
    }

    GaussianParamsVar forward(const ad::Var& z_tokens, std::int64_t zh, std::int64_t zw,
                              std::int64_t latent_h, std::int64_t latent_w) const {
        const std::int64_t mh = detail::ceil_div2(latent_h);
        const std::int64_t mw = detail::ceil_div2(latent_w);
        ad::Var x = ad::relu(up1(z_tokens, zh, zw, mh, mw));
        ad::Var both = up2(x, mh, mw, latent_h, latent_w);
        GaussianParamsVar out;
        out.h = latent_h;
        out.w = latent_w;
        out.c = latent_c;
        out.mu = ad::slice_cols(both, 0, latent_c);
        out.sigma = ad::clamp_min(ad::softplus(ad::slice_cols(both, latent_c, latent_c)), kSigmaMin);
        return out;
    }

    GaussianParams synthesize(const Hyperprior& z_hat, std::int64_t latent_h,
                              std::int64_t latent_w) const {
        ad::NoGradGuard ng;
        auto p = forward(ad::constant(z_hat.token_view()), z_hat.h, z_hat.w, latent_h, latent_w);
        GaussianParams out;
        out.h = latent_h;
        out.w = latent_w;
        out.c = latent_c;
        out.mu = p.mu->value;
        out.sigma = p.sigma->value;
        return out;
    }
};

}  // namespace dntsc
