#pragma once

#include <array>
#include <cmath>
#include <string>

#include "dntsc/core/nn.hpp"
#include "dntsc/transforms.hpp"

namespace dntsc {

inline constexpr double kProjectionDenomEps = 1e-4;  // |d'| guard

// 3x3 projective transformation in latent-grid pixel coordinates, gauge-fixed
// to m33 = 1.
struct Homography {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Homography identity() { return Homography{}; }

    static Homography from_rows(const std::array<double, 9>& rows) {
        Homography h;
        h.m = rows;
        if (h.m[8] == 0.0) throw ParamError("homography m33 must be nonzero");
        for (auto& v : h.m) v /= rows[8];  // gauge fixing
        return h;
    }

    double at(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }

    Homography inverse() const {
        const double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5], g = m[6],
                     h = m[7], i = m[8];
        const double det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
        if (std::fabs(det) < 1e-12) throw ParamError("homography is singular");
        std::array<double, 9> inv = {
            (e * i - f * h) / det, (c * h - b * i) / det, (b * f - c * e) / det,
            (f * g - d * i) / det, (a * i - c * g) / det, (c * d - a * f) / det,
            (d * h - e * g) / det, (b * g - a * h) / det, (a * e - b * d) / det};
        return from_rows(inv);
    }
};

// u = (w, h, 1) -> (w'', h'') = (w'/d', h'/d') with u' = M u.
inline void project(const Homography& M, double w, double h, double* w_out, double* h_out,
                    long point_index = -1) {
    const double wp = M.at(0, 0) * w + M.at(0, 1) * h + M.at(0, 2);
    const double hp = M.at(1, 0) * w + M.at(1, 1) * h + M.at(1, 2);
    const double dp = M.at(2, 0) * w + M.at(2, 1) * h + M.at(2, 2);
    if (std::fabs(dp) < kProjectionDenomEps)
        throw DegenerateProjectionError("projective normalization degenerate (|d'| < eps)",
                                        point_index);
    *w_out = wp / dp;
    *h_out = hp / dp;
}

// Bilinear warp of a (h, w, c) latent: output position p samples the side
// latent at project(p, M); out-of-grid samples contribute zero.
inline Latent warp(const Latent& side, const Homography& M) {
    ad::NoGradGuard ng;
    Tensor coords(Shape{side.h * side.w, 2});
    for (std::int64_t y = 0; y < side.h; ++y)
        for (std::int64_t x = 0; x < side.w; ++x) {
            double sx, sy;
            project(M, static_cast<double>(x), static_cast<double>(y), &sx, &sy, y * side.w + x);
            coords[(y * side.w + x) * 2] = sx;
            coords[(y * side.w + x) * 2 + 1] = sy;
        }
    Tensor out = ad::bilinear_sample(ad::constant(side.token_view()), side.h, side.w,
                                     ad::constant(coords))
                     ->value;
    return Latent::from_tokens(side.h, side.w, side.c, out);
}

// Localization network: three stride-2 convolutions, global average pooling,
// two FC layers emitting the first 8 entries of M (m33 fixed at 1). The final
// layer starts at zero weights with an identity bias, so an untrained module
// is an exact identity warp.
struct LocalizationNet {
    nn::Conv2d conv1, conv2, conv3;
    nn::Linear fc1;
    ad::Var fc2_w, fc2_b;
    std::int64_t in_c = 0;
    static constexpr std::int64_t kHidden = 64;
    static constexpr std::int64_t kFc = 32;

    LocalizationNet() = default;
    LocalizationNet(nn::ParamStore& ps, const std::string& name, std::int64_t latent_c)
        : in_c(2 * latent_c) {
        conv1 = nn::Conv2d(ps, name + ".conv1", in_c, kHidden, 3, 2, 1);
        conv2 = nn::Conv2d(ps, name + ".conv2", kHidden, kHidden, 3, 2, 1);
        conv3 = nn::Conv2d(ps, name + ".conv3", kHidden, kHidden, 3, 2, 1);
        fc1 = nn::Linear(ps, name + ".fc1", kHidden, kFc);
        fc2_w = ps.add_constant(name + ".fc2.w", Shape{kFc, 8}, 0.0);
        Tensor ident(Shape{1, 8});
        ident[0] = 1.0;
        ident[4] = 1.0;
        fc2_b = ps.add(name + ".fc2.b", std::move(ident));
    }

    // main/side token views (h*w, c) -> (1,8) row [m11 m12 m13 m21 m22 m23 m31 m32]
    ad::Var forward(const ad::Var& main_tokens, const ad::Var& side_tokens, std::int64_t h,
                    std::int64_t w) const {
        using namespace ad;
        if (!main_tokens->value.same_shape(side_tokens->value))
            throw ShapeError("localization inputs must have identical shapes");
        Var x = concat_cols({main_tokens, side_tokens});
        std::int64_t ch = 0, cw = 0;
        x = relu(conv1(x, h, w, &ch, &cw));
        std::int64_t ch2 = 0, cw2 = 0;
        x = relu(conv2(x, ch, cw, &ch2, &cw2));
        std::int64_t ch3 = 0, cw3 = 0;
        x = relu(conv3(x, ch2, cw2, &ch3, &cw3));
        x = mean_rows(x);  // global average pool -> (1, kHidden)
        x = relu(fc1(x));
        return add(matmul(x, fc2_w), fc2_b);
    }

    Homography localize(const Latent& main, const Latent& side) const {
        ad::NoGradGuard ng;
        Tensor rows = forward(ad::constant(main.token_view()), ad::constant(side.token_view()),
                              main.h, main.w)
                          ->value;
        return Homography::from_rows(
            {rows[0], rows[1], rows[2], rows[3], rows[4], rows[5], rows[6], rows[7], 1.0});
    }
};

namespace ad_ops {

// Differentiable warp: builds projected sampling coordinates from an (1,8)
// homography row inside the graph and bilinearly samples the side latent.
inline ad::Var warp_var(const ad::Var& side_tokens, std::int64_t h, std::int64_t w,
                        const ad::Var& m_row) {
    using namespace ad;
    const std::int64_t n = h * w;
    // base homogeneous coordinates (n,3): [x, y, 1]
    Tensor base(Shape{n, 3});
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            base[(y * w + x) * 3] = static_cast<double>(x);
            base[(y * w + x) * 3 + 1] = static_cast<double>(y);
            base[(y * w + x) * 3 + 2] = 1.0;
        }
    Var basev = constant(base);
    // M^T columns for [w', h', d'] from the 8-entry row + fixed m33 = 1
    Var m = reshape(m_row, Shape{8, 1});
    auto entry = [&](std::int64_t i) { return slice_rows(m, i, 1); };  // (1,1)
    Var one = constant(Tensor(Shape{1, 1}, std::vector<double>{1.0}));
    Var mt = concat_cols({concat_rows({entry(0), entry(1), entry(2)}),
                          concat_rows({entry(3), entry(4), entry(5)}),
                          concat_rows({entry(6), entry(7), one})});
    Var prj = matmul(basev, mt);  // (n,3): w', h', d'
    Var dp = slice_cols(prj, 2, 1);
    for (std::int64_t i = 0; i < n; ++i)
        if (std::fabs(dp->value[i]) < kProjectionDenomEps)
            throw DegenerateProjectionError("projective normalization degenerate during warp", i);
    Var coords = concat_cols({div(slice_cols(prj, 0, 1), dp), div(slice_cols(prj, 1, 1), dp)});
    return bilinear_sample(side_tokens, h, w, coords);
}

}  // namespace ad_ops

}  // namespace dntsc
