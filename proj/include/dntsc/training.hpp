#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dntsc/models.hpp"

namespace dntsc {

struct StereoPair {
    Tensor left, right;  // (H,W,3) in [0,1]
    std::string name;
};

enum class DistortionKind { kMse, kOneMinusMsSsim };

inline DistortionKind distortion_kind_from_string(const std::string& s) {
    if (s == "mse") return DistortionKind::kMse;
    if (s == "msssim" || s == "1-msssim") return DistortionKind::kOneMinusMsSsim;
    throw ConfigError("unknown distortion kind: " + s);
}

struct LossWeights {
    double w1 = 1.0, w2 = 1.0;  // beta_i (D-NTSC) or alpha_i (D-NTSCC)
    double eta = 1.0;
    DistortionKind distortion = DistortionKind::kMse;

    void validate() const {
        if (!(w1 > 0.0) || !(w2 > 0.0) || !(eta > 0.0))
            throw ConfigError("loss weights must be positive");
    }
};

struct TrainConfig {
    std::string pipeline = "ntsc";
    std::int64_t epochs = 300;
    std::int64_t batch = 2;
    double lr_init = 1e-4;
    double lr_final = 1e-6;
    std::uint64_t seed = 0;
    double snr_db = 5.0;  // ntscc only
    std::int64_t checkpoint_interval = 0;  // 0: only final
    double val_fraction = 0.1;
};

// Cosine annealing: lr(t) = lr_final + (lr_init - lr_final)/2 * (1 + cos(t pi / N)).
inline double lr_schedule(std::int64_t t, std::int64_t n_epochs, double lr_init, double lr_final) {
    if (t < 0 || t > n_epochs) throw ParamError("epoch index outside [0, N]");
    return lr_final +
           0.5 * (lr_init - lr_final) *
               (1.0 + std::cos(static_cast<double>(t) * 3.14159265358979323846 /
                               static_cast<double>(n_epochs)));
}

// ---------------------------------------------------------------------------
// Distortion measures

namespace detail_msssim {

inline constexpr double kWeights5[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
inline constexpr int kWindow = 11;
inline constexpr double kC1 = 0.01 * 0.01;  // data range 1
inline constexpr double kC2 = 0.03 * 0.03;

inline Tensor gaussian_kernel_row() {
    Tensor k(Shape{kWindow, 1});
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double x = i - (kWindow - 1) / 2.0;
        k[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
        sum += k[i];
    }
    for (int i = 0; i < kWindow; ++i) k[i] /= sum;
    return k;
}

// separable valid-mode Gaussian blur of a single-channel (H*W,1) map
inline ad::Var blur(const ad::Var& x, std::int64_t h, std::int64_t w, std::int64_t* oh,
                    std::int64_t* ow) {
    static const Tensor krow = gaussian_kernel_row();
    ad::Var kv = ad::constant(krow);          // (11,1) as (kh*kw*cin, cout) for 11x1 conv
    ad::Var horiz = ad::conv2d(x, h, w, kv, 1, kWindow, 1, 0);  // (h, w-10)
    ad::Var vert = ad::conv2d(horiz, h, w - (kWindow - 1), kv, kWindow, 1, 1, 0);
    *oh = h - (kWindow - 1);
    *ow = w - (kWindow - 1);
    return vert;
}

inline ad::Var downsample2(const ad::Var& x, std::int64_t h, std::int64_t w) {
    static const Tensor box = Tensor(Shape{4, 1}, std::vector<double>{0.25, 0.25, 0.25, 0.25});
    return ad::conv2d(x, h, w, ad::constant(box), 2, 2, 2, 0);
}

struct ScaleStats {
    ad::Var luminance;  // mean l term
    ad::Var contrast;   // mean cs term
};

inline ScaleStats ssim_scale(const ad::Var& a, const ad::Var& b, std::int64_t h, std::int64_t w) {
    using namespace ad;
    std::int64_t oh = 0, ow = 0;
    Var mu1 = blur(a, h, w, &oh, &ow);
    Var mu2 = blur(b, h, w, &oh, &ow);
    Var mu1_sq = square(mu1);
    Var mu2_sq = square(mu2);
    Var mu12 = mul(mu1, mu2);
    std::int64_t th = 0, tw = 0;
    Var s1 = sub(blur(square(a), h, w, &th, &tw), mu1_sq);
    Var s2 = sub(blur(square(b), h, w, &th, &tw), mu2_sq);
    Var s12 = sub(blur(mul(a, b), h, w, &th, &tw), mu12);
    Var l = div(add_const(scale(mu12, 2.0), kC1), add_const(add(mu1_sq, mu2_sq), kC1));
    Var cs = div(add_const(scale(s12, 2.0), kC2), add_const(add(s1, s2), kC2));
    ScaleStats st;
    st.luminance = mean_all(l);
    st.contrast = mean_all(cs);
    return st;
}

inline int feasible_scales(std::int64_t h, std::int64_t w) {
    int s = 0;
    std::int64_t m = std::min(h, w);
    while (s < 5 && m >= kWindow) {
        ++s;
        m /= 2;
    }
    return std::max(s, 1);
}

}  // namespace detail_msssim

// Multi-scale SSIM with the standard 5-scale weights. When the image is too
// small for all five scales the leading scales are used and their weights
// renormalized.
inline ad::Var ms_ssim_var(const ad::Var& x, const ad::Var& y, std::int64_t h, std::int64_t w) {
    using namespace ad;
    namespace dm = detail_msssim;
    if (!x->value.same_shape(y->value)) throw ShapeError("ms-ssim shape mismatch");
    const std::int64_t channels = x->value.dim(1);
    const int scales = dm::feasible_scales(h, w);
    if (std::min(h, w) < dm::kWindow)
        throw ShapeError("image too small for the SSIM window");
    double wsum = 0.0;
    for (int s = 0; s < scales; ++s) wsum += dm::kWeights5[s];
    Var result;
    for (std::int64_t c = 0; c < channels; ++c) {
        Var a = slice_cols(x, c, 1);
        Var b = slice_cols(y, c, 1);
        std::int64_t ch = h, cw = w;
        Var acc;
        for (int s = 0; s < scales; ++s) {
            dm::ScaleStats st = dm::ssim_scale(a, b, ch, cw);
            Var term = (s == scales - 1) ? mul(st.luminance, st.contrast) : st.contrast;
            Var powed = exp_(scale(log_(clamp_min(term, 1e-6)), dm::kWeights5[s] / wsum));
            acc = acc ? mul(acc, powed) : powed;
            if (s + 1 < scales) {
                a = dm::downsample2(a, ch, cw);
                b = dm::downsample2(b, ch, cw);
                ch /= 2;
                cw /= 2;
            }
        }
        result = result ? add(result, acc) : acc;
    }
    return scale(result, 1.0 / static_cast<double>(channels));
}

inline ad::Var distortion_var(const ad::Var& x, const ad::Var& x_hat, std::int64_t h,
                              std::int64_t w, DistortionKind kind) {
    if (!x->value.same_shape(x_hat->value)) throw ShapeError("distortion shape mismatch");
    if (kind == DistortionKind::kMse) return ad::mean_all(ad::square(ad::sub(x, x_hat)));
    return ad::add_const(ad::neg(ms_ssim_var(x, x_hat, h, w)), 1.0);
}

// Plain-number distortion between (H,W,3) images in [0,1].
inline double distortion(const Tensor& x, const Tensor& x_hat, DistortionKind kind) {
    if (!x.same_shape(x_hat)) throw ShapeError("distortion shape mismatch");
    ad::NoGradGuard ng;
    const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    ad::Var a = ad::constant(x.reshaped(Shape{h * w, c}));
    ad::Var b = ad::constant(x_hat.reshaped(Shape{h * w, c}));
    return distortion_var(a, b, h, w, kind)->value[0];
}

inline double ms_ssim(const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y)) throw ShapeError("ms-ssim shape mismatch");
    ad::NoGradGuard ng;
    const std::int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
    return ms_ssim_var(ad::constant(x.reshaped(Shape{h * w, c})),
                       ad::constant(y.reshaped(Shape{h * w, c})), h, w)
        ->value[0];
}

// ---------------------------------------------------------------------------
// Loss functions (variational objectives)

struct LossResult {
    ad::Var total;
    // ordered components; summing in order reproduces total exactly
    std::vector<std::pair<std::string, double>> components;
    std::map<std::string, double> extras;

    double component_sum() const {
        double s = 0.0;
        for (const auto& [k, v] : components) s += v;
        return s;
    }
    double component(const std::string& key) const {
        for (const auto& [k, v] : components)
            if (k == key) return v;
        throw ConfigError("unknown loss component: " + key);
    }
};

namespace detail_loss {

struct PairGraph {
    ad::Var wdist1, wdist2, rate_y1, rate_y2, rate_z;
    double dist1 = 0.0, dist2 = 0.0;
};

// Shared front half of both pipelines: analysis + hyper + relaxed rates.
struct FrontEnd {
    ad::Var y1, y2;            // latent tokens
    ad::Var y1_tilde, y2_tilde;
    ad::Var z1_tilde, z2_tilde;
    GaussianParamsVar p1, p2;  // from relaxed hyperpriors
    Tensor z1_bar, z2_bar;     // quantized hyperpriors (no grad)
    ad::Var rate_y1, rate_y2, rate_z;
};

inline FrontEnd front_end(const Model& model, const Tensor& x1, const Tensor& x2, Rng& noise_rng,
                          bool relax_latent) {
    using namespace ad;
    FrontEnd fe;
    const std::int64_t lh = model.cfg.latent_h(), lw = model.cfg.latent_w();
    const std::int64_t zh = model.cfg.hyper_h(), zw = model.cfg.hyper_w();
    Var x1v = constant(model.image_as_tokens(x1));
    Var x2v = constant(model.image_as_tokens(x2));
    fe.y1 = model.ga[0].forward(x1v);
    fe.y2 = model.ga[1].forward(x2v);
    Var z1 = model.ha[0].forward(fe.y1, lh, lw);
    Var z2 = model.ha[1].forward(fe.y2, lh, lw);
    fe.y1_tilde = add(fe.y1, constant(relax_noise(fe.y1->value.shape(), noise_rng)));
    fe.y2_tilde = add(fe.y2, constant(relax_noise(fe.y2->value.shape(), noise_rng)));
    fe.z1_tilde = add(z1, constant(relax_noise(z1->value.shape(), noise_rng)));
    fe.z2_tilde = add(z2, constant(relax_noise(z2->value.shape(), noise_rng)));
    fe.z1_bar = quantize(z1->value);
    fe.z2_bar = quantize(z2->value);
    fe.p1 = model.hs[0].forward(fe.z1_tilde, zh, zw, lh, lw);
    fe.p2 = model.hs[1].forward(fe.z2_tilde, zh, zw, lh, lw);
    const Var& ry1_at = relax_latent ? fe.y1_tilde : fe.y1;
    const Var& ry2_at = relax_latent ? fe.y2_tilde : fe.y2;
    fe.rate_y1 = sum_all(ad_ops::gauss_rate_bits_op(ry1_at, fe.p1.mu, fe.p1.sigma));
    fe.rate_y2 = sum_all(ad_ops::gauss_rate_bits_op(ry2_at, fe.p2.mu, fe.p2.sigma));
    const std::int64_t nz = model.cfg.hyper_elems();
    fe.rate_z = model.density.rate_bits_var(reshape(fe.z1_tilde, Shape{nz, 1}),
                                            reshape(fe.z2_tilde, Shape{nz, 1}));
    return fe;
}

// Decoder half shared by both pipelines: localization, warp, joint synthesis.
inline void decode_pair_graph(const Model& model, const ad::Var& y1, const ad::Var& y2,
                              const Tensor& x1, const Tensor& x2, DistortionKind kind,
                              double w1, double w2, PairGraph* out, bool use_side_info = true) {
    using namespace ad;
    const std::int64_t lh = model.cfg.latent_h(), lw = model.cfg.latent_w();
    Var si21, si12;
    if (use_side_info) {
        Var m1 = model.loc[0].forward(y1, y2, lh, lw);
        Var m2 = model.loc[1].forward(y2, y1, lh, lw);
        si21 = ad_ops::warp_var(y2, lh, lw, m1);
        si12 = ad_ops::warp_var(y1, lh, lw, m2);
    } else {
        si21 = constant(Tensor::zeros(y2->value.shape()));
        si12 = constant(Tensor::zeros(y1->value.shape()));
    }
    Var x1_hat = model.gs.forward(y1, si21);
    Var x2_hat = model.gs.forward(y2, si12);
    Var x1v = constant(model.image_as_tokens(x1));
    Var x2v = constant(model.image_as_tokens(x2));
    Var d1 = distortion_var(x1v, x1_hat, model.cfg.img_h, model.cfg.img_w, kind);
    Var d2 = distortion_var(x2v, x2_hat, model.cfg.img_h, model.cfg.img_w, kind);
    out->dist1 = d1->value[0];
    out->dist2 = d2->value[0];
    out->wdist1 = scale(d1, w1);
    out->wdist2 = scale(d2, w2);
}

}  // namespace detail_loss

// D-NTSC objective: beta1 d(x1,x1^) + beta2 d(x2,x2^) - log2 p(y1~|z1~)
// - log2 p(y2~|z2~) - log2 p(z1~, z2~), averaged over the batch.
inline LossResult loss_ntsc(const Model& model, const std::vector<const StereoPair*>& batch,
                            const LossWeights& weights, Rng& noise_rng,
                            bool use_side_info = true) {
    using namespace ad;
    if (batch.empty()) throw ParamError("empty batch");
    std::vector<detail_loss::PairGraph> graphs;
    graphs.reserve(batch.size());
    for (const StereoPair* pair : batch) {
        detail_loss::FrontEnd fe =
            detail_loss::front_end(model, pair->left, pair->right, noise_rng, true);
        detail_loss::PairGraph g;
        g.rate_y1 = fe.rate_y1;
        g.rate_y2 = fe.rate_y2;
        g.rate_z = fe.rate_z;
        detail_loss::decode_pair_graph(model, fe.y1_tilde, fe.y2_tilde, pair->left, pair->right,
                                       weights.distortion, weights.w1, weights.w2, &g,
                                       use_side_info);
        graphs.push_back(std::move(g));
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    auto mean_of = [&](auto proj) {
        Var acc;
        for (auto& g : graphs) acc = acc ? add(acc, proj(g)) : proj(g);
        return scale(acc, inv_b);
    };
    Var wd1 = mean_of([](auto& g) { return g.wdist1; });
    Var wd2 = mean_of([](auto& g) { return g.wdist2; });
    Var ry1 = mean_of([](auto& g) { return g.rate_y1; });
    Var ry2 = mean_of([](auto& g) { return g.rate_y2; });
    Var rz = mean_of([](auto& g) { return g.rate_z; });
    LossResult res;
    res.total = add(add(add(add(wd1, wd2), ry1), ry2), rz);
    res.components = {{"weighted_distortion1", wd1->value[0]},
                      {"weighted_distortion2", wd2->value[0]},
                      {"rate_y1", ry1->value[0]},
                      {"rate_y2", ry2->value[0]},
                      {"rate_z_joint", rz->value[0]}};
    double d1 = 0.0, d2 = 0.0;
    for (auto& g : graphs) {
        d1 += g.dist1 * inv_b;
        d2 += g.dist2 * inv_b;
    }
    res.extras = {{"distortion1", d1}, {"distortion2", d2}};
    if (!std::isfinite(res.total->value[0])) {
        std::string msg = "non-finite loss;";
        for (auto& [k, v] : res.components) msg += " " + k + "=" + std::to_string(v);
        throw TrainError(msg);
    }
    return res;
}

// D-NTSCC objective: alpha1 d + alpha2 d - eta log2 p(y1~|z1~) - eta log2
// p(y2~|z2~) - log2 p(z1~, z2~); the forward pass runs the JSCC codecs over
// the simulated channel.
inline LossResult loss_ntscc(const Model& model, const std::vector<const StereoPair*>& batch,
                             const LossWeights& weights, const ChannelSpec& channel,
                             Rng& noise_rng, bool use_side_info = true) {
    using namespace ad;
    if (!model.has_jscc()) throw ConfigError("model was not built for the ntscc pipeline");
    if (batch.empty()) throw ParamError("empty batch");
    std::vector<detail_loss::PairGraph> graphs;
    graphs.reserve(batch.size());
    for (const StereoPair* pair : batch) {
        detail_loss::FrontEnd fe =
            detail_loss::front_end(model, pair->left, pair->right, noise_rng, true);
        detail_loss::PairGraph g;
        g.rate_y1 = scale(fe.rate_y1, weights.eta);
        g.rate_y2 = scale(fe.rate_y2, weights.eta);
        g.rate_z = fe.rate_z;
        // rate plans are a discrete decision outside the graph, recomputed
        // from the quantized hyperpriors exactly as at inference
        std::array<RatePlan, 2> plan_tx;
        std::array<std::vector<double>, 2> self_bits;
        {
            NoGradGuard ng;
            for (int u = 0; u < 2; ++u) {
                const auto su = static_cast<std::size_t>(u);
                const Tensor& zq = u == 0 ? fe.z1_bar : fe.z2_bar;
                Hyperprior zb(model.cfg.hyper_h(), model.cfg.hyper_w(), model.cfg.tf.hyper_channels,
                              zq.reshaped(Shape{model.cfg.hyper_h(), model.cfg.hyper_w(),
                                                model.cfg.tf.hyper_channels}));
                GaussianParams p =
                    model.hs[su].synthesize(zb, model.cfg.latent_h(), model.cfg.latent_w());
                self_bits[su] = per_token_entropy_bits(p);
            }
            for (int u = 0; u < 2; ++u) {
                const auto su = static_cast<std::size_t>(u);
                Tensor z_star = model.mmse_peer(u, u == 0 ? fe.z1_bar : fe.z2_bar);
                const auto peer_bits = peer_rate_estimate(model, 1 - u, z_star);
                plan_tx[su] =
                    make_rate_plan(self_bits[su], peer_bits, model.cfg.eta, model.cfg.bandwidths);
            }
        }
        std::array<Var, 2> y_hat;
        for (int u = 0; u < 2; ++u) {
            const auto su = static_cast<std::size_t>(u);
            const auto sp = static_cast<std::size_t>(1 - u);
            Var s = model.fe[su].forward(u == 0 ? fe.y1 : fe.y2, plan_tx[su], model.cfg.power);
            Var s_hat = s;
            if (!channel.noiseless) {
                const double sd = std::sqrt(channel.noise_variance() / 2.0);
                Tensor noise(s->value.shape());
                for (std::int64_t i = 0; i < noise.numel(); ++i) noise[i] = sd * noise_rng.normal();
                s_hat = add(s, constant(std::move(noise)));
            }
            RatePlan plan_rx;
            plan_rx.k_self = plan_tx[su].k_self;
            plan_rx.k_peer_est = plan_tx[sp].k_self;
            y_hat[su] = model.fd[su].forward(s_hat, plan_rx);
        }
        detail_loss::decode_pair_graph(model, y_hat[0], y_hat[1], pair->left, pair->right,
                                       weights.distortion, weights.w1, weights.w2, &g,
                                       use_side_info);
        graphs.push_back(std::move(g));
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    auto mean_of = [&](auto proj) {
        Var acc;
        for (auto& g : graphs) acc = acc ? add(acc, proj(g)) : proj(g);
        return scale(acc, inv_b);
    };
    Var wd1 = mean_of([](auto& g) { return g.wdist1; });
    Var wd2 = mean_of([](auto& g) { return g.wdist2; });
    Var ry1 = mean_of([](auto& g) { return g.rate_y1; });
    Var ry2 = mean_of([](auto& g) { return g.rate_y2; });
    Var rz = mean_of([](auto& g) { return g.rate_z; });
    LossResult res;
    res.total = add(add(add(add(wd1, wd2), ry1), ry2), rz);
    res.components = {{"weighted_distortion1", wd1->value[0]},
                      {"weighted_distortion2", wd2->value[0]},
                      {"rate_y1", ry1->value[0]},
                      {"rate_y2", ry2->value[0]},
                      {"rate_z_joint", rz->value[0]}};
    double d1 = 0.0, d2 = 0.0;
    for (auto& g : graphs) {
        d1 += g.dist1 * inv_b;
        d2 += g.dist2 * inv_b;
    }
    res.extras = {{"distortion1", d1}, {"distortion2", d2}};
    if (!std::isfinite(res.total->value[0])) {
        std::string msg = "non-finite loss;";
        for (auto& [k, v] : res.components) msg += " " + k + "=" + std::to_string(v);
        throw TrainError(msg);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Adam optimizer with persistent state for bit-exact resume.

class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(nn::ParamStore& store, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (const auto& [name, v] : store.all()) {
            if (store.is_frozen(name) || !v->grad_defined()) continue;
            Tensor& m = state_m_.try_emplace(name, Tensor::zeros(v->value.shape())).first->second;
            Tensor& s = state_v_.try_emplace(name, Tensor::zeros(v->value.shape())).first->second;
            for (std::int64_t i = 0; i < v->value.numel(); ++i) {
                const double g = v->grad[i];
                m[i] = b1_ * m[i] + (1.0 - b1_) * g;
                s[i] = b2_ * s[i] + (1.0 - b2_) * g * g;
                v->value[i] -= lr * (m[i] / c1) / (std::sqrt(s[i] / c2) + eps_);
            }
        }
    }

    std::int64_t steps() const { return t_; }

    std::map<std::string, Tensor> export_state() const {
        std::map<std::string, Tensor> out;
        for (const auto& [k, t] : state_m_) out.emplace("opt.m." + k, t);
        for (const auto& [k, t] : state_v_) out.emplace("opt.v." + k, t);
        return out;
    }

    void import_state(const std::map<std::string, Tensor>& tensors, std::int64_t steps) {
        t_ = steps;
        state_m_.clear();
        state_v_.clear();
        for (const auto& [k, t] : tensors) {
            if (k.rfind("opt.m.", 0) == 0) state_m_.emplace(k.substr(6), t);
            if (k.rfind("opt.v.", 0) == 0) state_v_.emplace(k.substr(6), t);
        }
    }

private:
    double b1_, b2_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, Tensor> state_m_, state_v_;
};

}  // namespace dntsc
