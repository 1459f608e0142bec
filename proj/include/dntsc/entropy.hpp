#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dntsc/core/bvn.hpp"
#include "dntsc/core/nn.hpp"
#include "dntsc/core/normal.hpp"
#include "dntsc/transforms.hpp"

namespace dntsc {

// All rates are in bits (log base 2) throughout.
inline constexpr double kLog2E = 1.4426950408889634073599246810019;
// PMF floor used only when building coder frequency tables.
inline constexpr double kCoderPmfFloor = 1.0 / 65536.0;
// Numerical guard inside -log2 terms; not a modeling floor.
inline constexpr double kTinyProb = 1e-30;

// Mass of the width-1 bin centred at v under N(mu, sigma): the Gaussian
// convolved with U(-1/2,1/2) evaluated at v. Evaluated tail-stably.
inline double gauss_bin_pmf(double v, double mu, double sigma) {
    const double hi = (v + 0.5 - mu) / sigma;
    const double lo = (v - 0.5 - mu) / sigma;
    double p;
    if (lo > 0.0)
        p = norm_cdf(-lo) - norm_cdf(-hi);
    else
        p = norm_cdf(hi) - norm_cdf(lo);
    return p < 0.0 ? 0.0 : p;
}

// Spec-facing form: integer bin t. sigma below the floor is a caller error.
inline double latent_bin_pmf(long t, double mu, double sigma) {
    if (!(sigma >= kSigmaMin)) throw ParamError("sigma below sigma_min");
    return gauss_bin_pmf(static_cast<double>(t), mu, sigma);
}

namespace ad_ops {

using ad::Var;

// Fused differentiable bin-mass node: p(v) = Phi((v+1/2-mu)/sigma) -
// Phi((v-1/2-mu)/sigma), with partials in v, mu and sigma.
inline Var gauss_bin_pmf_op(const Var& v, const Var& mu, const Var& sigma) {
    if (!v->value.same_shape(mu->value) || !v->value.same_shape(sigma->value))
        throw ShapeError("gauss_bin_pmf_op expects equal shapes");
    Tensor out(v->value.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = gauss_bin_pmf(v->value[i], mu->value[i], sigma->value[i]);
    ad::Node* pv = v.get();
    ad::Node* pm = mu.get();
    ad::Node* ps = sigma.get();
    return ad::make_node(std::move(out), {v, mu, sigma}, [pv, pm, ps](ad::Node& n) {
        for (std::int64_t i = 0; i < n.value.numel(); ++i) {
            const double s = ps->value[i];
            const double hi = (pv->value[i] + 0.5 - pm->value[i]) / s;
            const double lo = (pv->value[i] - 0.5 - pm->value[i]) / s;
            const double phi_hi = norm_pdf(hi);
            const double phi_lo = norm_pdf(lo);
            const double g = n.grad[i];
            const double dv = (phi_hi - phi_lo) / s;
            if (pv->requires_grad) {
                pv->ensure_grad();
                pv->grad[i] += g * dv;
            }
            if (pm->requires_grad) {
                pm->ensure_grad();
                pm->grad[i] += g * (-dv);
            }
            if (ps->requires_grad) {
                ps->ensure_grad();
                ps->grad[i] += g * (phi_lo * lo - phi_hi * hi) / s;
            }
        }
    });
}

// -log2 of the bin mass, elementwise.
inline Var gauss_rate_bits_op(const Var& v, const Var& mu, const Var& sigma) {
    Var p = ad::clamp_min(gauss_bin_pmf_op(v, mu, sigma), kTinyProb);
    return ad::scale(ad::log_(p), -kLog2E);
}

}  // namespace ad_ops

// Per-token and total code length of a latent under (mu, sigma). Works for
// integer bins (inference) and relaxed values (training) alike since the bin
// mass formula is the convolved density.
struct RateReport {
    std::vector<double> token_bits;  // length l, summed over the channel axis
    double latent_bits = 0.0;        // R_y
    double joint_hyper_bits = 0.0;   // H(z1,z2) sample code length
    double total() const { return latent_bits + 0.5 * joint_hyper_bits; }
};

inline double total_code_rate(double latent_bits, double joint_hyper_bits) {
    if (latent_bits < 0.0 || joint_hyper_bits < 0.0)
        throw ParamError("code rates must be nonnegative");
    return latent_bits + 0.5 * joint_hyper_bits;
}

// values: (l, C) token view evaluated against params of the same shape.
inline RateReport latent_rate_bits(const Tensor& values, const GaussianParams& params) {
    Tensor mu = params.mu;
    Tensor sigma = params.sigma;
    if (!values.same_shape(mu)) {
        // accept (h,w,c) grids as well as token views
        if (values.numel() != mu.numel()) throw ShapeError("latent/params shape mismatch");
    }
    const std::int64_t l = params.h * params.w;
    const std::int64_t c = params.c;
    RateReport rep;
    rep.token_bits.assign(static_cast<std::size_t>(l), 0.0);
    for (std::int64_t i = 0; i < l; ++i) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            const double p =
                std::max(gauss_bin_pmf(values[i * c + j], mu[i * c + j], sigma[i * c + j]), kTinyProb);
            acc += -std::log2(p);
        }
        rep.token_bits[static_cast<std::size_t>(i)] = acc;
        rep.latent_bits += acc;
    }
    return rep;
}

// Expected code length in bits of round(y), y ~ N(mu, sigma): the discrete
// entropy of the integer-bin masses. The support window widens with sigma so
// the truncation is negligible and both ends of a link compute the same value.
inline double gaussian_discrete_entropy_bits(double mu, double sigma) {
    const long center = std::lround(mu);
    const long halfwidth = std::max<long>(64, static_cast<long>(std::ceil(8.0 * sigma)));
    double h = 0.0;
    for (long t = center - halfwidth; t <= center + halfwidth; ++t) {
        const double p = gauss_bin_pmf(static_cast<double>(t), mu, sigma);
        if (p > 0.0) h -= p * std::log2(p);
    }
    return h;
}

// Per-token expected code length (bits) given per-element (mu, sigma).
inline std::vector<double> per_token_entropy_bits(const GaussianParams& params) {
    const std::int64_t l = params.h * params.w;
    const std::int64_t c = params.c;
    std::vector<double> out(static_cast<std::size_t>(l), 0.0);
    for (std::int64_t i = 0; i < l; ++i) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < c; ++j)
            acc += gaussian_discrete_entropy_bits(params.mu[i * c + j], params.sigma[i * c + j]);
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Joint pairwise GMM over hyperprior element pairs (z1^j, z2^j).

struct GmmComponent {
    double pi, m1, m2, s1, s2, rho;
};

// Parameters live in a ParamStore and are trained by gradient descent along
// with everything else. Covariances are kept positive definite through a
// (softplus sigma, tanh-clamped rho) parameterization, equivalent to storing
// Cholesky factors with a softplus diagonal; |rho| <= 0.999.
class JointHyperModel {
public:
    JointHyperModel() = default;
    JointHyperModel(nn::ParamStore& ps, const std::string& name, std::int64_t pairs, int K,
                    bool independent = false)
        : pairs_(pairs), k_(K), independent_(independent) {
        if (K < 1) throw ConfigError("mixture count must be >= 1");
        weight_raw_ = ps.add_constant(name + ".weight_raw", Shape{pairs, K}, 0.0);
        Rng rng = substream(ps.seed(), name + ".means");
        Tensor m1(Shape{pairs, K}), m2(Shape{pairs, K});
        for (std::int64_t i = 0; i < pairs * K; ++i) {
            // spread component means slightly so K>1 mixtures can specialize
            m1[i] = 0.1 * rng.normal();
            m2[i] = 0.1 * rng.normal();
        }
        mean1_ = ps.add(name + ".mean1", std::move(m1));
        mean2_ = ps.add(name + ".mean2", std::move(m2));
        s1_raw_ = ps.add_constant(name + ".s1_raw", Shape{pairs, K}, 0.54132485461292319);
        s2_raw_ = ps.add_constant(name + ".s2_raw", Shape{pairs, K}, 0.54132485461292319);
        rho_raw_ = ps.add_constant(name + ".rho_raw", Shape{pairs, K}, 0.0);
    }

    std::int64_t pairs() const { return pairs_; }
    int mixtures() const { return k_; }
    bool independent() const { return independent_; }
    void set_independent(bool v) { independent_ = v; }

    GmmComponent component(std::int64_t j, int k) const {
        GmmComponent c;
        const Tensor& w = weight_raw_->value;
        double mx = w[j * k_];
        for (int q = 1; q < k_; ++q) mx = std::max(mx, w[j * k_ + q]);
        double denom = 0.0;
        for (int q = 0; q < k_; ++q) denom += std::exp(w[j * k_ + q] - mx);
        c.pi = std::exp(w[j * k_ + k] - mx) / denom;
        c.m1 = mean1_->value[j * k_ + k];
        c.m2 = mean2_->value[j * k_ + k];
        c.s1 = ad::softplus_val(s1_raw_->value[j * k_ + k]) + 1e-6;
        c.s2 = ad::softplus_val(s2_raw_->value[j * k_ + k]) + 1e-6;
        c.rho = independent_ ? 0.0 : 0.999 * std::tanh(rho_raw_->value[j * k_ + k]);
        return c;
    }

    // Lower-triangular Cholesky factor of component (j,k)'s covariance.
    void cholesky(std::int64_t j, int k, double* l11, double* l21, double* l22) const {
        const GmmComponent c = component(j, k);
        *l11 = c.s1;
        *l21 = c.s2 * c.rho;
        *l22 = c.s2 * std::sqrt(1.0 - c.rho * c.rho);
    }

    double pdf(double z1, double z2, std::int64_t j) const {
        double acc = 0.0;
        for (int k = 0; k < k_; ++k) {
            const GmmComponent c = component(j, k);
            const double u = (z1 - c.m1) / c.s1;
            const double v = (z2 - c.m2) / c.s2;
            const double om = 1.0 - c.rho * c.rho;
            const double e = std::exp(-(u * u - 2.0 * c.rho * u * v + v * v) / (2.0 * om));
            acc += c.pi * e / (kTwoPi * c.s1 * c.s2 * std::sqrt(om));
        }
        return acc;
    }

    // Probability of the unit square centred at integer pair (t1, t2).
    double bin_pmf(double t1, double t2, std::int64_t j) const {
        double acc = 0.0;
        for (int k = 0; k < k_; ++k) {
            const GmmComponent c = component(j, k);
            const double a1 = (t1 - 0.5 - c.m1) / c.s1;
            const double b1 = (t1 + 0.5 - c.m1) / c.s1;
            const double a2 = (t2 - 0.5 - c.m2) / c.s2;
            const double b2 = (t2 + 0.5 - c.m2) / c.s2;
            if (c.rho == 0.0) {
                acc += c.pi * std::max(norm_cdf(b1) - norm_cdf(a1), 0.0) *
                       std::max(norm_cdf(b2) - norm_cdf(a2), 0.0);
            } else {
                acc += c.pi * bvn_rect_std(a1, b1, a2, b2, c.rho);
            }
        }
        return acc;
    }

    // Sample code length -sum_j log2 p(z1^j, z2^j) whose expectation is the
    // joint entropy.
    double entropy_bits(const Tensor& z1_hat, const Tensor& z2_hat) const {
        if (z1_hat.numel() != pairs_ || z2_hat.numel() != pairs_)
            throw ShapeError("hyperprior element count does not match the joint model");
        double bits = 0.0;
        for (std::int64_t j = 0; j < pairs_; ++j)
            bits += -std::log2(std::max(bin_pmf(z1_hat[j], z2_hat[j], j), kTinyProb));
        return bits;
    }

    // Marginal univariate GMM bin mass of user i's element j.
    double marginal_bin_pmf(int user, std::int64_t j, double t) const {
        double acc = 0.0;
        for (int k = 0; k < k_; ++k) {
            const GmmComponent c = component(j, k);
            const double m = user == 0 ? c.m1 : c.m2;
            const double s = user == 0 ? c.s1 : c.s2;
            acc += c.pi * gauss_bin_pmf(t, m, s);
        }
        return acc;
    }

    double marginal_mean(int user, std::int64_t j) const {
        double acc = 0.0;
        for (int k = 0; k < k_; ++k) {
            const GmmComponent c = component(j, k);
            acc += c.pi * (user == 0 ? c.m1 : c.m2);
        }
        return acc;
    }

    // E[z2 | z1] under the pairwise GMM; the MMSE estimate of the peer's
    // hyperprior from one's own.
    Tensor mmse_peer_estimate(const Tensor& z1_hat) const {
        if (z1_hat.numel() != pairs_) throw ShapeError("hyperprior size mismatch in MMSE estimate");
        Tensor out(z1_hat.shape());
        for (std::int64_t j = 0; j < pairs_; ++j) {
            double post_sum = 0.0;
            double acc = 0.0;
            for (int k = 0; k < k_; ++k) {
                const GmmComponent c = component(j, k);
                const double u = (z1_hat[j] - c.m1) / c.s1;
                const double lik = c.pi * norm_pdf(u) / c.s1;
                const double cond_mean = c.m2 + c.rho * (c.s2 / c.s1) * (z1_hat[j] - c.m1);
                post_sum += lik;
                acc += lik * cond_mean;
            }
            if (post_sum <= 0.0) {
                // degenerate likelihoods far in the tails: fall back to the
                // component with the nearest mean
                int best = 0;
                double bestd = std::abs(z1_hat[j] - component(j, 0).m1);
                for (int k = 1; k < k_; ++k) {
                    const double d = std::abs(z1_hat[j] - component(j, k).m1);
                    if (d < bestd) {
                        bestd = d;
                        best = k;
                    }
                }
                const GmmComponent c = component(j, best);
                out[j] = c.m2 + c.rho * (c.s2 / c.s1) * (z1_hat[j] - c.m1);
            } else {
                out[j] = acc / post_sum;
            }
        }
        return out;
    }

    // Differentiable -log2 p(z1~, z2~) for training: the GMM convolved with
    // the bivariate uniform, i.e. unit-square masses centred at the relaxed
    // values. Returns a scalar Var (summed over pairs).
    ad::Var rate_bits_var(const ad::Var& z1, const ad::Var& z2) const {
        using namespace ad;
        if (z1->value.numel() != pairs_ || z2->value.numel() != pairs_)
            throw ShapeError("hyperprior element count does not match the joint model");
        Var z1c = reshape(z1, Shape{pairs_, 1});
        Var z2c = reshape(z2, Shape{pairs_, 1});
        Var weights = softmax_rows(weight_raw_);
        Var s1 = add_const(softplus(s1_raw_), 1e-6);
        Var s2 = add_const(softplus(s2_raw_), 1e-6);
        Var rho = independent_ ? constant(Tensor::zeros(Shape{pairs_, k_}))
                               : scale(tanh_(rho_raw_), 0.999);
        // standardized half-open bounds, broadcasting (pairs,1) against (pairs,K)
        auto bound = [&](const Var& z, const Var& mean, const Var& s, double off) {
            return div(neg(sub(mean, add_const(z, off))), s);
        };
        Var b1 = bound(z1c, mean1_, s1, +0.5);
        Var a1 = bound(z1c, mean1_, s1, -0.5);
        Var b2 = bound(z2c, mean2_, s2, +0.5);
        Var a2 = bound(z2c, mean2_, s2, -0.5);
        Var rect = add(sub(sub(bvn_cdf_op(b1, b2, rho), bvn_cdf_op(a1, b2, rho)),
                           bvn_cdf_op(b1, a2, rho)),
                       bvn_cdf_op(a1, a2, rho));
        Var mixed = sum_lastdim(mul(weights, clamp_min(rect, 0.0)));
        return scale(sum_all(log_(clamp_min(mixed, kTinyProb))), -kLog2E);
    }

    ad::Var weight_raw() const { return weight_raw_; }
    ad::Var rho_raw() const { return rho_raw_; }

private:
    std::int64_t pairs_ = 0;
    int k_ = 1;
    bool independent_ = false;
    ad::Var weight_raw_, mean1_, mean2_, s1_raw_, s2_raw_, rho_raw_;
};

}  // namespace dntsc
