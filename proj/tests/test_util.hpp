#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dntsc/core/autodiff.hpp"
#include "dntsc/core/rng.hpp"

namespace test_util {

using dntsc::Rng;
using dntsc::Tensor;
using dntsc::ad::Var;

inline double rel_err(double a, double b, double floor = 1e-6) {
    const double d = std::fabs(a - b);
    const double m = std::max({std::fabs(a), std::fabs(b), floor});
    return d / m;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    int checked = 0;
};

// Central finite differences against reverse-mode gradients. `build` must
// construct a fresh scalar graph from the current leaf values on every call
// (with any internal randomness frozen).
inline GradCheckResult grad_check(const std::vector<Var>& leaves,
                                  const std::function<Var()>& build, Rng& pick, int samples,
                                  double h = 1e-5, double floor = 1e-6) {
    GradCheckResult res;
    for (auto& l : leaves)
        if (l->grad_defined()) l->grad.fill(0.0);
    Var root = build();
    dntsc::ad::backward(root);
    std::vector<std::pair<Var, std::int64_t>> picks;
    for (int s = 0; s < samples; ++s) {
        const auto li = static_cast<std::size_t>(pick.below(leaves.size()));
        const Var& l = leaves[li];
        picks.emplace_back(l, static_cast<std::int64_t>(pick.below(
                                  static_cast<std::uint64_t>(l->value.numel()))));
    }
    // probes where both gradients sit below the FD rounding-noise scale are
    // zero-gradient agreements, not errors
    const double zero_tol = std::max(floor, std::fabs(root->value[0]) * 1e-9);
    for (auto& [l, idx] : picks) {
        const double g_ad = l->grad_defined() ? l->grad[idx] : 0.0;
        const double orig = l->value[idx];
        const double step = h * std::max(1.0, std::fabs(orig));
        l->value[idx] = orig + step;
        const double f_plus = build()->value[0];
        l->value[idx] = orig - step;
        const double f_minus = build()->value[0];
        l->value[idx] = orig;
        const double g_fd = (f_plus - f_minus) / (2.0 * step);
        ++res.checked;
        if (std::max(std::fabs(g_ad), std::fabs(g_fd)) < zero_tol) continue;
        res.max_rel_err = std::max(res.max_rel_err, rel_err(g_ad, g_fd, zero_tol));
    }
    for (auto& l : leaves)
        if (l->grad_defined()) l->grad.fill(0.0);
    return res;
}

// Kolmogorov-Smirnov statistic against U(0,1) after mapping samples through
// the hypothesized CDF.
inline double ks_statistic(std::vector<double> unit_samples) {
    std::sort(unit_samples.begin(), unit_samples.end());
    const double n = static_cast<double>(unit_samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < unit_samples.size(); ++i) {
        const double fi = unit_samples[i];
        d = std::max(d, std::fabs(fi - static_cast<double>(i) / n));
        d = std::max(d, std::fabs(static_cast<double>(i + 1) / n - fi));
    }
    return d;
}

}  // namespace test_util

#include "dntsc/entropy.hpp"
#include "dntsc/models.hpp"

namespace test_util {

// 16x32 images, C4=8: the micro configuration used for gradient checks.
inline dntsc::ModelConfig micro_config(const std::string& pipeline = "ntsc",
                                       std::uint64_t seed = 1234) {
    dntsc::ModelConfig c;
    c.tf.channels = {8, 8, 8, 8};
    c.tf.blocks = {1, 1, 1, 1};
    c.tf.heads = {2, 2, 2, 2};
    c.tf.patch_size = 2;
    c.tf.window_size = 4;
    c.tf.window_shift = 2;
    c.tf.hyper_channels = 4;
    c.tf.mlp_ratio = 2;
    c.tf.seed = seed;
    c.img_h = 16;
    c.img_w = 32;
    c.pipeline = pipeline;
    c.bandwidths = dntsc::BandwidthSet({2, 4, 6, 8, 10, 12, 14, 16});
    c.jscc_heads = 2;
    c.eta = 1.0;
    c.power = 1.0;
    return c;
}

struct GmmSpec {
    double pi, m1, m2, s1, s2, rho;
};

inline double softplus_inv(double y) { return std::log(std::expm1(y)); }

// Builds a pairwise GMM whose component parameters are exactly the given
// specs (weights normalized over each pair).
inline dntsc::JointHyperModel make_gmm(std::int64_t pairs,
                                       const std::vector<std::vector<GmmSpec>>& comps) {
    const int K = static_cast<int>(comps.at(0).size());
    dntsc::nn::ParamStore ps(0);
    dntsc::JointHyperModel model(ps, "d", pairs, K);
    auto wr = ps.get("d.weight_raw");
    auto m1 = ps.get("d.mean1");
    auto m2 = ps.get("d.mean2");
    auto s1 = ps.get("d.s1_raw");
    auto s2 = ps.get("d.s2_raw");
    auto rr = ps.get("d.rho_raw");
    for (std::int64_t j = 0; j < pairs; ++j) {
        for (int k = 0; k < K; ++k) {
            const GmmSpec& c = comps.at(static_cast<std::size_t>(j)).at(static_cast<std::size_t>(k));
            wr->value[j * K + k] = std::log(c.pi);
            m1->value[j * K + k] = c.m1;
            m2->value[j * K + k] = c.m2;
            s1->value[j * K + k] = softplus_inv(c.s1 - 1e-6);
            s2->value[j * K + k] = softplus_inv(c.s2 - 1e-6);
            rr->value[j * K + k] = std::atanh(c.rho / 0.999);
        }
    }
    return model;
}

}  // namespace test_util
