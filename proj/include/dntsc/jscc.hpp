#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dntsc/core/nn.hpp"
#include "dntsc/entropy.hpp"

namespace dntsc {

// Admissible per-token bandwidth costs in real dimensions; members must be
// even so each token's output pairs into k/2 complex symbols.
struct BandwidthSet {
    std::vector<std::int64_t> values;

    BandwidthSet() = default;
    explicit BandwidthSet(std::vector<std::int64_t> v) : values(std::move(v)) { validate(); }

    static BandwidthSet default_set() {
        std::vector<std::int64_t> v;
        for (int a = 1; a <= 20; ++a) v.push_back(8 * a);
        return BandwidthSet(std::move(v));
    }

    void validate() const {
        if (values.empty()) throw ConfigError("bandwidth set must not be empty");
        std::int64_t prev = 0;
        for (auto v : values) {
            if (v <= 0 || v % 2 != 0) throw ConfigError("bandwidth costs must be positive and even");
            if (v <= prev) throw ConfigError("bandwidth set must be strictly increasing");
            prev = v;
        }
    }

    std::size_t index_of(std::int64_t k) const {
        for (std::size_t i = 0; i < values.size(); ++i)
            if (values[i] == k) return i;
        throw ConfigError("bandwidth value not in set: " + std::to_string(k));
    }
};

// Nearest member of V to eta * token_bits; ties break toward the smaller
// member, out-of-range targets clamp to the extremes.
inline std::int64_t select_bandwidth(double token_bits, double eta, const BandwidthSet& V) {
    V.validate();
    if (token_bits < 0.0) throw ParamError("token bit count must be nonnegative");
    if (!(eta > 0.0)) throw ParamError("eta must be positive");
    const double target = eta * token_bits;
    std::int64_t best = V.values.front();
    double best_d = std::fabs(target - static_cast<double>(best));
    for (auto v : V.values) {
        const double d = std::fabs(target - static_cast<double>(v));
        if (d < best_d) {
            best_d = d;
            best = v;
        }
    }
    return best;
}

struct RatePlan {
    std::vector<std::int64_t> k_self;      // per-token bandwidth of this user
    std::vector<std::int64_t> k_peer_est;  // per-token peer context

    std::int64_t total_real_dims() const {
        std::int64_t s = 0;
        for (auto k : k_self) s += k;
        return s;
    }
    std::int64_t n() const { return total_real_dims() / 2; }

    void validate(const BandwidthSet& V) const {
        if (k_self.size() != k_peer_est.size()) throw ShapeError("rate plan length mismatch");
        for (auto k : k_self) V.index_of(k);
        for (auto k : k_peer_est) V.index_of(k);
    }
};

inline RatePlan make_rate_plan(const std::vector<double>& self_token_bits,
                               const std::vector<double>& peer_token_bits, double eta,
                               const BandwidthSet& V) {
    if (self_token_bits.size() != peer_token_bits.size())
        throw ShapeError("token bit vectors must have equal length");
    RatePlan plan;
    plan.k_self.reserve(self_token_bits.size());
    plan.k_peer_est.reserve(peer_token_bits.size());
    for (double b : self_token_bits) plan.k_self.push_back(select_bandwidth(b, eta, V));
    for (double b : peer_token_bits) plan.k_peer_est.push_back(select_bandwidth(b, eta, V));
    return plan;
}

// Interleaved (re, im) channel symbols with per-token segment boundaries.
struct ChannelVector {
    Tensor data;  // (2n, 1)
    std::vector<std::int64_t> seg_real_dims;
    double power = 1.0;

    std::int64_t n() const { return data.numel() / 2; }
    double mean_symbol_power() const {
        double s = 0.0;
        for (std::int64_t i = 0; i < data.numel(); ++i) s += data[i] * data[i];
        return s / static_cast<double>(n());
    }
};

// Overall transmission rate in channel uses per source dimension: the payload
// channel uses plus the capacity-normalized share of the joint hyperprior
// cost.
inline double transmission_rate(double n_channel_uses, double joint_hyper_bits,
                                double channel_capacity, std::int64_t img_h, std::int64_t img_w,
                                std::int64_t img_c) {
    if (!(channel_capacity > 0.0)) throw ParamError("capacity must be positive");
    if (n_channel_uses < 0.0 || joint_hyper_bits < 0.0)
        throw ParamError("rates must be nonnegative");
    if (img_h <= 0 || img_w <= 0 || img_c <= 0) throw ParamError("image dims must be positive");
    return (n_channel_uses + joint_hyper_bits / (2.0 * channel_capacity)) /
           static_cast<double>(img_c * img_h * img_w);
}

// Token-wise variable-rate JSCC encoder: latent tokens are concatenated with
// two learnable rate tokens (own bandwidth, estimated peer bandwidth), mixed
// by a transformer block, projected by one head per member of V, and power
// normalized.
struct JsccEncoder {
    BandwidthSet V;
    std::int64_t latent_c = 0, token_len = 4, dim = 0;
    ad::Var tokens_self, tokens_peer;  // (|V|, token_len)
    nn::TransformerBlock block;
    std::vector<nn::Linear> heads;  // per member of V: dim -> v

    JsccEncoder() = default;
    JsccEncoder(nn::ParamStore& ps, const std::string& name, const BandwidthSet& v,
                std::int64_t c4, std::int64_t heads_count, std::int64_t rate_token_len = 4)
        : V(v), latent_c(c4), token_len(rate_token_len), dim(c4 + 2 * rate_token_len) {
        tokens_self = ps.add_normal(name + ".tokens_self",
                                    Shape{static_cast<std::int64_t>(V.values.size()), token_len}, 0.02);
        tokens_peer = ps.add_normal(name + ".tokens_peer",
                                    Shape{static_cast<std::int64_t>(V.values.size()), token_len}, 0.02);
        block = nn::TransformerBlock(ps, name + ".block", dim, heads_count, 4);
        heads.reserve(V.values.size());
        for (std::size_t i = 0; i < V.values.size(); ++i)
            heads.emplace_back(ps, name + ".head" + std::to_string(V.values[i]), dim, V.values[i]);
    }

    ad::Var forward(const ad::Var& y_tokens, const RatePlan& plan, double power) const {
        using namespace ad;
        const std::int64_t l = y_tokens->value.dim(0);
        if (static_cast<std::int64_t>(plan.k_self.size()) != l)
            throw ShapeError("rate plan does not match token count");
        auto self_idx = std::make_shared<std::vector<std::int64_t>>();
        auto peer_idx = std::make_shared<std::vector<std::int64_t>>();
        for (std::int64_t j = 0; j < l; ++j) {
            self_idx->push_back(static_cast<std::int64_t>(
                V.index_of(plan.k_self[static_cast<std::size_t>(j)])));
            peer_idx->push_back(static_cast<std::int64_t>(
                V.index_of(plan.k_peer_est[static_cast<std::size_t>(j)])));
        }
        Var x = concat_cols({y_tokens, gather_rows(tokens_self, self_idx),
                             gather_rows(tokens_peer, peer_idx)});
        x = block(x);
        std::vector<Var> segs;
        segs.reserve(static_cast<std::size_t>(l));
        for (std::int64_t j = 0; j < l; ++j) {
            const std::size_t hi = V.index_of(plan.k_self[static_cast<std::size_t>(j)]);
            Var row = heads[hi](slice_rows(x, j, 1));  // (1, k_j)
            segs.push_back(reshape(row, Shape{plan.k_self[static_cast<std::size_t>(j)], 1}));
        }
        Var s = concat_rows(segs);  // (2n, 1)
        // exact per-vector power normalization: s <- s * sqrt(nP / ||s||^2)
        const double n_complex = static_cast<double>(plan.n());
        Var ss = sum_all(square(s));
        Var scale_v = sqrt_(div(constant(Tensor::scalar(n_complex * power)), ss));
        return mul(s, scale_v);
    }

    ChannelVector encode(const Latent& y, const RatePlan& plan, double power) const {
        ad::NoGradGuard ng;
        plan.validate(V);
        ChannelVector cv;
        cv.data = forward(ad::constant(y.token_view()), plan, power)->value;
        cv.seg_real_dims = plan.k_self;
        cv.power = power;
        return cv;
    }
};

// Mirror of the encoder: per-token FC from the received segment back to C4,
// the same two-token rate context, a transformer block and a linear output.
struct JsccDecoder {
    BandwidthSet V;
    std::int64_t latent_c = 0, token_len = 4, dim = 0;
    ad::Var tokens_self, tokens_peer;
    nn::TransformerBlock block;
    nn::Linear out;
    std::vector<nn::Linear> heads;  // per member of V: v -> C4

    JsccDecoder() = default;
    JsccDecoder(nn::ParamStore& ps, const std::string& name, const BandwidthSet& v,
                std::int64_t c4, std::int64_t heads_count, std::int64_t rate_token_len = 4)
        : V(v), latent_c(c4), token_len(rate_token_len), dim(c4 + 2 * rate_token_len) {
        tokens_self = ps.add_normal(name + ".tokens_self",
                                    Shape{static_cast<std::int64_t>(V.values.size()), token_len}, 0.02);
        tokens_peer = ps.add_normal(name + ".tokens_peer",
                                    Shape{static_cast<std::int64_t>(V.values.size()), token_len}, 0.02);
        block = nn::TransformerBlock(ps, name + ".block", dim, heads_count, 4);
        out = nn::Linear(ps, name + ".out", dim, c4);
        heads.reserve(V.values.size());
        for (std::size_t i = 0; i < V.values.size(); ++i)
            heads.emplace_back(ps, name + ".head" + std::to_string(V.values[i]), V.values[i], c4);
    }

    ad::Var forward(const ad::Var& s_hat, const RatePlan& plan) const {
        using namespace ad;
        const std::int64_t l = static_cast<std::int64_t>(plan.k_self.size());
        if (s_hat->value.numel() != plan.total_real_dims())
            throw FramingError("received vector length disagrees with the rate plan");
        std::vector<Var> rows;
        rows.reserve(static_cast<std::size_t>(l));
        std::int64_t off = 0;
        for (std::int64_t j = 0; j < l; ++j) {
            const std::int64_t k = plan.k_self[static_cast<std::size_t>(j)];
            Var seg = reshape(slice_rows(s_hat, off, k), Shape{1, k});
            rows.push_back(heads[V.index_of(k)](seg));
            off += k;
        }
        auto self_idx = std::make_shared<std::vector<std::int64_t>>();
        auto peer_idx = std::make_shared<std::vector<std::int64_t>>();
        for (std::int64_t j = 0; j < l; ++j) {
            self_idx->push_back(static_cast<std::int64_t>(
                V.index_of(plan.k_self[static_cast<std::size_t>(j)])));
            peer_idx->push_back(static_cast<std::int64_t>(
                V.index_of(plan.k_peer_est[static_cast<std::size_t>(j)])));
        }
        Var x = concat_cols({concat_rows(rows), gather_rows(tokens_self, self_idx),
                             gather_rows(tokens_peer, peer_idx)});
        return out(block(x));  // (l, C4)
    }

    Latent decode(const ChannelVector& s_hat, const RatePlan& plan, std::int64_t latent_h,
                  std::int64_t latent_w) const {
        ad::NoGradGuard ng;
        plan.validate(V);
        if (s_hat.seg_real_dims != plan.k_self)
            throw FramingError("segment boundaries disagree with the rate plan");
        Tensor y = forward(ad::constant(s_hat.data), plan)->value;
        return Latent::from_tokens(latent_h, latent_w, latent_c, y);
    }
};

}  // namespace dntsc
