#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "dntsc/core/autodiff.hpp"
#include "dntsc/core/ops.hpp"
#include "dntsc/core/rng.hpp"

namespace dntsc {
namespace nn {

using ad::Var;

// Registry of trainable leaves. Initialization is keyed on (seed, name) so a
// parameter's initial value does not depend on construction order; the same
// seed always rebuilds the exact same model.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    Var add(const std::string& name, Tensor init) {
        if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        auto v = ad::leaf(std::move(init));
        params_[name] = v;
        return v;
    }

    Var add_xavier(const std::string& name, std::int64_t fan_in, std::int64_t fan_out, Shape shape,
                   double gain = 1.0) {
        Rng rng = substream(seed_, name);
        const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        return add(name, Tensor::uniform(std::move(shape), -a, a, rng));
    }

    Var add_normal(const std::string& name, Shape shape, double stddev) {
        Rng rng = substream(seed_, name);
        return add(name, Tensor::normal(std::move(shape), 0.0, stddev, rng));
    }

    Var add_constant(const std::string& name, Shape shape, double v) {
        return add(name, Tensor::full(std::move(shape), v));
    }

    Var get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return params_.count(name) != 0; }

    const std::map<std::string, Var>& all() const { return params_; }

    void zero_grad() {
        for (auto& [name, v] : params_)
            if (v->grad_defined()) v->grad.fill(0.0);
    }

    void freeze(const std::string& prefix) { frozen_prefixes_.insert(prefix); }
    void unfreeze_all() { frozen_prefixes_.clear(); }
    bool is_frozen(const std::string& name) const {
        for (const auto& p : frozen_prefixes_)
            if (name.rfind(p, 0) == 0) return true;
        return false;
    }

    std::int64_t count(const std::string& prefix = "") const {
        std::int64_t n = 0;
        for (const auto& [name, v] : params_)
            if (name.rfind(prefix, 0) == 0) n += v->value.numel();
        return n;
    }

private:
    std::uint64_t seed_;
    std::map<std::string, Var> params_;
    std::set<std::string> frozen_prefixes_;
};

struct Linear {
    Var w, b;
    std::int64_t din = 0, dout = 0;

    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out,
           double gain = 1.0)
        : din(in), dout(out) {
        w = ps.add_xavier(name + ".w", in, out, Shape{in, out}, gain);
        b = ps.add_constant(name + ".b", Shape{1, out}, 0.0);
    }

    Var operator()(const Var& x) const { return ad::add(ad::matmul(x, w), b); }
};

struct Conv2d {
    Var w, b;
    std::int64_t kh = 0, kw = 0, stride = 1, pad = 0, cin = 0, cout = 0;

    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out,
           std::int64_t k, std::int64_t s, std::int64_t p, double gain = 1.0)
        : kh(k), kw(k), stride(s), pad(p), cin(in), cout(out) {
        w = ps.add_xavier(name + ".w", k * k * in, out, Shape{k * k * in, out}, gain);
        b = ps.add_constant(name + ".b", Shape{1, out}, 0.0);
    }

    // returns tokens plus the output grid dims
    Var operator()(const Var& x, std::int64_t H, std::int64_t W, std::int64_t* ho,
                   std::int64_t* wo) const {
        *ho = ad::conv_out_dim(H, kh, stride, pad);
        *wo = ad::conv_out_dim(W, kw, stride, pad);
        return ad::add(ad::conv2d(x, H, W, w, kh, kw, stride, pad), b);
    }
};

struct ConvTranspose2d {
    Var w, b;
    std::int64_t kh = 0, kw = 0, stride = 1, pad = 0, cin = 0, cout = 0;

    ConvTranspose2d() = default;
    ConvTranspose2d(ParamStore& ps, const std::string& name, std::int64_t in, std::int64_t out,
                    std::int64_t k, std::int64_t s, std::int64_t p, double gain = 1.0)
        : kh(k), kw(k), stride(s), pad(p), cin(in), cout(out) {
        w = ps.add_xavier(name + ".w", k * k * in, out, Shape{k * k * in, out}, gain);
        b = ps.add_constant(name + ".b", Shape{1, out}, 0.0);
    }

    Var operator()(const Var& x, std::int64_t H, std::int64_t W, std::int64_t out_h,
                   std::int64_t out_w) const {
        return ad::add(ad::conv_transpose2d(x, H, W, w, kh, kw, stride, pad, out_h, out_w), b);
    }
};

struct LayerNorm {
    Var gamma, beta;

    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, std::int64_t dim) {
        gamma = ps.add_constant(name + ".gamma", Shape{dim}, 1.0);
        beta = ps.add_constant(name + ".beta", Shape{dim}, 0.0);
    }

    Var operator()(const Var& x) const { return ad::layer_norm(x, gamma, beta); }
};

struct Mlp {
    Linear fc1, fc2;

    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& name, std::int64_t dim, std::int64_t hidden)
        : fc1(ps, name + ".fc1", dim, hidden), fc2(ps, name + ".fc2", hidden, dim) {}

    Var operator()(const Var& x) const { return fc2(ad::gelu(fc1(x))); }
};

// Multi-head self-attention over a token matrix (T,C). An optional additive
// mask (T,T) and an optional relative-position-bias gather are applied to the
// attention logits.
struct MultiheadAttention {
    Linear qkv, proj;
    std::int64_t dim = 0, heads = 0;
    Var rpb_table;                                          // ((2wh-1)*(2ww-1), heads) or empty
    std::shared_ptr<std::vector<std::int64_t>> rpb_index;   // T*T pair indices

    MultiheadAttention() = default;
    MultiheadAttention(ParamStore& ps, const std::string& name, std::int64_t d, std::int64_t h)
        : qkv(ps, name + ".qkv", d, 3 * d), proj(ps, name + ".proj", d, d), dim(d), heads(h) {
        if (d % h != 0) throw ConfigError("attention dim not divisible by head count");
    }

    void add_relative_bias(ParamStore& ps, const std::string& name, std::int64_t win_h,
                           std::int64_t win_w) {
        rpb_table = ps.add_normal(name + ".rpb", Shape{(2 * win_h - 1) * (2 * win_w - 1), heads},
                                  0.02);
        auto idx = std::make_shared<std::vector<std::int64_t>>();
        const std::int64_t t = win_h * win_w;
        idx->reserve(static_cast<std::size_t>(t * t));
        for (std::int64_t i = 0; i < t; ++i)
            for (std::int64_t j = 0; j < t; ++j) {
                const std::int64_t dy = i / win_w - j / win_w + (win_h - 1);
                const std::int64_t dx = i % win_w - j % win_w + (win_w - 1);
                idx->push_back(dy * (2 * win_w - 1) + dx);
            }
        rpb_index = idx;
    }

    Var operator()(const Var& x, const Var& mask = nullptr) const {
        const std::int64_t t = x->value.dim(0);
        const std::int64_t hd = dim / heads;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
        Var qkv_out = qkv(x);
        std::vector<Var> head_outs;
        head_outs.reserve(static_cast<std::size_t>(heads));
        for (std::int64_t h = 0; h < heads; ++h) {
            Var q = ad::slice_cols(qkv_out, h * hd, hd);
            Var k = ad::slice_cols(qkv_out, dim + h * hd, hd);
            Var v = ad::slice_cols(qkv_out, 2 * dim + h * hd, hd);
            Var logits = ad::scale(ad::matmul(q, ad::transpose2d(k)), scale);
            if (rpb_table) {
                Var bias = ad::gather_rows(rpb_table, rpb_index);       // (T*T, heads)
                Var bh = ad::slice_cols(bias, h, 1);                    // (T*T, 1)
                logits = ad::add(logits, ad::reshape(bh, Shape{t, t}));
            }
            if (mask) logits = ad::add(logits, mask);
            Var attn = ad::softmax_rows(logits);
            head_outs.push_back(ad::matmul(attn, v));
        }
        return proj(ad::concat_cols(head_outs));
    }
};

// Pre-norm transformer block over a flat token sequence.
struct TransformerBlock {
    LayerNorm ln1, ln2;
    MultiheadAttention attn;
    Mlp mlp;

    TransformerBlock() = default;
    TransformerBlock(ParamStore& ps, const std::string& name, std::int64_t dim, std::int64_t heads,
                     std::int64_t mlp_ratio)
        : ln1(ps, name + ".ln1", dim),
          ln2(ps, name + ".ln2", dim),
          attn(ps, name + ".attn", dim, heads),
          mlp(ps, name + ".mlp", dim, dim * mlp_ratio) {}

    Var operator()(const Var& x) const {
        Var y = ad::add(x, attn(ln1(x)));
        return ad::add(y, mlp(ln2(y)));
    }
};

// Windowed-attention block on a (H*W, C) grid: optional cyclic shift, window
// partition, masked attention within windows, merge, residual MLP.
struct SwinBlock {
    LayerNorm ln1, ln2;
    MultiheadAttention attn;
    Mlp mlp;
    std::int64_t grid_h = 0, grid_w = 0, win_h = 0, win_w = 0, shift_h = 0, shift_w = 0;
    std::shared_ptr<std::vector<std::int64_t>> partition_idx, merge_idx;
    std::vector<Var> window_masks;  // per window; empty entries mean no mask

    SwinBlock() = default;
    SwinBlock(ParamStore& ps, const std::string& name, std::int64_t dim, std::int64_t heads,
              std::int64_t mlp_ratio, std::int64_t H, std::int64_t W, std::int64_t window,
              std::int64_t shift_req)
        : ln1(ps, name + ".ln1", dim),
          ln2(ps, name + ".ln2", dim),
          attn(ps, name + ".attn", dim, heads),
          mlp(ps, name + ".mlp", dim, dim * mlp_ratio),
          grid_h(H),
          grid_w(W) {
        win_h = std::min<std::int64_t>(window, H);
        win_w = std::min<std::int64_t>(window, W);
        if (H % win_h != 0 || W % win_w != 0)
            throw ConfigError("window does not tile the latent grid");
        const bool can_shift_h = win_h < H && win_h > 1;
        const bool can_shift_w = win_w < W && win_w > 1;
        if (shift_req > 0 && (can_shift_h || can_shift_w)) {
            shift_h = can_shift_h ? std::min(shift_req, win_h - 1) : 0;
            shift_w = can_shift_w ? std::min(shift_req, win_w - 1) : 0;
        }
        attn.add_relative_bias(ps, name + ".attn", win_h, win_w);
        build_indices();
    }

    Var operator()(const Var& x) const {
        const std::int64_t t = win_h * win_w;
        Var normed = ln1(x);
        Var part = ad::gather_rows(normed, partition_idx);
        const std::int64_t num_windows = (grid_h / win_h) * (grid_w / win_w);
        std::vector<Var> outs;
        outs.reserve(static_cast<std::size_t>(num_windows));
        for (std::int64_t wi = 0; wi < num_windows; ++wi) {
            Var tokens = ad::slice_rows(part, wi * t, t);
            Var m = window_masks.empty() ? nullptr : window_masks[static_cast<std::size_t>(wi)];
            outs.push_back(attn(tokens, m));
        }
        Var merged = ad::gather_rows(ad::concat_rows(outs), merge_idx);
        Var y = ad::add(x, merged);
        return ad::add(y, mlp(ln2(y)));
    }

private:
    void build_indices() {
        const std::int64_t H = grid_h, W = grid_w;
        auto part = std::make_shared<std::vector<std::int64_t>>();
        part->resize(static_cast<std::size_t>(H * W));
        auto merge = std::make_shared<std::vector<std::int64_t>>();
        merge->resize(static_cast<std::size_t>(H * W));
        const std::int64_t wy_count = H / win_h, wx_count = W / win_w;
        std::vector<std::int64_t> src_of_slot(static_cast<std::size_t>(H * W));
        std::int64_t slot = 0;
        for (std::int64_t wy = 0; wy < wy_count; ++wy)
            for (std::int64_t wx = 0; wx < wx_count; ++wx)
                for (std::int64_t iy = 0; iy < win_h; ++iy)
                    for (std::int64_t ix = 0; ix < win_w; ++ix) {
                        const std::int64_t sy = (wy * win_h + iy + shift_h) % H;
                        const std::int64_t sx = (wx * win_w + ix + shift_w) % W;
                        const std::int64_t src = sy * W + sx;
                        (*part)[static_cast<std::size_t>(slot)] = src;
                        src_of_slot[static_cast<std::size_t>(slot)] = src;
                        ++slot;
                    }
        for (std::int64_t s = 0; s < H * W; ++s)
            (*merge)[static_cast<std::size_t>(src_of_slot[static_cast<std::size_t>(s)])] = s;
        partition_idx = part;
        merge_idx = merge;
        if (shift_h == 0 && shift_w == 0) return;
        // Region labels of source positions; attention across wrapped regions
        // is masked out (standard shifted-window scheme).
        auto label_of = [&](std::int64_t pos, std::int64_t dimsz, std::int64_t win,
                            std::int64_t shift) -> std::int64_t {
            if (shift == 0) return 0;
            if (pos < dimsz - win) return 0;
            if (pos < dimsz - shift) return 1;
            return 2;
        };
        const std::int64_t t = win_h * win_w;
        window_masks.resize(static_cast<std::size_t>(wy_count * wx_count));
        slot = 0;
        for (std::int64_t wi = 0; wi < wy_count * wx_count; ++wi) {
            std::vector<std::int64_t> labels(static_cast<std::size_t>(t));
            bool uniform = true;
            for (std::int64_t i = 0; i < t; ++i) {
                const std::int64_t src = src_of_slot[static_cast<std::size_t>(slot + i)];
                const std::int64_t sy = src / W, sx = src % W;
                labels[static_cast<std::size_t>(i)] =
                    label_of(sy, H, win_h, shift_h) * 3 + label_of(sx, W, win_w, shift_w);
                if (labels[static_cast<std::size_t>(i)] != labels[0]) uniform = false;
            }
            if (!uniform) {
                Tensor m(Shape{t, t});
                for (std::int64_t i = 0; i < t; ++i)
                    for (std::int64_t j = 0; j < t; ++j)
                        m[i * t + j] = labels[static_cast<std::size_t>(i)] ==
                                               labels[static_cast<std::size_t>(j)]
                                           ? 0.0
                                           : -1e9;
                window_masks[static_cast<std::size_t>(wi)] = ad::constant(std::move(m));
            }
            slot += t;
        }
    }
};

}  // namespace nn
}  // namespace dntsc
