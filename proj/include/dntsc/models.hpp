#pragma once

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dntsc/alignment.hpp"
#include "dntsc/bitstream.hpp"
#include "dntsc/channel.hpp"
#include "dntsc/entropy.hpp"
#include "dntsc/jscc.hpp"
#include "dntsc/quant.hpp"
#include "dntsc/range_coder.hpp"
#include "dntsc/transforms.hpp"

namespace dntsc {

struct ModelConfig {
    TransformConfig tf;
    std::int64_t img_h = 128, img_w = 256;
    int mixtures = 1;
    bool independent_hyper = false;
    bool symmetric_init = false;  // initialize both users' nets identically
    std::string pipeline = "ntsc";  // "ntsc" | "ntscc"
    BandwidthSet bandwidths = BandwidthSet::default_set();
    std::int64_t jscc_heads = 8;
    std::int64_t rate_token_len = 4;
    double eta = 1.0;
    double power = 1.0;

    std::int64_t latent_h() const { return img_h / 16; }
    std::int64_t latent_w() const { return img_w / 16; }
    std::int64_t latent_c() const { return tf.channels[3]; }
    std::int64_t tokens() const { return latent_h() * latent_w(); }
    std::int64_t hyper_h() const { return detail::ceil_div2(detail::ceil_div2(latent_h())); }
    std::int64_t hyper_w() const { return detail::ceil_div2(detail::ceil_div2(latent_w())); }
    std::int64_t hyper_elems() const { return hyper_h() * hyper_w() * tf.hyper_channels; }

    void validate() const {
        tf.validate();
        if (img_h % 16 != 0 || img_w % 16 != 0)
            throw ConfigError("image dims must be divisible by 16");
        if (pipeline != "ntsc" && pipeline != "ntscc") throw ConfigError("unknown pipeline");
        if (mixtures < 1) throw ConfigError("mixture count must be >= 1");
        if (!(eta > 0.0) || !(power > 0.0)) throw ConfigError("eta and power must be positive");
        if (pipeline == "ntscc") bandwidths.validate();
        if (tf.hyper_channels * hyper_h() * hyper_w() >= tokens() * latent_c())
            throw ConfigError("hyperprior must be smaller than the latent");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["channels"] = tf.channels;
        j["blocks"] = tf.blocks;
        j["heads"] = tf.heads;
        j["patch_size"] = tf.patch_size;
        j["window_size"] = tf.window_size;
        j["window_shift"] = tf.window_shift;
        j["hyper_channels"] = tf.hyper_channels;
        j["mlp_ratio"] = tf.mlp_ratio;
        j["seed"] = tf.seed;
        j["img_h"] = img_h;
        j["img_w"] = img_w;
        j["mixtures"] = mixtures;
        j["independent_hyper"] = independent_hyper;
        j["symmetric_init"] = symmetric_init;
        j["pipeline"] = pipeline;
        j["bandwidths"] = bandwidths.values;
        j["jscc_heads"] = jscc_heads;
        j["rate_token_len"] = rate_token_len;
        j["eta"] = eta;
        j["power"] = power;
        return j;
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.tf.channels = j.at("channels");
        c.tf.blocks = j.at("blocks");
        c.tf.heads = j.at("heads");
        c.tf.patch_size = j.at("patch_size");
        c.tf.window_size = j.at("window_size");
        c.tf.window_shift = j.at("window_shift");
        c.tf.hyper_channels = j.at("hyper_channels");
        c.tf.mlp_ratio = j.at("mlp_ratio");
        c.tf.seed = j.at("seed");
        c.img_h = j.at("img_h");
        c.img_w = j.at("img_w");
        c.mixtures = j.at("mixtures");
        c.independent_hyper = j.at("independent_hyper");
        c.symmetric_init = j.at("symmetric_init");
        c.pipeline = j.at("pipeline");
        c.bandwidths = BandwidthSet(j.at("bandwidths").get<std::vector<std::int64_t>>());
        c.jscc_heads = j.at("jscc_heads");
        c.rate_token_len = j.at("rate_token_len");
        c.eta = j.at("eta");
        c.power = j.at("power");
        return c;
    }
};

// The full two-user model: distributed analysis/hyper transforms per user, a
// shared joint synthesis transform, per-user localization networks, the joint
// hyperprior density, and (for D-NTSCC) per-user JSCC codecs.
struct Model {
    ModelConfig cfg;
    nn::ParamStore store;
    std::array<AnalysisTransform, 2> ga;
    std::array<HyperAnalysis, 2> ha;
    std::array<HyperSynthesis, 2> hs;
    SynthesisTransform gs;
    std::array<LocalizationNet, 2> loc;
    JointHyperModel density;
    std::array<JsccEncoder, 2> fe;
    std::array<JsccDecoder, 2> fd;

    explicit Model(ModelConfig config) : cfg(std::move(config)), store(cfg.tf.seed) {
        cfg.validate();
        for (int u = 0; u < 2; ++u) {
            const std::string su = std::to_string(u + 1);
            ga[static_cast<std::size_t>(u)] =
                AnalysisTransform(store, "ga" + su, cfg.tf, cfg.img_h, cfg.img_w);
            ha[static_cast<std::size_t>(u)] =
                HyperAnalysis(store, "ha" + su, cfg.latent_c(), cfg.tf.hyper_channels);
            hs[static_cast<std::size_t>(u)] =
                HyperSynthesis(store, "hs" + su, cfg.latent_c(), cfg.tf.hyper_channels);
            loc[static_cast<std::size_t>(u)] = LocalizationNet(store, "loc" + su, cfg.latent_c());
        }
        gs = SynthesisTransform(store, "gs", cfg.tf, cfg.img_h, cfg.img_w);
        density = JointHyperModel(store, "density", cfg.hyper_elems(), cfg.mixtures,
                                  cfg.independent_hyper);
        if (has_jscc()) {
            for (int u = 0; u < 2; ++u) {
                const std::string su = std::to_string(u + 1);
                fe[static_cast<std::size_t>(u)] =
                    JsccEncoder(store, "fe" + su, cfg.bandwidths, cfg.latent_c(), cfg.jscc_heads,
                                cfg.rate_token_len);
                fd[static_cast<std::size_t>(u)] =
                    JsccDecoder(store, "fd" + su, cfg.bandwidths, cfg.latent_c(), cfg.jscc_heads,
                                cfg.rate_token_len);
            }
        }
        if (cfg.symmetric_init) tie_user_init();
    }

    bool has_jscc() const { return cfg.pipeline == "ntscc"; }

    // Copies user 1's initial parameters onto user 2's. The parameter sets
    // stay independent objects and diverge during training.
    void tie_user_init() {
        for (const auto& [name, v] : store.all()) {
            if (name.size() < 3) continue;
            const auto pos = name.find('1');
            if (pos == std::string::npos) continue;
            const std::string head = name.substr(0, pos);
            if (head != "ga" && head != "ha" && head != "hs" && head != "loc" && head != "fe" &&
                head != "fd")
                continue;
            std::string peer = name;
            peer[pos] = '2';
            if (store.has(peer)) store.get(peer)->value = v->value;
        }
    }

    Tensor image_as_tokens(const Tensor& img) const {
        if (img.ndim() != 3 || img.dim(0) != cfg.img_h || img.dim(1) != cfg.img_w || img.dim(2) != 3)
            throw ShapeError("expected a (H,W,3) image matching the model config");
        if (!img.all_finite()) throw InputError("image contains non-finite values");
        return img.reshaped(Shape{cfg.img_h * cfg.img_w, 3});
    }

    // MMSE estimate of the *other* user's hyperprior from one's own.
    Tensor mmse_peer(int user, const Tensor& own_z) const {
        if (user == 0) return density.mmse_peer_estimate(own_z.reshaped(Shape{cfg.hyper_elems()}));
        // swapped direction: E[z1 | z2]
        Tensor flat = own_z.reshaped(Shape{cfg.hyper_elems()});
        Tensor out(flat.shape());
        for (std::int64_t j = 0; j < density.pairs(); ++j) {
            double post_sum = 0.0, acc = 0.0;
            for (int k = 0; k < density.mixtures(); ++k) {
                const GmmComponent c = density.component(j, k);
                const double u = (flat[j] - c.m2) / c.s2;
                const double lik = c.pi * norm_pdf(u) / c.s2;
                acc += lik * (c.m1 + c.rho * (c.s1 / c.s2) * (flat[j] - c.m2));
                post_sum += lik;
            }
            const GmmComponent c0 = density.component(j, 0);
            out[j] = post_sum > 0.0 ? acc / post_sum
                                    : c0.m1 + c0.rho * (c0.s1 / c0.s2) * (flat[j] - c0.m2);
        }
        return out;
    }
};

// Expected per-token code length of the peer's latent obtained by running the
// peer's hyper synthesis on the MMSE-estimated hyperprior.
inline std::vector<double> peer_rate_estimate(const Model& model, int peer_user,
                                              const Tensor& z_star) {
    const auto& hsyn = model.hs[static_cast<std::size_t>(peer_user)];
    Hyperprior zs(model.cfg.hyper_h(), model.cfg.hyper_w(), model.cfg.tf.hyper_channels,
                  z_star.reshaped(Shape{model.cfg.hyper_h(), model.cfg.hyper_w(),
                                        model.cfg.tf.hyper_channels}));
    GaussianParams p = hsyn.synthesize(zs, model.cfg.latent_h(), model.cfg.latent_w());
    return per_token_entropy_bits(p);
}

// ---------------------------------------------------------------------------
// D-NTSC inference paths

struct NtscEncoded {
    std::array<Bitstream, 2> streams;
    std::array<Latent, 2> y_bar;
    std::array<Hyperprior, 2> z_bar;
    std::array<RateReport, 2> rates;  // joint_hyper_bits filled pair-level
};

inline NtscEncoded ntsc_encode_pair(const Model& model, const Tensor& x1, const Tensor& x2,
                                    bool embed_tables = true) {
    NtscEncoded enc;
    const Tensor* imgs[2] = {&x1, &x2};
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        // each user's bitstream depends only on its own image and the shared model
        Latent y = model.ga[su].analyze(*imgs[u]);
        Hyperprior z = model.ha[su].analyze(y);
        Hyperprior z_bar(z.h, z.w, z.c, quantize(z.grid));
        Latent y_bar(y.h, y.w, y.c, quantize(y.grid));
        GaussianParams params = model.hs[su].synthesize(z_bar, y.h, y.w);
        Bitstream bs;
        bs.user_id = static_cast<std::uint8_t>(u + 1);
        bs.tables_embedded = embed_tables;
        bs.img_h = static_cast<std::uint32_t>(model.cfg.img_h);
        bs.img_w = static_cast<std::uint32_t>(model.cfg.img_w);
        bs.latent_h = static_cast<std::uint32_t>(y.h);
        bs.latent_w = static_cast<std::uint32_t>(y.w);
        bs.latent_c = static_cast<std::uint32_t>(y.c);
        bs.hyper_h = static_cast<std::uint32_t>(z.h);
        bs.hyper_w = static_cast<std::uint32_t>(z.w);
        bs.hyper_c = static_cast<std::uint32_t>(z.c);
        auto tables = hyper_marginal_tables(model.density, u);
        bs.z_segment = encode_hyper(z_bar.token_view().reshaped(Shape{z_bar.numel()}), tables);
        bs.y_segment = encode_latent(y_bar.token_view(), params);
        if (embed_tables) bs.z_tables = std::move(tables);
        enc.rates[su] = latent_rate_bits(y_bar.token_view(), params);
        enc.streams[su] = std::move(bs);
        enc.y_bar[su] = std::move(y_bar);
        enc.z_bar[su] = std::move(z_bar);
    }
    const double joint_bits = model.density.entropy_bits(
        enc.z_bar[0].grid.reshaped(Shape{enc.z_bar[0].numel()}),
        enc.z_bar[1].grid.reshaped(Shape{enc.z_bar[1].numel()}));
    enc.rates[0].joint_hyper_bits = joint_bits;
    enc.rates[1].joint_hyper_bits = joint_bits;
    return enc;
}

struct NtscDecoded {
    std::array<Tensor, 2> x_hat;
    std::array<Latent, 2> y_bar;
    std::array<Hyperprior, 2> z_bar;
    std::array<Homography, 2> warps;
};

inline NtscDecoded ntsc_decode_pair(const Model& model, const Bitstream& bs1,
                                    const Bitstream& bs2) {
    NtscDecoded dec;
    const Bitstream* streams[2] = {&bs1, &bs2};
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        const Bitstream& bs = *streams[u];
        if (bs.user_id != u + 1) throw DecodeError("bitstream user id mismatch");
        if (bs.img_h != model.cfg.img_h || bs.img_w != model.cfg.img_w)
            throw DecodeError("bitstream image dims disagree with the checkpoint");
        const Shape zshape{static_cast<std::int64_t>(bs.hyper_h) * bs.hyper_w * bs.hyper_c};
        const auto tables =
            bs.tables_embedded ? bs.z_tables : hyper_marginal_tables(model.density, u);
        Tensor z_flat = decode_hyper(bs.z_segment, tables, zshape);
        Hyperprior z_bar(bs.hyper_h, bs.hyper_w, bs.hyper_c,
                         z_flat.reshaped(Shape{bs.hyper_h, bs.hyper_w, bs.hyper_c}));
        GaussianParams params = model.hs[su].synthesize(z_bar, bs.latent_h, bs.latent_w);
        Tensor y_flat = decode_latent(bs.y_segment, params);
        dec.y_bar[su] = Latent::from_tokens(bs.latent_h, bs.latent_w, bs.latent_c, y_flat);
        dec.z_bar[su] = std::move(z_bar);
    }
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        const auto sp = static_cast<std::size_t>(1 - u);
        Homography m = model.loc[su].localize(dec.y_bar[su], dec.y_bar[sp]);
        Latent si = warp(dec.y_bar[sp], m);
        dec.x_hat[su] = model.gs.synthesize(dec.y_bar[su], si);
        dec.warps[su] = m;
    }
    return dec;
}

// ---------------------------------------------------------------------------
// D-NTSCC inference path

struct NtsccSimResult {
    std::array<Tensor, 2> x_hat;
    std::array<RatePlan, 2> plan_tx;
    std::array<ChannelVector, 2> sent, received;
    std::array<double, 2> r;
    double joint_hyper_bits = 0.0;
    double snr_db = 0.0;
};

inline NtsccSimResult ntscc_simulate_pair(const Model& model, const Tensor& x1, const Tensor& x2,
                                          const ChannelSpec& spec, bool use_side_info = true) {
    if (!model.has_jscc()) throw ConfigError("model was not built for the ntscc pipeline");
    NtsccSimResult res;
    res.snr_db = spec.noiseless ? std::numeric_limits<double>::infinity() : spec.snr_db;
    const Tensor* imgs[2] = {&x1, &x2};
    std::array<Latent, 2> y;
    std::array<Hyperprior, 2> z_bar;
    std::array<std::vector<double>, 2> self_bits;
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        y[su] = model.ga[su].analyze(*imgs[u]);
        Hyperprior z = model.ha[su].analyze(y[su]);
        z_bar[su] = Hyperprior(z.h, z.w, z.c, quantize(z.grid));
        GaussianParams p = model.hs[su].synthesize(z_bar[su], y[su].h, y[su].w);
        self_bits[su] = per_token_entropy_bits(p);
    }
    res.joint_hyper_bits =
        model.density.entropy_bits(z_bar[0].grid.reshaped(Shape{z_bar[0].numel()}),
                                   z_bar[1].grid.reshaped(Shape{z_bar[1].numel()}));
    // transmitter side: own bandwidth from own hyperprior, peer context from
    // the MMSE estimate
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        Tensor z_star = model.mmse_peer(u, z_bar[su].grid);
        const auto peer_bits = peer_rate_estimate(model, 1 - u, z_star);
        res.plan_tx[su] =
            make_rate_plan(self_bits[su], peer_bits, model.cfg.eta, model.cfg.bandwidths);
        res.sent[su] = model.fe[su].encode(y[su], res.plan_tx[su], model.cfg.power);
    }
    // independent channels per user
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        Rng rng = substream(spec.seed, "channel.user" + std::to_string(u + 1));
        res.received[su] = res.sent[su];
        res.received[su].data = awgn_transmit(res.sent[su].data, spec, rng);
    }
    // receiver side: plans rebuilt from the decoded hyperpriors; the peer
    // context uses the actual peer bandwidths
    std::array<Latent, 2> y_hat;
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        const auto sp = static_cast<std::size_t>(1 - u);
        RatePlan plan_rx;
        plan_rx.k_self = res.plan_tx[su].k_self;
        plan_rx.k_peer_est = res.plan_tx[sp].k_self;
        y_hat[su] = model.fd[su].decode(res.received[su], plan_rx, model.cfg.latent_h(),
                                        model.cfg.latent_w());
    }
    const double cap = spec.noiseless ? std::numeric_limits<double>::infinity() : capacity(spec.snr_db);
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        const auto sp = static_cast<std::size_t>(1 - u);
        Latent si;
        if (use_side_info) {
            Homography m = model.loc[su].localize(y_hat[su], y_hat[sp]);
            si = warp(y_hat[sp], m);
        } else {
            const Latent& peer = y_hat[sp];
            si = Latent(peer.h, peer.w, peer.c, Tensor::zeros(Shape{peer.h, peer.w, peer.c}));
        }
        res.x_hat[su] = model.gs.synthesize(y_hat[su], si);
        const double hyper_uses = spec.noiseless ? 0.0 : res.joint_hyper_bits;
        res.r[su] = spec.noiseless
                        ? static_cast<double>(res.plan_tx[su].n()) /
                              static_cast<double>(3 * model.cfg.img_h * model.cfg.img_w)
                        : transmission_rate(static_cast<double>(res.plan_tx[su].n()), hyper_uses,
                                            cap, model.cfg.img_h, model.cfg.img_w, 3);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoint archive ("DNTX1"): JSON header with the config and a sorted
// tensor manifest, followed by raw little-endian doubles.

namespace ckpt {

inline constexpr char kMagic[5] = {'D', 'N', 'T', 'X', '1'};

inline void write_archive(const std::string& path, const ModelConfig& cfg,
                          const std::map<std::string, Tensor>& tensors,
                          const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json j;
    j["config"] = cfg.to_json();
    j["extra"] = extra;
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [name, t] : tensors) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        manifest.push_back(e);
    }
    j["tensors"] = manifest;
    const std::string header = j.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint for writing: " + path);
    f.write(kMagic, 5);
    const std::uint64_t len = header.size();
    f.write(reinterpret_cast<const char*>(&len), 8);
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, t] : tensors)
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.numel())));
    if (!f) throw Error("checkpoint write failed: " + path);
}

struct Archive {
    ModelConfig cfg;
    std::map<std::string, Tensor> tensors;
    nlohmann::json extra;
};

inline Archive read_archive(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint: " + path);
    char magic[5];
    f.read(magic, 5);
    if (!f || std::memcmp(magic, kMagic, 5) != 0) throw DecodeError("bad checkpoint magic");
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 8);
    std::string header(len, '\0');
    f.read(header.data(), static_cast<std::streamsize>(len));
    if (!f) throw DecodeError("truncated checkpoint header");
    nlohmann::json j = nlohmann::json::parse(header);
    Archive a;
    a.cfg = ModelConfig::from_json(j.at("config"));
    a.extra = j.value("extra", nlohmann::json::object());
    for (const auto& e : j.at("tensors")) {
        const std::string name = e.at("name");
        Shape shape = e.at("shape").get<Shape>();
        Tensor t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.numel())));
        if (!f) throw DecodeError("truncated checkpoint tensor: " + name);
        a.tensors.emplace(name, std::move(t));
    }
    return a;
}

}  // namespace ckpt

inline void save_model(const Model& model, const std::string& path,
                       const std::map<std::string, Tensor>& extra_tensors = {},
                       const nlohmann::json& extra = nlohmann::json::object()) {
    std::map<std::string, Tensor> tensors;
    for (const auto& [name, v] : model.store.all()) tensors.emplace("param." + name, v->value);
    for (const auto& [name, t] : extra_tensors) tensors.emplace(name, t);
    ckpt::write_archive(path, model.cfg, tensors, extra);
}

struct LoadedModel {
    std::unique_ptr<Model> model;
    std::map<std::string, Tensor> extra_tensors;
    nlohmann::json extra;
};

inline LoadedModel load_model(const std::string& path) {
    ckpt::Archive a = ckpt::read_archive(path);
    LoadedModel lm;
    lm.model = std::make_unique<Model>(a.cfg);
    for (auto& [name, t] : a.tensors) {
        if (name.rfind("param.", 0) == 0) {
            const std::string pname = name.substr(6);
            ad::Var v = lm.model->store.get(pname);
            if (!v->value.same_shape(t))
                throw DecodeError("checkpoint tensor shape mismatch: " + pname);
            v->value = std::move(t);
        } else {
            lm.extra_tensors.emplace(name, std::move(t));
        }
    }
    lm.extra = a.extra;
    return lm;
}

}  // namespace dntsc
