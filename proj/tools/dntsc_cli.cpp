// Command-line front end for the D-NTSC / D-NTSCC distributed image codec.
// Subcommands: synth, train, encode, decode, simulate, eval, plot.
// Configuration is a flat key=value file plus --set overrides; every run
// writes a manifest with the resolved configuration and seeds.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dntsc/dntsc.hpp"

namespace fs = std::filesystem;
using namespace dntsc;

namespace {

using KV = std::map<std::string, std::string>;

KV read_config_file(const std::string& path) {
    KV kv;
    if (path.empty()) return kv;
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::string line;
    while (std::getline(f, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (!key.empty()) kv[key] = val;
    }
    return kv;
}

void apply_overrides(KV& kv, const std::vector<std::string>& sets) {
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + s);
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
}

template <typename T>
T get_or(const KV& kv, const std::string& key, T def) {
    auto it = kv.find(key);
    if (it == kv.end()) return def;
    if constexpr (std::is_same_v<T, std::string>) {
        return it->second;
    } else if constexpr (std::is_same_v<T, bool>) {
        return it->second == "1" || it->second == "true" || it->second == "yes";
    } else if constexpr (std::is_integral_v<T>) {
        return static_cast<T>(std::stoll(it->second));
    } else {
        return static_cast<T>(std::stod(it->second));
    }
}

std::vector<std::int64_t> parse_int_list(const std::string& s) {
    std::vector<std::int64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
    return out;
}

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    LossWeights weights;
    // synth
    std::int64_t synth_n = 32;
    std::int64_t synth_h = 64, synth_w = 128;
    HomographyRange synth_range;
    double synth_noise = 0.01;
    // data
    std::string data_recipe = "none";
};

RunConfig parse_run_config(const KV& kv) {
    RunConfig rc;
    ModelConfig& m = rc.model;
    m.pipeline = get_or<std::string>(kv, "pipeline", "ntsc");
    m.img_h = get_or<std::int64_t>(kv, "img_h", 128);
    m.img_w = get_or<std::int64_t>(kv, "img_w", 256);
    if (kv.count("channels")) {
        auto v = parse_int_list(kv.at("channels"));
        if (v.size() != 4) throw ConfigError("channels expects 4 comma-separated values");
        for (int i = 0; i < 4; ++i) m.tf.channels[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
    }
    if (kv.count("blocks")) {
        auto v = parse_int_list(kv.at("blocks"));
        if (v.size() != 4) throw ConfigError("blocks expects 4 comma-separated values");
        for (int i = 0; i < 4; ++i) m.tf.blocks[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
    }
    if (kv.count("heads")) {
        auto v = parse_int_list(kv.at("heads"));
        if (v.size() != 4) throw ConfigError("heads expects 4 comma-separated values");
        for (int i = 0; i < 4; ++i) m.tf.heads[static_cast<std::size_t>(i)] = v[static_cast<std::size_t>(i)];
    }
    m.tf.patch_size = get_or<std::int64_t>(kv, "patch_size", 2);
    m.tf.window_size = get_or<std::int64_t>(kv, "window_size", 4);
    m.tf.window_shift = get_or<std::int64_t>(kv, "window_shift", 2);
    m.tf.hyper_channels = get_or<std::int64_t>(kv, "hyper_channels", 192);
    m.tf.mlp_ratio = get_or<std::int64_t>(kv, "mlp_ratio", 4);
    m.tf.seed = get_or<std::uint64_t>(kv, "seed", 0);
    m.mixtures = get_or<int>(kv, "mixtures", 1);
    m.independent_hyper = get_or<bool>(kv, "independent_hyper", false);
    m.symmetric_init = get_or<bool>(kv, "symmetric_init", false);
    if (kv.count("bandwidths")) m.bandwidths = BandwidthSet(parse_int_list(kv.at("bandwidths")));
    m.jscc_heads = get_or<std::int64_t>(kv, "jscc_heads", 8);
    m.rate_token_len = get_or<std::int64_t>(kv, "rate_token_len", 4);
    m.eta = get_or<double>(kv, "eta", 1.0);
    m.power = get_or<double>(kv, "power", 1.0);

    TrainConfig& t = rc.train;
    t.pipeline = m.pipeline;
    t.epochs = get_or<std::int64_t>(kv, "epochs", m.pipeline == "ntsc" ? 300 : 200);
    t.batch = get_or<std::int64_t>(kv, "batch", 2);
    t.lr_init = get_or<double>(kv, "lr_init", 1e-4);
    t.lr_final = get_or<double>(kv, "lr_final", 1e-6);
    t.seed = get_or<std::uint64_t>(kv, "seed", 0);
    t.snr_db = get_or<double>(kv, "snr_db", 5.0);
    t.checkpoint_interval = get_or<std::int64_t>(kv, "checkpoint_interval", 0);
    t.val_fraction = get_or<double>(kv, "val_fraction", 0.1);

    LossWeights& w = rc.weights;
    const double beta = get_or<double>(kv, m.pipeline == "ntsc" ? "beta" : "alpha", 2000.0);
    w.w1 = get_or<double>(kv, m.pipeline == "ntsc" ? "beta1" : "alpha1", beta);
    w.w2 = get_or<double>(kv, m.pipeline == "ntsc" ? "beta2" : "alpha2", beta);
    w.eta = m.eta;
    w.distortion = distortion_kind_from_string(get_or<std::string>(kv, "distortion", "mse"));

    rc.synth_n = get_or<std::int64_t>(kv, "synth_n", 32);
    rc.synth_h = get_or<std::int64_t>(kv, "synth_h", 64);
    rc.synth_w = get_or<std::int64_t>(kv, "synth_w", 128);
    rc.synth_range.max_translate = get_or<double>(kv, "synth_translate", 3.0);
    rc.synth_range.max_rotate = get_or<double>(kv, "synth_rotate", 0.02);
    rc.synth_range.max_perspective = get_or<double>(kv, "synth_perspective", 1e-4);
    rc.synth_noise = get_or<double>(kv, "synth_noise", 0.01);
    rc.data_recipe = get_or<std::string>(kv, "data_recipe", "none");
    return rc;
}

nlohmann::json kv_to_json(const KV& kv) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : kv) j[k] = v;
    return j;
}

void write_manifest(const std::string& path, const std::string& command, const KV& kv,
                    const RunConfig& rc, const nlohmann::json& outputs) {
    nlohmann::json j;
    j["command"] = command;
    j["raw_config"] = kv_to_json(kv);
    j["resolved_model_config"] = rc.model.to_json();
    j["seed"] = rc.train.seed;
    j["outputs"] = outputs;
    std::ofstream f(path);
    f << j.dump(2) << "\n";
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string s = ss.str();
    return std::vector<std::uint8_t>(s.begin(), s.end());
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void print_param_table(const Model& model) {
    std::printf("%-10s %12s\n", "module", "parameters");
    for (const auto& [name, count] : param_count(model))
        std::printf("%-10s %12lld\n", name.c_str(), static_cast<long long>(count));
}

int cmd_synth(const KV& kv, const std::string& out_dir) {
    RunConfig rc = parse_run_config(kv);
    fs::create_directories(fs::path(out_dir) / "left");
    fs::create_directories(fs::path(out_dir) / "right");
    Rng rng = substream(rc.train.seed, "synth");
    auto pairs = synth_pairs(rc.synth_n, rc.synth_h, rc.synth_w, rc.synth_range, rc.synth_noise, rng);
    nlohmann::json homographies = nlohmann::json::object();
    for (const auto& sp : pairs) {
        write_ppm((fs::path(out_dir) / "left" / sp.pair.name).string(), sp.pair.left);
        write_ppm((fs::path(out_dir) / "right" / sp.pair.name).string(), sp.pair.right);
        homographies[sp.pair.name] = sp.gt.m;
    }
    std::ofstream h((fs::path(out_dir) / "homographies.json").string());
    h << homographies.dump(2) << "\n";
    write_manifest((fs::path(out_dir) / "manifest.json").string(), "synth", kv, rc,
                   {{"pairs", rc.synth_n}});
    std::printf("wrote %lld synthetic pairs to %s\n", static_cast<long long>(rc.synth_n),
                out_dir.c_str());
    return 0;
}

int cmd_train(const KV& kv, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume) {
    RunConfig rc = parse_run_config(kv);
    fs::create_directories(out_dir);
    DatasetSpec spec;
    spec.root = data_dir;
    spec.recipe = rc.data_recipe;
    auto data = load_stereo(spec);
    std::unique_ptr<Model> model;
    std::int64_t start_epoch = 0;
    LoadedModel lm;
    if (!resume.empty()) {
        lm = load_model(resume);
        model = std::move(lm.model);
    } else {
        model = std::make_unique<Model>(rc.model);
    }
    print_param_table(*model);
    Trainer trainer(*model, rc.train, rc.weights);
    if (!resume.empty()) {
        trainer.restore(lm);
        start_epoch = lm.extra.value("epoch_next", 0);
    }
    const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
    const std::string ckpt_path = (fs::path(out_dir) / "model.ckpt").string();
    write_manifest((fs::path(out_dir) / "manifest.json").string(), "train", kv, rc,
                   {{"log", log_path}, {"checkpoint", ckpt_path}, {"start_epoch", start_epoch}});
    trainer.run(data, log_path, ckpt_path);
    if (!trainer.history().empty())
        std::printf("final epoch %lld: loss %.6g, val psnr %.4f dB\n",
                    static_cast<long long>(trainer.history().back().epoch),
                    trainer.history().back().loss, trainer.history().back().psnr_val);
    std::printf("checkpoint: %s\n", ckpt_path.c_str());
    return 0;
}

int cmd_encode(const KV& kv, const std::string& ckpt, const std::string& left,
               const std::string& right, const std::string& out_prefix, bool no_tables) {
    LoadedModel lm = load_model(ckpt);
    Tensor x1 = read_ppm(left);
    Tensor x2 = read_ppm(right);
    NtscEncoded enc = ntsc_encode_pair(*lm.model, x1, x2, !no_tables);
    const std::string p1 = out_prefix + ".user1.dntc";
    const std::string p2 = out_prefix + ".user2.dntc";
    write_bytes(p1, enc.streams[0].serialize());
    write_bytes(p2, enc.streams[1].serialize());
    nlohmann::json outs;
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        const double acct_bpp =
            bitrate_bpp(enc.rates[su].total(), lm.model->cfg.img_h, lm.model->cfg.img_w);
        const double actual_bpp = bitrate_bpp(8.0 * static_cast<double>(enc.streams[su].total_bytes()),
                                              lm.model->cfg.img_h, lm.model->cfg.img_w);
        std::printf("user %d: accounting %.6f bpp (R_y %.1f bits + H_joint/2 %.1f bits), "
                    "actual %.6f bpp (%zu bytes)\n",
                    u + 1, acct_bpp, enc.rates[su].latent_bits,
                    0.5 * enc.rates[su].joint_hyper_bits, actual_bpp,
                    enc.streams[su].total_bytes());
        outs["user" + std::to_string(u + 1)] = {{"accounting_bpp", acct_bpp},
                                                {"actual_bpp", actual_bpp}};
    }
    RunConfig rc = parse_run_config(kv);
    rc.model = lm.model->cfg;
    write_manifest(out_prefix + ".manifest.json", "encode", kv, rc, outs);
    return 0;
}

int cmd_decode(const std::string& ckpt, const std::string& s1, const std::string& s2,
               const std::string& out_prefix, const std::string& ref_left,
               const std::string& ref_right) {
    LoadedModel lm = load_model(ckpt);
    Bitstream b1 = Bitstream::parse(read_bytes(s1));
    Bitstream b2 = Bitstream::parse(read_bytes(s2));
    NtscDecoded dec = ntsc_decode_pair(*lm.model, b1, b2);
    write_ppm(out_prefix + ".user1.ppm", dec.x_hat[0]);
    write_ppm(out_prefix + ".user2.ppm", dec.x_hat[1]);
    if (!ref_left.empty())
        std::printf("user 1 psnr: %.4f dB\n", psnr(read_ppm(ref_left), dec.x_hat[0]));
    if (!ref_right.empty())
        std::printf("user 2 psnr: %.4f dB\n", psnr(read_ppm(ref_right), dec.x_hat[1]));
    return 0;
}

int cmd_simulate(const KV& kv, const std::string& ckpt, const std::string& left,
                 const std::string& right, double snr_db, std::uint64_t seed,
                 const std::string& out_prefix) {
    LoadedModel lm = load_model(ckpt);
    Tensor x1 = read_ppm(left);
    Tensor x2 = read_ppm(right);
    ChannelSpec spec;
    spec.snr_db = snr_db;
    spec.power = lm.model->cfg.power;
    spec.seed = seed;
    NtsccSimResult sim = ntscc_simulate_pair(*lm.model, x1, x2, spec);
    write_ppm(out_prefix + ".user1.ppm", sim.x_hat[0]);
    write_ppm(out_prefix + ".user2.ppm", sim.x_hat[1]);
    nlohmann::json outs;
    outs["snr_db"] = snr_db;
    outs["seed"] = seed;
    outs["joint_hyper_bits"] = sim.joint_hyper_bits;
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        nlohmann::json ju;
        ju["plan_k_self"] = sim.plan_tx[su].k_self;
        ju["plan_k_peer_est"] = sim.plan_tx[su].k_peer_est;
        ju["n"] = sim.plan_tx[su].n();
        ju["r"] = sim.r[su];
        ju["psnr_db"] = psnr(u == 0 ? x1 : x2, sim.x_hat[su]);
        outs["user" + std::to_string(u + 1)] = ju;
        std::printf("user %d: n=%lld, r=%.6f, psnr %.4f dB\n", u + 1,
                    static_cast<long long>(sim.plan_tx[su].n()), sim.r[su],
                    ju["psnr_db"].get<double>());
    }
    RunConfig rc = parse_run_config(kv);
    rc.model = lm.model->cfg;
    rc.train.seed = seed;
    write_manifest(out_prefix + ".manifest.json", "simulate", kv, rc, outs);
    return 0;
}

int cmd_eval(const KV& kv, const std::string& ckpt, const std::string& data_dir, double snr_db,
             std::uint64_t seed, const std::string& out_csv, bool print_params) {
    LoadedModel lm = load_model(ckpt);
    if (print_params) print_param_table(*lm.model);
    RunConfig rc = parse_run_config(kv);
    DatasetSpec spec;
    spec.root = data_dir;
    spec.recipe = rc.data_recipe;
    auto data = load_stereo(spec);
    std::vector<RDPoint> rows = lm.model->has_jscc()
                                    ? evaluate_ntscc(*lm.model, data, snr_db, seed)
                                    : evaluate_ntsc(*lm.model, data, seed);
    write_rd_csv(out_csv, rows);
    for (const auto& r : rows) {
        std::printf("user %d: rate %.6f", r.user, r.rate);
        if (!std::isnan(r.rate_actual)) std::printf(" (actual %.6f bpp)", r.rate_actual);
        std::printf(" psnr %.4f dB ms-ssim %.5f\n", r.psnr_db, r.ms_ssim);
    }
    rc.model = lm.model->cfg;
    rc.train.seed = seed;
    write_manifest(out_csv + ".manifest.json", "eval", kv, rc, {{"csv", out_csv}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"D-NTSC / D-NTSCC distributed image codec"};
    app.require_subcommand(1);
    std::string config_path;
    std::vector<std::string> sets;
    app.add_option("--config", config_path, "flat key=value configuration file");
    app.add_option("--set", sets, "override a configuration key (key=value)");

    auto* synth = app.add_subcommand("synth", "generate a synthetic correlated stereo dataset");
    std::string synth_out = "synth_data";
    synth->add_option("--out", synth_out, "output dataset directory");

    auto* train = app.add_subcommand("train", "train a model");
    std::string train_data, train_out = "run", train_resume;
    train->add_option("--data", train_data, "dataset root with left/ and right/")->required();
    train->add_option("--out-dir", train_out, "output directory");
    train->add_option("--resume", train_resume, "checkpoint to resume from");

    auto* encode = app.add_subcommand("encode", "D-NTSC: encode a stereo pair to bitstreams");
    std::string enc_ckpt, enc_left, enc_right, enc_prefix = "coded";
    bool enc_no_tables = false;
    encode->add_option("--checkpoint", enc_ckpt)->required();
    encode->add_option("--left", enc_left)->required();
    encode->add_option("--right", enc_right)->required();
    encode->add_option("--out-prefix", enc_prefix);
    encode->add_flag("--no-embed-tables", enc_no_tables,
                     "derive hyperprior frequency tables from the model instead of embedding");

    auto* decode = app.add_subcommand("decode", "D-NTSC: jointly decode two bitstreams");
    std::string dec_ckpt, dec_s1, dec_s2, dec_prefix = "decoded", dec_ref_l, dec_ref_r;
    decode->add_option("--checkpoint", dec_ckpt)->required();
    decode->add_option("--stream1", dec_s1)->required();
    decode->add_option("--stream2", dec_s2)->required();
    decode->add_option("--out-prefix", dec_prefix);
    decode->add_option("--ref-left", dec_ref_l, "reference image for PSNR");
    decode->add_option("--ref-right", dec_ref_r, "reference image for PSNR");

    auto* simulate = app.add_subcommand("simulate", "D-NTSCC: transmit a pair over AWGN channels");
    std::string sim_ckpt, sim_left, sim_right, sim_prefix = "sim";
    double sim_snr = 5.0;
    std::uint64_t sim_seed = 0;
    simulate->add_option("--checkpoint", sim_ckpt)->required();
    simulate->add_option("--left", sim_left)->required();
    simulate->add_option("--right", sim_right)->required();
    simulate->add_option("--snr", sim_snr, "channel SNR in dB");
    simulate->add_option("--seed", sim_seed, "channel noise seed");
    simulate->add_option("--out-prefix", sim_prefix);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over a dataset");
    std::string eval_ckpt, eval_data, eval_csv = "rd.csv";
    double eval_snr = 5.0;
    std::uint64_t eval_seed = 0;
    bool eval_params = false;
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--data", eval_data)->required();
    eval->add_option("--snr", eval_snr, "channel SNR in dB (ntscc checkpoints)");
    eval->add_option("--seed", eval_seed);
    eval->add_option("--out", eval_csv, "output CSV path");
    eval->add_flag("--print-params", eval_params, "print the parameter-count table");

    auto* plot = app.add_subcommand("plot", "plot rate-distortion curves from an RD CSV");
    std::string plot_csv, plot_out = "rd.svg", plot_metric = "psnr_db";
    plot->add_option("--csv", plot_csv)->required();
    plot->add_option("--out", plot_out);
    plot->add_option("--metric", plot_metric, "y-axis column (psnr_db or ms_ssim)");

    CLI11_PARSE(app, argc, argv);

    try {
        KV kv = read_config_file(config_path);
        apply_overrides(kv, sets);
        if (synth->parsed()) return cmd_synth(kv, synth_out);
        if (train->parsed()) return cmd_train(kv, train_data, train_out, train_resume);
        if (encode->parsed())
            return cmd_encode(kv, enc_ckpt, enc_left, enc_right, enc_prefix, enc_no_tables);
        if (decode->parsed())
            return cmd_decode(dec_ckpt, dec_s1, dec_s2, dec_prefix, dec_ref_l, dec_ref_r);
        if (simulate->parsed())
            return cmd_simulate(kv, sim_ckpt, sim_left, sim_right, sim_snr, sim_seed, sim_prefix);
        if (eval->parsed())
            return cmd_eval(kv, eval_ckpt, eval_data, eval_snr, eval_seed, eval_csv, eval_params);
        if (plot->parsed()) {
            plot_rd_svg(plot_csv, plot_out, plot_metric);
            std::printf("wrote %s\n", plot_out.c_str());
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
