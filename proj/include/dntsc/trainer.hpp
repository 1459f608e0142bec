#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dntsc/harness.hpp"
#include "dntsc/training.hpp"

namespace dntsc {

// End-to-end trainer for both pipelines. Fully reproducible: data order,
// relaxation noise and channel noise are all derived statelessly from
// (seed, epoch, step), so resuming from a checkpoint replays the
// uninterrupted run bit-exactly.
class Trainer {
public:
    Trainer(Model& model, TrainConfig cfg, LossWeights weights)
        : model_(model), cfg_(std::move(cfg)), weights_(std::move(weights)) {
        if (cfg_.epochs < 1 || cfg_.batch < 1) throw ConfigError("epochs and batch must be >= 1");
        weights_.validate();
    }

    Adam& optimizer() { return opt_; }
    void set_start_epoch(std::int64_t e) { start_epoch_ = e; }

    struct EpochRow {
        std::int64_t epoch;
        double loss, distortion1, distortion2, rate_y1, rate_y2, rate_z_joint, lr, psnr_val;
    };

    // Trains on `data`; the last ceil(val_fraction*n) pairs are held out for
    // the per-epoch PSNR metric. Appends one CSV row per epoch to log_path
    // (header written only when starting from epoch 0).
    void run(const std::vector<StereoPair>& data, const std::string& log_path,
             const std::string& ckpt_path) {
        if (data.empty()) throw IngestError("empty training dataset");
        std::int64_t val_n = static_cast<std::int64_t>(
            std::ceil(cfg_.val_fraction * static_cast<double>(data.size())));
        val_n = std::min<std::int64_t>(std::max<std::int64_t>(val_n, 1),
                                       static_cast<std::int64_t>(data.size()) - 1);
        if (static_cast<std::int64_t>(data.size()) == 1) val_n = 0;
        const std::int64_t train_n = static_cast<std::int64_t>(data.size()) - val_n;
        std::ofstream log(log_path, start_epoch_ == 0 ? std::ios::trunc : std::ios::app);
        if (!log) throw Error("cannot open training log: " + log_path);
        if (start_epoch_ == 0)
            log << "epoch,loss,distortion1,distortion2,rate_y1,rate_y2,rate_z_joint,lr,psnr_val\n";
        for (std::int64_t epoch = start_epoch_; epoch < cfg_.epochs; ++epoch) {
            const double lr = lr_schedule(epoch, cfg_.epochs, cfg_.lr_init, cfg_.lr_final);
            std::vector<std::int64_t> order(static_cast<std::size_t>(train_n));
            for (std::int64_t i = 0; i < train_n; ++i) order[static_cast<std::size_t>(i)] = i;
            Rng order_rng = substream(cfg_.seed, "order", static_cast<std::uint64_t>(epoch));
            order_rng.shuffle(order);
            EpochRow row{};
            row.epoch = epoch;
            row.lr = lr;
            std::int64_t steps = 0;
            for (std::int64_t pos = 0; pos < train_n; pos += cfg_.batch) {
                std::vector<const StereoPair*> batch;
                for (std::int64_t b = pos; b < std::min(pos + cfg_.batch, train_n); ++b)
                    batch.push_back(&data[static_cast<std::size_t>(order[static_cast<std::size_t>(b)])]);
                Rng noise_rng = substream(cfg_.seed, "noise",
                                          static_cast<std::uint64_t>(epoch) * 1000003ull +
                                              static_cast<std::uint64_t>(steps));
                LossResult loss = cfg_.pipeline == "ntsc"
                                      ? loss_ntsc(model_, batch, weights_, noise_rng)
                                      : loss_ntscc(model_, batch, weights_, train_channel(),
                                                   noise_rng);
                ad::backward(loss.total);
                check_gradients_finite();
                opt_.step(model_.store, lr);
                model_.store.zero_grad();
                row.loss += loss.total->value[0];
                row.distortion1 += loss.extras.at("distortion1");
                row.distortion2 += loss.extras.at("distortion2");
                row.rate_y1 += loss.component("rate_y1");
                row.rate_y2 += loss.component("rate_y2");
                row.rate_z_joint += loss.component("rate_z_joint");
                ++steps;
            }
            const double inv = steps > 0 ? 1.0 / static_cast<double>(steps) : 0.0;
            row.loss *= inv;
            row.distortion1 *= inv;
            row.distortion2 *= inv;
            row.rate_y1 *= inv;
            row.rate_y2 *= inv;
            row.rate_z_joint *= inv;
            row.psnr_val = validate(data, train_n, val_n, epoch);
            append_row(log, row);
            history_.push_back(row);
            const bool last = epoch + 1 == cfg_.epochs;
            if (last) {
                save(ckpt_path, epoch + 1);
            } else if (cfg_.checkpoint_interval > 0 &&
                       (epoch + 1) % cfg_.checkpoint_interval == 0) {
                save(ckpt_path + ".e" + std::to_string(epoch + 1), epoch + 1);
            }
        }
    }

    void save(const std::string& path, std::int64_t epoch_next) const {
        nlohmann::json extra;
        extra["epoch_next"] = epoch_next;
        extra["adam_steps"] = opt_.steps();
        extra["pipeline"] = cfg_.pipeline;
        save_model(model_, path, opt_.export_state(), extra);
    }

    // Restores optimizer state and the epoch cursor from a loaded archive.
    void restore(const LoadedModel& lm) {
        opt_.import_state(lm.extra_tensors, lm.extra.value("adam_steps", 0));
        start_epoch_ = lm.extra.value("epoch_next", 0);
    }

    const std::vector<EpochRow>& history() const { return history_; }

private:
    ChannelSpec train_channel() const {
        ChannelSpec spec;
        spec.snr_db = cfg_.snr_db;
        spec.power = model_.cfg.power;
        return spec;
    }

    void check_gradients_finite() const {
        for (const auto& [name, v] : model_.store.all())
            if (v->grad_defined() && !v->grad.all_finite())
                throw TrainError("non-finite gradient in " + name);
    }

    double validate(const std::vector<StereoPair>& data, std::int64_t train_n, std::int64_t val_n,
                    std::int64_t epoch) {
        if (val_n == 0) return 0.0;
        double acc = 0.0;
        for (std::int64_t i = train_n; i < train_n + val_n; ++i) {
            const StereoPair& pair = data[static_cast<std::size_t>(i)];
            if (cfg_.pipeline == "ntsc") {
                NtscInference inf = ntsc_infer_pair(model_, pair.left, pair.right);
                acc += 0.5 * (psnr(pair.left, inf.x_hat[0]) + psnr(pair.right, inf.x_hat[1]));
            } else {
                ChannelSpec spec = train_channel();
                spec.seed = splitmix_of(cfg_.seed, static_cast<std::uint64_t>(epoch), 0x76616cull);
                NtsccSimResult sim = ntscc_simulate_pair(model_, pair.left, pair.right, spec);
                acc += 0.5 * (psnr(pair.left, sim.x_hat[0]) + psnr(pair.right, sim.x_hat[1]));
            }
        }
        return acc / static_cast<double>(val_n);
    }

    static std::uint64_t splitmix_of(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
        std::uint64_t s = a ^ (b * 0x9e3779b97f4a7c15ull) ^ (c * 0xbf58476d1ce4e5b9ull);
        return splitmix64(s);
    }

    static void append_row(std::ofstream& log, const EpochRow& r) {
        log << r.epoch << "," << format_double(r.loss) << "," << format_double(r.distortion1) << ","
            << format_double(r.distortion2) << "," << format_double(r.rate_y1) << ","
            << format_double(r.rate_y2) << "," << format_double(r.rate_z_joint) << ","
            << format_double(r.lr) << "," << format_double(r.psnr_val) << "\n";
        log.flush();
    }

    Model& model_;
    TrainConfig cfg_;
    LossWeights weights_;
    Adam opt_;
    std::int64_t start_epoch_ = 0;
    std::vector<EpochRow> history_;
};

// Refits only the joint hyperprior density on frozen-transform latents: the
// z grids are precomputed once, and each step resamples the uniform
// relaxation noise. Used for the independence-constrained entropy-model
// ablation (the transforms, and hence reconstructions, are untouched).
inline void refit_density(Model& model, const std::vector<Tensor>& z1_list,
                          const std::vector<Tensor>& z2_list, std::int64_t steps, double lr,
                          std::uint64_t seed) {
    if (z1_list.empty() || z1_list.size() != z2_list.size())
        throw ParamError("refit_density needs matching nonempty z lists");
    const std::int64_t nz = model.cfg.hyper_elems();
    Adam opt;
    model.store.unfreeze_all();
    for (const auto& [name, v] : model.store.all())
        if (name.rfind("density.", 0) != 0) model.store.freeze(name);
    for (std::int64_t step = 0; step < steps; ++step) {
        Rng rng = substream(seed, "refit", static_cast<std::uint64_t>(step));
        const auto idx = static_cast<std::size_t>(rng.below(z1_list.size()));
        ad::Var z1 = ad::constant(Tensor(Shape{nz, 1}, std::vector<double>(
                                                           z1_list[idx].data(),
                                                           z1_list[idx].data() + nz)));
        ad::Var z2 = ad::constant(Tensor(Shape{nz, 1}, std::vector<double>(
                                                           z2_list[idx].data(),
                                                           z2_list[idx].data() + nz)));
        z1 = ad::add(z1, ad::constant(relax_noise(Shape{nz, 1}, rng)));
        z2 = ad::add(z2, ad::constant(relax_noise(Shape{nz, 1}, rng)));
        ad::Var bits = model.density.rate_bits_var(z1, z2);
        ad::backward(bits);
        opt.step(model.store, lr);
        model.store.zero_grad();
    }
    model.store.unfreeze_all();
}

}  // namespace dntsc
