#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dntsc/models.hpp"
#include "dntsc/training.hpp"

namespace dntsc {

// ---------------------------------------------------------------------------
// Image I/O (binary 8-bit PPM, the only raster format this artifact uses)

inline Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestError("cannot open image: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw IngestError("not a binary PPM (P6): " + path);
    auto next_int = [&]() {
        int c = f.get();
        while (c == '#' || std::isspace(c)) {
            if (c == '#')
                while (c != '\n' && c != EOF) c = f.get();
            c = f.get();
        }
        long v = 0;
        while (std::isdigit(c)) {
            v = v * 10 + (c - '0');
            c = f.get();
        }
        return v;
    };
    const long w = next_int();
    const long h = next_int();
    const long maxval = next_int();
    if (w <= 0 || h <= 0 || maxval != 255) throw IngestError("unsupported PPM header: " + path);
    std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * 3));
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw IngestError("truncated PPM: " + path);
    Tensor img(Shape{h, w, 3});
    for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = raw[static_cast<std::size_t>(i)] / 255.0;
    return img;
}

inline void write_ppm(const std::string& path, const Tensor& img) {
    if (img.ndim() != 3 || img.dim(2) != 3) throw ShapeError("write_ppm expects (H,W,3)");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for writing: " + path);
    f << "P6\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(img.numel()));
    for (std::int64_t i = 0; i < img.numel(); ++i) {
        const double v = std::min(1.0, std::max(0.0, img[i]));
        raw[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

// ---------------------------------------------------------------------------
// Preprocessing

inline Tensor center_crop(const Tensor& img, std::int64_t ch, std::int64_t cw) {
    const std::int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    if (ch > h || cw > w) throw ShapeError("crop larger than image");
    const std::int64_t y0 = (h - ch) / 2, x0 = (w - cw) / 2;
    Tensor out(Shape{ch, cw, c});
    for (std::int64_t y = 0; y < ch; ++y)
        for (std::int64_t x = 0; x < cw; ++x)
            for (std::int64_t k = 0; k < c; ++k)
                out.at({y, x, k}) = img.at({y0 + y, x0 + x, k});
    return out;
}

// Bilinear resize with half-pixel centers.
inline Tensor resize_bilinear(const Tensor& img, std::int64_t oh, std::int64_t ow) {
    const std::int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    Tensor out(Shape{oh, ow, c});
    for (std::int64_t y = 0; y < oh; ++y) {
        const double sy = (static_cast<double>(y) + 0.5) * static_cast<double>(h) /
                              static_cast<double>(oh) -
                          0.5;
        const double syc = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(syc));
        const std::int64_t y1 = std::min(y0 + 1, h - 1);
        const double wy = syc - static_cast<double>(y0);
        for (std::int64_t x = 0; x < ow; ++x) {
            const double sx = (static_cast<double>(x) + 0.5) * static_cast<double>(w) /
                                  static_cast<double>(ow) -
                              0.5;
            const double sxc = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
            const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sxc));
            const std::int64_t x1 = std::min(x0 + 1, w - 1);
            const double wx = sxc - static_cast<double>(x0);
            for (std::int64_t k = 0; k < c; ++k) {
                const double v = (1 - wy) * ((1 - wx) * img.at({y0, x0, k}) + wx * img.at({y0, x1, k})) +
                                 wy * ((1 - wx) * img.at({y1, x0, k}) + wx * img.at({y1, x1, k}));
                out.at({y, x, k}) = v;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset ingestion: paired left/right directories matched by filename.

struct DatasetSpec {
    std::string root;
    std::string recipe = "none";  // none | kitti | cityscapes
    std::uint64_t seed = 0;

    static Tensor preprocess(const Tensor& img, const std::string& recipe) {
        if (recipe == "none") return img;
        if (recipe == "kitti") return resize_bilinear(center_crop(img, 370, 740), 128, 256);
        if (recipe == "cityscapes") return resize_bilinear(img, 128, 256);
        throw ConfigError("unknown preprocessing recipe: " + recipe);
    }
};

inline std::vector<StereoPair> load_stereo(const DatasetSpec& spec) {
    namespace fs = std::filesystem;
    const fs::path left_dir = fs::path(spec.root) / "left";
    const fs::path right_dir = fs::path(spec.root) / "right";
    if (!fs::is_directory(left_dir) || !fs::is_directory(right_dir))
        throw IngestError("dataset root must contain left/ and right/ directories: " + spec.root);
    std::set<std::string> left_names, right_names;
    for (const auto& e : fs::directory_iterator(left_dir))
        if (e.path().extension() == ".ppm") left_names.insert(e.path().filename().string());
    for (const auto& e : fs::directory_iterator(right_dir))
        if (e.path().extension() == ".ppm") right_names.insert(e.path().filename().string());
    if (left_names.empty() && right_names.empty())
        throw IngestError("empty dataset: no .ppm files under " + spec.root);
    std::string offenders;
    for (const auto& n : left_names)
        if (!right_names.count(n)) offenders += " left-only:" + n;
    for (const auto& n : right_names)
        if (!left_names.count(n)) offenders += " right-only:" + n;
    if (!offenders.empty()) throw IngestError("unmatched stereo files:" + offenders);
    std::vector<StereoPair> pairs;
    for (const auto& n : left_names) {
        StereoPair p;
        p.name = n;
        p.left = DatasetSpec::preprocess(read_ppm((left_dir / n).string()), spec.recipe);
        p.right = DatasetSpec::preprocess(read_ppm((right_dir / n).string()), spec.recipe);
        if (!p.left.same_shape(p.right))
            throw IngestError("stereo pair size mismatch after preprocessing: " + n);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Synthetic correlated pairs: a smooth base texture and its homography warp
// plus independent pixel noise; the ground-truth homography is recorded.

inline Tensor warp_image(const Tensor& img, const Homography& M) {
    ad::NoGradGuard ng;
    const std::int64_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
    Tensor coords(Shape{h * w, 2});
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            double sx, sy;
            project(M, static_cast<double>(x), static_cast<double>(y), &sx, &sy, y * w + x);
            coords[(y * w + x) * 2] = sx;
            coords[(y * w + x) * 2 + 1] = sy;
        }
    Tensor out = ad::bilinear_sample(ad::constant(img.reshaped(Shape{h * w, c})), h, w,
                                     ad::constant(coords))
                     ->value;
    return out.reshaped(Shape{h, w, c});
}

// Multi-octave value noise; channels share coarse structure. Per-image
// statistics vary (octave mix, global contrast, a horizontal contrast ramp)
// so that latent scales differ across images and positions and the
// hyperpriors of a pair carry real, correlated information.
inline Tensor synth_texture(std::int64_t h, std::int64_t w, Rng& rng) {
    Tensor img(Shape{h, w, 3});
    const std::int64_t cells[3] = {8, 16, 32};
    const double base_amp[3] = {1.0, 0.5, 0.25};
    double amps[3];
    for (int o = 0; o < 3; ++o) amps[o] = base_amp[o] * rng.uniform(0.3, 1.5);
    const double contrast = rng.uniform(0.25, 1.0);
    const double ramp = rng.uniform(-1.2, 1.2);
    const double dc = rng.uniform(0.35, 0.65);
    Tensor shared(Shape{h, w, 1});
    for (int o = 0; o < 3; ++o) {
        const std::int64_t gh = h / cells[o] + 2, gw = w / cells[o] + 2;
        Tensor grid = Tensor::uniform(Shape{gh, gw, 1}, -1.0, 1.0, rng);
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const double fy = static_cast<double>(y) / cells[o];
                const double fx = static_cast<double>(x) / cells[o];
                const std::int64_t y0 = static_cast<std::int64_t>(fy), x0 = static_cast<std::int64_t>(fx);
                const double ty = fy - y0, tx = fx - x0;
                const double v =
                    (1 - ty) * ((1 - tx) * grid.at({y0, x0, 0}) + tx * grid.at({y0, x0 + 1, 0})) +
                    ty * ((1 - tx) * grid.at({y0 + 1, x0, 0}) + tx * grid.at({y0 + 1, x0 + 1, 0}));
                shared.at({y, x, 0}) += amps[o] * v;
            }
    }
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const double cx = 1.0 + ramp * (static_cast<double>(x) / static_cast<double>(w) - 0.5);
            const double base = contrast * cx * shared.at({y, x, 0});
            for (std::int64_t k = 0; k < 3; ++k) {
                const double v = dc + 0.2 * base + 0.05 * (k - 1.0) * base;
                img.at({y, x, k}) = std::min(0.95, std::max(0.05, v));
            }
        }
    return img;
}

struct HomographyRange {
    double max_translate = 3.0;   // pixels
    double max_rotate = 0.02;     // radians
    double max_perspective = 1e-4;
};

inline Homography random_homography(std::int64_t h, std::int64_t w, const HomographyRange& range,
                                    Rng& rng) {
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double th = rng.uniform(-range.max_rotate, range.max_rotate);
    const double tx = rng.uniform(-range.max_translate, range.max_translate);
    const double ty = rng.uniform(-range.max_translate, range.max_translate);
    const double g1 = rng.uniform(-range.max_perspective, range.max_perspective);
    const double g2 = rng.uniform(-range.max_perspective, range.max_perspective);
    const double ct = std::cos(th), st = std::sin(th);
    // A maps centred coordinates; conjugate by the centre translation
    const double a[9] = {ct, -st, tx, st, ct, ty, g1, g2, 1.0};
    std::array<double, 9> m{};
    // M = T(c) * A * T(-c)
    const double t1[9] = {1, 0, cx, 0, 1, cy, 0, 0, 1};
    const double t2[9] = {1, 0, -cx, 0, 1, -cy, 0, 0, 1};
    double tmp[9];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            tmp[r * 3 + c] = 0;
            for (int k = 0; k < 3; ++k) tmp[r * 3 + c] += a[r * 3 + k] * t2[k * 3 + c];
        }
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double s = 0;
            for (int k = 0; k < 3; ++k) s += t1[r * 3 + k] * tmp[k * 3 + c];
            m[static_cast<std::size_t>(r * 3 + c)] = s;
        }
    return Homography::from_rows(m);
}

struct SynthPair {
    StereoPair pair;
    Homography gt;  // x2(p) = x1(gt * p) up to noise
};

inline std::vector<SynthPair> synth_pairs(std::int64_t n, std::int64_t h, std::int64_t w,
                                          const HomographyRange& range, double noise_level,
                                          Rng& rng) {
    std::vector<SynthPair> out;
    out.reserve(static_cast<std::size_t>(n));
    char namebuf[32];
    for (std::int64_t i = 0; i < n; ++i) {
        SynthPair sp;
        sp.pair.left = synth_texture(h, w, rng);
        sp.gt = random_homography(h, w, range, rng);
        sp.pair.right = warp_image(sp.pair.left, sp.gt);
        if (noise_level > 0.0) {
            for (std::int64_t j = 0; j < sp.pair.right.numel(); ++j) {
                sp.pair.right[j] =
                    std::min(1.0, std::max(0.0, sp.pair.right[j] + noise_level * rng.normal()));
            }
        }
        std::snprintf(namebuf, sizeof(namebuf), "pair%04lld.ppm", static_cast<long long>(i));
        sp.pair.name = namebuf;
        out.push_back(std::move(sp));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

inline double psnr(const Tensor& x, const Tensor& x_hat) {
    if (!x.same_shape(x_hat)) throw ShapeError("psnr shape mismatch");
    double mse = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double d = x[i] - x_hat[i];
        mse += d * d;
    }
    mse /= static_cast<double>(x.numel());
    if (mse <= 0.0) return 100.0;  // identical inputs capped
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

inline double bitrate_bpp(double total_bits, std::int64_t h, std::int64_t w) {
    if (h <= 0 || w <= 0) throw ParamError("image dims must be positive");
    return total_bits / static_cast<double>(h * w);
}

// ---------------------------------------------------------------------------
// Quantized-path reconstruction without entropy coding (validation metric).

struct NtscInference {
    std::array<Tensor, 2> x_hat;
    std::array<RateReport, 2> rates;
};

inline NtscInference ntsc_infer_pair(const Model& model, const Tensor& x1, const Tensor& x2) {
    NtscInference out;
    const Tensor* imgs[2] = {&x1, &x2};
    std::array<Latent, 2> y_bar;
    std::array<Hyperprior, 2> z_bar;
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        Latent y = model.ga[su].analyze(*imgs[u]);
        Hyperprior z = model.ha[su].analyze(y);
        z_bar[su] = Hyperprior(z.h, z.w, z.c, quantize(z.grid));
        y_bar[su] = Latent(y.h, y.w, y.c, quantize(y.grid));
        GaussianParams p = model.hs[su].synthesize(z_bar[su], y.h, y.w);
        out.rates[su] = latent_rate_bits(y_bar[su].token_view(), p);
    }
    const double joint = model.density.entropy_bits(
        z_bar[0].grid.reshaped(Shape{z_bar[0].numel()}),
        z_bar[1].grid.reshaped(Shape{z_bar[1].numel()}));
    out.rates[0].joint_hyper_bits = joint;
    out.rates[1].joint_hyper_bits = joint;
    for (int u = 0; u < 2; ++u) {
        const auto su = static_cast<std::size_t>(u);
        const auto sp = static_cast<std::size_t>(1 - u);
        Homography m = model.loc[su].localize(y_bar[su], y_bar[sp]);
        Latent si = warp(y_bar[sp], m);
        out.x_hat[su] = model.gs.synthesize(y_bar[su], si);
    }
    return out;
}

// ---------------------------------------------------------------------------
// RD evaluation

struct RDPoint {
    std::string pipeline;
    int user = 0;  // 1, 2, or 0 for the two-user average
    double rate = 0.0;         // bpp (ntsc, Eq. 22 accounting) or r (ntscc)
    double rate_actual = std::numeric_limits<double>::quiet_NaN();  // coded bpp, ntsc only
    double psnr_db = 0.0;
    double ms_ssim = 0.0;
    double snr_db = std::numeric_limits<double>::quiet_NaN();  // ntscc only
    std::uint64_t seed = 0;
};

inline std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

inline void write_rd_csv(const std::string& path, const std::vector<RDPoint>& points) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open CSV for writing: " + path);
    f << "pipeline,user,rate,rate_actual_bpp,psnr_db,ms_ssim,snr_db,seed\n";
    for (const auto& p : points) {
        f << p.pipeline << "," << p.user << "," << format_double(p.rate) << ","
          << format_double(p.rate_actual) << "," << format_double(p.psnr_db) << ","
          << format_double(p.ms_ssim) << "," << format_double(p.snr_db) << "," << p.seed << "\n";
    }
}

// Per-user averages over the split, plus a user-0 row holding their mean.
inline std::vector<RDPoint> evaluate_ntsc(const Model& model, const std::vector<StereoPair>& split,
                                          std::uint64_t seed) {
    if (split.empty()) throw IngestError("empty evaluation split");
    std::array<RDPoint, 2> acc;
    for (const auto& pair : split) {
        NtscEncoded enc = ntsc_encode_pair(model, pair.left, pair.right);
        NtscDecoded dec = ntsc_decode_pair(model, enc.streams[0], enc.streams[1]);
        for (int u = 0; u < 2; ++u) {
            const auto su = static_cast<std::size_t>(u);
            const Tensor& ref = u == 0 ? pair.left : pair.right;
            acc[su].rate += bitrate_bpp(enc.rates[su].total(), model.cfg.img_h, model.cfg.img_w);
            const double actual_bits = 8.0 * static_cast<double>(enc.streams[su].total_bytes());
            if (std::isnan(acc[su].rate_actual)) acc[su].rate_actual = 0.0;
            acc[su].rate_actual += bitrate_bpp(actual_bits, model.cfg.img_h, model.cfg.img_w);
            acc[su].psnr_db += psnr(ref, dec.x_hat[su]);
            acc[su].ms_ssim += ms_ssim(ref, dec.x_hat[su]);
        }
    }
    std::vector<RDPoint> out;
    RDPoint avg;
    avg.pipeline = "ntsc";
    avg.user = 0;
    avg.rate_actual = 0.0;
    avg.seed = seed;
    for (int u = 0; u < 2; ++u) {
        auto& p = acc[static_cast<std::size_t>(u)];
        p.pipeline = "ntsc";
        p.user = u + 1;
        p.seed = seed;
        const double n = static_cast<double>(split.size());
        p.rate /= n;
        p.rate_actual /= n;
        p.psnr_db /= n;
        p.ms_ssim /= n;
        avg.rate += p.rate / 2;
        avg.rate_actual += p.rate_actual / 2;
        avg.psnr_db += p.psnr_db / 2;
        avg.ms_ssim += p.ms_ssim / 2;
        out.push_back(p);
    }
    out.push_back(avg);
    return out;
}

inline std::vector<RDPoint> evaluate_ntscc(const Model& model, const std::vector<StereoPair>& split,
                                           double snr_db, std::uint64_t seed) {
    if (split.empty()) throw IngestError("empty evaluation split");
    std::array<RDPoint, 2> acc;
    std::uint64_t pair_index = 0;
    for (const auto& pair : split) {
        ChannelSpec spec;
        spec.snr_db = snr_db;
        spec.power = model.cfg.power;
        spec.seed = seed ^ (0x9e3779b97f4a7c15ull * (pair_index + 1));
        NtsccSimResult sim = ntscc_simulate_pair(model, pair.left, pair.right, spec);
        for (int u = 0; u < 2; ++u) {
            const auto su = static_cast<std::size_t>(u);
            const Tensor& ref = u == 0 ? pair.left : pair.right;
            acc[su].rate += sim.r[su];
            acc[su].psnr_db += psnr(ref, sim.x_hat[su]);
            acc[su].ms_ssim += ms_ssim(ref, sim.x_hat[su]);
        }
        ++pair_index;
    }
    std::vector<RDPoint> out;
    RDPoint avg;
    avg.pipeline = "ntscc";
    avg.user = 0;
    avg.snr_db = snr_db;
    avg.seed = seed;
    for (int u = 0; u < 2; ++u) {
        auto& p = acc[static_cast<std::size_t>(u)];
        p.pipeline = "ntscc";
        p.user = u + 1;
        p.snr_db = snr_db;
        p.seed = seed;
        const double n = static_cast<double>(split.size());
        p.rate /= n;
        p.psnr_db /= n;
        p.ms_ssim /= n;
        avg.rate += p.rate / 2;
        avg.psnr_db += p.psnr_db / 2;
        avg.ms_ssim += p.ms_ssim / 2;
        out.push_back(p);
    }
    out.push_back(avg);
    return out;
}

// ---------------------------------------------------------------------------
// Parameter counting

inline std::vector<std::pair<std::string, std::int64_t>> param_count(const Model& model) {
    std::vector<std::string> prefixes = {"ga1", "ga2", "ha1", "ha2", "hs1",
                                         "hs2", "gs",  "loc1", "loc2", "density"};
    if (model.has_jscc()) {
        prefixes.push_back("fe1");
        prefixes.push_back("fe2");
        prefixes.push_back("fd1");
        prefixes.push_back("fd2");
    }
    std::vector<std::pair<std::string, std::int64_t>> out;
    std::int64_t total = 0;
    for (const auto& p : prefixes) {
        const std::int64_t n = model.store.count(p + ".");
        out.emplace_back(p, n);
        total += n;
    }
    out.emplace_back("total", total);
    return out;
}

// ---------------------------------------------------------------------------
// Plotting: deterministic SVG rate-distortion curves from an RD CSV.

inline std::vector<std::map<std::string, std::string>> read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open CSV: " + path);
    std::string line;
    if (!std::getline(f, line)) throw Error("empty CSV: " + path);
    std::vector<std::string> header;
    std::size_t pos = 0;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            if (c == ',') {
                out.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur += c;
            }
        }
        out.push_back(cur);
        return out;
    };
    (void)pos;
    header = split(line);
    std::vector<std::map<std::string, std::string>> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto vals = split(line);
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < header.size() && i < vals.size(); ++i) row[header[i]] = vals[i];
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void plot_rd_svg(const std::string& csv_path, const std::string& svg_path,
                        const std::string& y_field = "psnr_db") {
    auto rows = read_csv(csv_path);
    struct Pt {
        double x, y;
    };
    std::map<std::string, std::vector<Pt>> series;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (auto& r : rows) {
        if (r["rate"].empty() || r[y_field].empty()) continue;
        const double x = std::stod(r["rate"]);
        const double y = std::stod(r[y_field]);
        series[r["pipeline"] + "/user" + r["user"]].push_back({x, y});
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
    }
    if (series.empty()) throw Error("no plottable rows in " + csv_path);
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymax = ymin + 1;
    const double W = 640, H = 480, M = 60;
    auto sx = [&](double x) { return M + (x - xmin) / (xmax - xmin) * (W - 2 * M); };
    auto sy = [&](double y) { return H - M - (y - ymin) / (ymax - ymin) * (H - 2 * M); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};
    std::ofstream f(svg_path);
    if (!f) throw Error("cannot open SVG for writing: " + svg_path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<line x1=\"" << M << "\" y1=\"" << H - M << "\" x2=\"" << W - M << "\" y2=\"" << H - M
      << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << M << "\" y1=\"" << M << "\" x2=\"" << M << "\" y2=\"" << H - M
      << "\" stroke=\"black\"/>\n";
    f << "<text x=\"" << W / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">rate</text>\n";
    f << "<text x=\"15\" y=\"" << H / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
      << H / 2 << ")\">" << y_field << "</text>\n";
    int ci = 0;
    double legend_y = M;
    for (auto& [name, pts_raw] : series) {
        auto pts = pts_raw;
        std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) { return a.x < b.x; });
        const char* color = colors[ci % 6];
        f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (auto& p : pts) f << format_double(sx(p.x)) << "," << format_double(sy(p.y)) << " ";
        f << "\"/>\n";
        for (auto& p : pts)
            f << "<circle cx=\"" << format_double(sx(p.x)) << "\" cy=\"" << format_double(sy(p.y))
              << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        f << "<text x=\"" << W - M + 5 << "\" y=\"" << legend_y << "\" fill=\"" << color
          << "\" font-size=\"10\">" << name << "</text>\n";
        legend_y += 14;
        ++ci;
    }
    f << "</svg>\n";
}

}  // namespace dntsc
