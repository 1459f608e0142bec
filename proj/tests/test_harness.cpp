#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "dntsc/harness.hpp"
#include "test_util.hpp"

using namespace dntsc;
namespace fs = std::filesystem;

TEST_CASE("psnr", "[harness]") {
    Tensor x(Shape{4, 4, 3}, 0.5);
    Tensor y = x;
    REQUIRE(psnr(x, y) == 100.0);  // cap on identical inputs
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = x[i] + 0.1;
    REQUIRE(psnr(x, y) == Catch::Approx(20.0).epsilon(1e-9));  // mse 0.01
    Tensor z = x;
    for (std::int64_t i = 0; i < z.numel(); ++i) z[i] = x[i] + 0.2;
    REQUIRE(psnr(x, z) < psnr(x, y));
    REQUIRE_THROWS_AS(psnr(x, Tensor(Shape{2, 2, 3})), ShapeError);
}

TEST_CASE("bitrate bpp", "[harness]") {
    REQUIRE(bitrate_bpp(32768.0, 128, 256) == 1.0);
    REQUIRE(bitrate_bpp(0.0, 128, 256) == 0.0);
    REQUIRE(bitrate_bpp(2.0 * 32768.0, 128, 256) == 2.0);
    REQUIRE_THROWS_AS(bitrate_bpp(1.0, 0, 256), ParamError);
}

TEST_CASE("ppm round-trip", "[harness]") {
    const auto dir = fs::temp_directory_path() / "dntsc_ppm_test";
    fs::create_directories(dir);
    Rng rng(3);
    Tensor img = Tensor::uniform(Shape{6, 9, 3}, 0.0, 1.0, rng);
    write_ppm((dir / "t.ppm").string(), img);
    Tensor back = read_ppm((dir / "t.ppm").string());
    REQUIRE(back.dim(0) == 6);
    REQUIRE(back.dim(1) == 9);
    for (std::int64_t i = 0; i < img.numel(); ++i)
        REQUIRE(std::fabs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-12);
    REQUIRE_THROWS_AS(read_ppm((dir / "missing.ppm").string()), IngestError);
    fs::remove_all(dir);
}

TEST_CASE("preprocessing recipes", "[harness]") {
    Rng rng(5);
    Tensor kitti_src = Tensor::uniform(Shape{375, 1242, 3}, 0.0, 1.0, rng);
    Tensor kitti = DatasetSpec::preprocess(kitti_src, "kitti");
    REQUIRE(kitti.dim(0) == 128);
    REQUIRE(kitti.dim(1) == 256);
    Tensor city_src = Tensor::uniform(Shape{256, 512, 3}, 0.0, 1.0, rng);
    Tensor city = DatasetSpec::preprocess(city_src, "cityscapes");
    REQUIRE(city.dim(0) == 128);
    REQUIRE(city.dim(1) == 256);
    REQUIRE_THROWS_AS(DatasetSpec::preprocess(city_src, "jpeg"), ConfigError);
    // crop takes the centered window
    Tensor small(Shape{4, 4, 1});
    for (std::int64_t i = 0; i < 16; ++i) small[i] = static_cast<double>(i);
    Tensor cropped = center_crop(small, 2, 2);
    REQUIRE(cropped.at({0, 0, 0}) == 5.0);
    REQUIRE(cropped.at({1, 1, 0}) == 10.0);
}

TEST_CASE("load_stereo layout handling", "[harness]") {
    const auto dir = fs::temp_directory_path() / "dntsc_ds_test";
    fs::remove_all(dir);
    fs::create_directories(dir / "left");
    fs::create_directories(dir / "right");
    DatasetSpec spec;
    spec.root = dir.string();
    // empty dataset is an explicit error
    REQUIRE_THROWS_AS(load_stereo(spec), IngestError);
    Rng rng(7);
    for (int i = 0; i < 3; ++i) {
        Tensor img = Tensor::uniform(Shape{16, 32, 3}, 0.0, 1.0, rng);
        char name[16];
        std::snprintf(name, sizeof(name), "p%02d.ppm", i);
        write_ppm((dir / "left" / name).string(), img);
        write_ppm((dir / "right" / name).string(), img);
    }
    auto pairs = load_stereo(spec);
    REQUIRE(pairs.size() == 3);
    REQUIRE(pairs[0].name == "p00.ppm");  // deterministic sorted order
    REQUIRE(pairs[2].name == "p02.ppm");
    // unmatched file names the offender
    write_ppm((dir / "left" / "extra.ppm").string(), pairs[0].left);
    try {
        load_stereo(spec);
        FAIL("expected IngestError");
    } catch (const IngestError& e) {
        REQUIRE(std::string(e.what()).find("extra.ppm") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("synthetic pairs", "[harness]") {
    HomographyRange zero;
    zero.max_translate = 0.0;
    zero.max_rotate = 0.0;
    zero.max_perspective = 0.0;
    Rng rng(11);
    auto degenerate = synth_pairs(2, 32, 48, zero, 0.0, rng);
    for (auto& sp : degenerate) {
        for (std::int64_t i = 0; i < sp.pair.left.numel(); ++i)
            REQUIRE(sp.pair.left[i] == sp.pair.right[i]);  // identity + no noise
    }
    // same seed, same stream
    Rng a(13), b(13);
    HomographyRange range;
    auto s1 = synth_pairs(3, 32, 48, range, 0.01, a);
    auto s2 = synth_pairs(3, 32, 48, range, 0.01, b);
    for (std::size_t i = 0; i < s1.size(); ++i)
        for (std::int64_t j = 0; j < s1[i].pair.right.numel(); ++j)
            REQUIRE(s1[i].pair.right[j] == s2[i].pair.right[j]);
    // the recorded homography undoes the warp up to interpolation error
    Rng c(17);
    auto pairs = synth_pairs(4, 64, 96, range, 0.0, c);
    for (auto& sp : pairs) {
        Tensor realigned = warp_image(sp.pair.right, sp.gt.inverse());
        double mse = 0.0;
        int count = 0;
        for (std::int64_t y = 6; y < 58; ++y)
            for (std::int64_t x = 6; x < 90; ++x)
                for (std::int64_t k = 0; k < 3; ++k) {
                    const double d = realigned.at({y, x, k}) - sp.pair.left.at({y, x, k});
                    mse += d * d;
                    ++count;
                }
        REQUIRE(mse / count < 1e-3);
    }
}

TEST_CASE("param count", "[harness]") {
    ModelConfig mc = test_util::micro_config();
    Model model(mc);
    auto table = param_count(model);
    std::map<std::string, std::int64_t> counts(table.begin(), table.end());
    // hand count for the hyper analysis: two 3x3 convs, C4=8 -> hc=4 -> hc=4
    REQUIRE(counts.at("ha1") == (3 * 3 * 8 * 4 + 4) + (3 * 3 * 4 * 4 + 4));
    // hand count for hyper synthesis: 3x3 transposed convs 4->4 and 4->16
    REQUIRE(counts.at("hs1") == (3 * 3 * 4 * 4 + 4) + (3 * 3 * 4 * 16 + 16));
    // density: K=1, 1x1x4 grid pairs, 6 tensors of (pairs*K)
    REQUIRE(counts.at("density") == 6 * 4);
    // totals add up
    std::int64_t total = 0;
    for (auto& [k, v] : counts)
        if (k != "total") total += v;
    REQUIRE(counts.at("total") == total);
    REQUIRE(counts.at("total") == model.store.count(""));
    // doubling C4 increases the count; counts do not depend on values
    ModelConfig big = mc;
    big.tf.channels = {8, 8, 8, 16};
    Model model_big(big);
    REQUIRE(param_count(model_big).back().second > counts.at("total"));
    for (auto& [name, v] : model.store.all()) v->value.fill(3.0);
    REQUIRE(param_count(model).back().second == counts.at("total"));
}

TEST_CASE("rd csv write/read and plot determinism", "[harness]") {
    const auto dir = fs::temp_directory_path() / "dntsc_csv_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::vector<RDPoint> pts;
    for (int i = 0; i < 3; ++i) {
        RDPoint p;
        p.pipeline = "ntsc";
        p.user = 1;
        p.rate = 0.1 * (i + 1);
        p.rate_actual = 0.12 * (i + 1);
        p.psnr_db = 28.0 + i;
        p.ms_ssim = 0.9 + 0.01 * i;
        p.seed = 7;
        pts.push_back(p);
    }
    const std::string csv = (dir / "rd.csv").string();
    write_rd_csv(csv, pts);
    auto rows = read_csv(csv);
    REQUIRE(rows.size() == 3);
    REQUIRE(rows[1].at("psnr_db") == "29");
    REQUIRE(rows[0].at("snr_db").empty());
    plot_rd_svg(csv, (dir / "rd1.svg").string());
    plot_rd_svg(csv, (dir / "rd2.svg").string());
    std::ifstream f1((dir / "rd1.svg").string(), std::ios::binary);
    std::ifstream f2((dir / "rd2.svg").string(), std::ios::binary);
    std::ostringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    REQUIRE(s1.str() == s2.str());  // plots regenerate bit-identically
    REQUIRE(s1.str().find("<svg") != std::string::npos);
    fs::remove_all(dir);
}
