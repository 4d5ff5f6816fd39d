// Acceptance suite: one test per acceptance criterion, each printing a
// single "[criterion N] PASS|FAIL ..." line with the measured quantities.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "test_util.hpp"
#include "tilesynth/diffusion.hpp"
#include "tilesynth/losses.hpp"
#include "tilesynth/metrics.hpp"
#include "tilesynth/pipeline.hpp"
#include "tilesynth/profiler.hpp"
#include "tilesynth/projection.hpp"
#include "tilesynth/synthetic.hpp"
#include "tilesynth/tiling.hpp"

using namespace tilesynth;

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

/// Prints the verdict line when the test body ends, however it ends.
class Criterion {
public:
    Criterion(int number, std::string title) : number_(number), title_(std::move(title)) {}
    ~Criterion() {
        const bool ok = !::testing::Test::HasFailure();
        std::printf("[criterion %2d] %s  %s%s%s\n", number_, ok ? "PASS" : "FAIL", title_.c_str(),
                    detail_.str().empty() ? "" : "  | ", detail_.str().c_str());
        std::fflush(stdout);
    }
    std::ostringstream& detail() { return detail_; }

private:
    int number_;
    std::string title_;
    std::ostringstream detail_;
};

std::vector<ImageBuffer> textured_corpus(int n, int size, std::uint64_t seed) {
    std::vector<ImageBuffer> out;
    for (int i = 0; i < n; ++i) out.push_back(textured_image(size, size, 3, seed + static_cast<std::uint64_t>(i)));
    return out;
}

ProjectionNet<double> random_small_model(std::uint64_t seed, int blocks, int width, int scale) {
    auto m = make_projection_model({2, scale, blocks, width}, seed).cast<double>();
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> u(-0.6, 0.6);
    for (auto& l : m.layers) {
        for (auto& w : l.weights) w = u(rng);
        for (auto& b : l.bias) b = u(rng);
    }
    return m;
}

double relu_margin(const Grid<double, LatentSpace>& z, const ProjectionNet<double>& m) {
    const auto trace = cnn_forward_trace(z, m);
    double margin = std::numeric_limits<double>::infinity();
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        if (m.layers[li].activation != Activation::ReLU) continue;
        const auto pre = conv3x3(trace.activations[li], m.layers[li]);
        for (double v : pre.data()) margin = std::min(margin, std::abs(v));
    }
    return margin;
}

double mse_loss(const Grid<double, LatentSpace>& z, const ProjectionNet<double>& m,
                const Grid<double, LatentSpace>& target) {
    const auto out = project_forward(z, m);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += std::pow(out.data()[i] - target.data()[i], 2);
    return s / static_cast<double>(out.size());
}

}  // namespace

TEST(Acceptance, C01_TilingOracleEquivalence) {
    Criterion crit(1, "tiling oracle equivalence, 50 randomized cases");
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    const auto t0 = clock_type::now();
    for (int i = 0; i < 50; ++i) {
        const int tile = tstest::uniform_int(rng, 128, 512);
        const int kx_max = 1024 / tile;
        const int k_min = (256 + tile - 1) / tile;
        const int w = tile * tstest::uniform_int(rng, k_min, kx_max);
        const int h = tile * tstest::uniform_int(rng, k_min, kx_max);
        const int radius = tstest::uniform_int(rng, 1, 5);
        const int pad = radius + tstest::uniform_int(rng, 0, 4);
        const auto kernel = ConvKernel::random(radius, rng);
        const auto img = tstest::random_image(h, w, 1, rng());
        AcptOptions opts;
        opts.tile_size = tile;
        opts.padding_size = pad;
        const auto res = run_acpt(img, conv_processor<ImageBuffer>(kernel), opts);
        EXPECT_TRUE(res.plan.uses_adjacent_padding()) << i;
        const double err = tstest::max_abs_diff(res.image, tstest::naive_conv(img, kernel));
        EXPECT_LE(err, 1e-6) << "case " << i << ": " << w << "x" << h << " tile " << tile << " r " << radius;
        worst = std::max(worst, err);
    }
    const double elapsed = seconds_since(t0);
    EXPECT_LE(elapsed, 60.0);
    crit.detail() << "max abs err " << worst << ", " << elapsed << " s";
}

TEST(Acceptance, C02_PixelOverheadModel) {
    Criterion crit(2, "pixel-overhead model");
    const auto img = tstest::random_image(512, 512, 1, 1);
    const auto proc = identity_processor<ImageBuffer>();
    const auto plain = run_tiled(img, proc, make_plan(512, 512, 16, SmallOverlap{0.0}));
    const auto half = run_tiled(img, proc, make_plan(512, 512, 16, SmallOverlap{0.5}));
    const double ratio = static_cast<double>(half.stats.pixels_processed) / plain.stats.pixels_processed;
    EXPECT_LE(std::abs(ratio - overhead_ratio(0.5)) / overhead_ratio(0.5), 0.05);

    const auto big = tstest::random_image(1024, 1024, 1, 2);
    const auto adj = run_acpt(big, proc, AcptOptions{});  // tile 512, default 32 px band (6%)
    EXPECT_EQ(adj.plan.padding_size(), 32);
    const double adj_overhead = static_cast<double>(adj.stats.pixels_processed) / (1024.0 * 1024.0);
    EXPECT_LE(adj_overhead, 1.3);
    crit.detail() << "overlap 0.5 / 0 = " << ratio << " (model 4.0), adjacent 6% band = " << adj_overhead;
}

TEST(Acceptance, C03_PaddingQualityOrdering) {
    Criterion crit(3, "padding quality ordering on 20 textured images");
    const auto kernel = ConvKernel::gaussian(3, 1.5);
    const auto proc = conv_processor<ImageBuffer>(kernel);
    int ordered = 0;
    double worst_fraction = std::numeric_limits<double>::infinity();
    int adj_exact = 0;
    double sum_refl = 0, sum_zero = 0, sum_ovl = 0;
    const auto corpus = textured_corpus(20, 256, 300);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& img = corpus[i];
        const auto oracle = tstest::naive_conv(img, kernel);
        const auto plan = make_plan(256, 256, 64, AdjacentPadding{4});
        auto run_mode = [&](PaddingMode m) {
            TilingOptions t;
            t.padding_mode = m;
            return psnr(oracle, run_tiled(img, proc, plan, t).image);
        };
        const double adj = run_mode(PaddingMode::Adjacent);
        const double refl = run_mode(PaddingMode::Reflect);
        const double zero = run_mode(PaddingMode::Zero);
        const double ovl = psnr(oracle, run_tiled(img, proc, make_plan(256, 256, 64, SmallOverlap{0.5})).image);
        EXPECT_GE(adj, refl) << i;
        EXPECT_GE(refl, zero) << i;
        EXPECT_GE(adj, 0.99 * ovl) << i;
        ordered += (adj >= refl && refl >= zero) ? 1 : 0;
        worst_fraction = std::min(worst_fraction, std::isinf(adj) ? std::numeric_limits<double>::infinity() : adj / ovl);
        adj_exact += std::isinf(adj) ? 1 : 0;
        sum_refl += refl;
        sum_zero += zero;
        sum_ovl += ovl;
    }
    crit.detail() << "ordered " << ordered << "/20, adjacent matches oracle exactly (inf dB) on " << adj_exact
                  << "/20, mean PSNR reflect "
                  << sum_refl / 20 << " zero " << sum_zero / 20 << " overlap50 " << sum_ovl / 20
                  << " dB, min adjacent/overlap " << worst_fraction;
}

TEST(Acceptance, C04_CfgIdentities) {
    Criterion crit(4, "classifier-free guidance identities");
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> w(0.1f, 10.0f);
    int exact_tel = 0, exact_deg = 0;
    double worst_lin = 0.0;
    for (int i = 0; i < 100; ++i) {
        const int h = tstest::uniform_int(rng, 1, 8), wd = tstest::uniform_int(rng, 1, 8);
        const auto a = tstest::random_grid<LatentGrid>(h, wd, 4, rng(), -3, 3);
        const auto b = tstest::random_grid<LatentGrid>(h, wd, 4, rng(), -3, 3);
        const auto c = tstest::random_grid<LatentGrid>(h, wd, 4, rng(), -3, 3);
        const auto a2 = tstest::random_grid<LatentGrid>(h, wd, 4, rng(), -3, 3);
        const auto b2 = tstest::random_grid<LatentGrid>(h, wd, 4, rng(), -3, 3);
        const auto c2 = tstest::random_grid<LatentGrid>(h, wd, 4, rng(), -3, 3);
        const GuidanceWeights gw{w(rng), w(rng)};

        exact_tel += cfg_combine(a, b, c, {1.0f, 1.0f}) == c;
        exact_deg += cfg_combine(a, a, a, gw) == a;

        // Linearity: g(x + k y) == g(x) + k g(y), and agreement with the unregrouped definition.
        const float k = w(rng);
        auto mix = [&](const LatentGrid& x, const LatentGrid& y) {
            LatentGrid out = x;
            for (std::size_t j = 0; j < out.size(); ++j) out.data()[j] = x.data()[j] + k * y.data()[j];
            return out;
        };
        const auto lhs = cfg_combine(mix(a, a2), mix(b, b2), mix(c, c2), gw);
        const auto g1 = cfg_combine(a, b, c, gw);
        const auto g2 = cfg_combine(a2, b2, c2, gw);
        // Errors are relative to the tensor's largest magnitude (norm-wise), not per element.
        double lin_err = 0.0, lin_scale = 1.0, def_err = 0.0, def_scale = 1.0;
        for (std::size_t j = 0; j < lhs.size(); ++j) {
            const double rhs = static_cast<double>(g1.data()[j]) + k * static_cast<double>(g2.data()[j]);
            const double def = a.data()[j] + gw.image * (static_cast<double>(b.data()[j]) - a.data()[j]) +
                               gw.text * (static_cast<double>(c.data()[j]) - b.data()[j]);
            lin_err = std::max(lin_err, std::abs(lhs.data()[j] - rhs));
            lin_scale = std::max(lin_scale, std::abs(rhs));
            def_err = std::max(def_err, std::abs(g1.data()[j] - def));
            def_scale = std::max(def_scale, std::abs(def));
        }
        worst_lin = std::max({worst_lin, lin_err / lin_scale, def_err / def_scale});
    }
    EXPECT_EQ(exact_tel, 100);
    EXPECT_EQ(exact_deg, 100);
    EXPECT_LE(worst_lin, 1e-6);
    crit.detail() << "telescoping exact " << exact_tel << "/100, degenerate exact " << exact_deg
                  << "/100, linearity max rel err " << worst_lin;
}

TEST(Acceptance, C05_ScheduleSnr) {
    Criterion crit(5, "noise schedule SNR");
    const auto s = schedule_cosine();
    int violations = 0;
    double prev = s.snr(0.0);
    for (int i = 1; i < 1000; ++i) {
        const double cur = s.snr(i / 999.0);
        violations += cur < prev ? 0 : 1;
        prev = cur;
    }
    EXPECT_EQ(violations, 0);
    EXPECT_LE(s.snr(1.0), 1e-6);
    crit.detail() << "non-decreasing steps " << violations << "/999, SNR(1) = " << s.snr(1.0);
}

TEST(Acceptance, C06_ProjectionTraining) {
    Criterion crit(6, "projection training");
    const auto t0 = clock_type::now();

    // Finite-difference gradient check over every parameter of a random small model.
    constexpr double h = 1e-5;
    const auto z = tstest::random_grid<Grid<double, LatentSpace>>(3, 3, 2, 61, -1, 1);
    std::uint64_t seed = 60;
    auto m = random_small_model(seed, 3, 4, 2);
    while (relu_margin(z, m) < 1e-3 && seed < 5000) m = random_small_model(++seed, 3, 4, 2);
    const auto target = tstest::random_grid<Grid<double, LatentSpace>>(6, 6, 2, 62, -1, 1);
    const auto out = project_forward(z, m);
    Grid<double, LatentSpace> go(out.height(), out.width(), out.channels());
    for (std::size_t i = 0; i < out.size(); ++i) {
        go.data()[i] = 2.0 * (out.data()[i] - target.data()[i]) / static_cast<double>(out.size());
    }
    const auto grads = project_backward(z, m, go);
    double worst_fd = 0.0;
    std::size_t checked = 0;
    auto check = [&](double& param, double analytic) {
        const double keep = param;
        param = keep + h;
        const double up = mse_loss(z, m, target);
        param = keep - h;
        const double down = mse_loss(z, m, target);
        param = keep;
        const double numeric = (up - down) / (2 * h);
        worst_fd = std::max(worst_fd, std::abs(analytic - numeric) /
                                          std::max({std::abs(analytic), std::abs(numeric), 1e-8}));
        ++checked;
    };
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
        for (std::size_t i = 0; i < m.layers[li].weights.size(); ++i) check(m.layers[li].weights[i], grads.layers[li].weights[i]);
        for (std::size_t i = 0; i < m.layers[li].bias.size(); ++i) check(m.layers[li].bias[i], grads.layers[li].bias[i]);
    }
    EXPECT_EQ(checked, m.parameter_count());
    EXPECT_LE(worst_fd, 1e-3);

    // Held-out comparison against fixed resampling baselines.
    const AutoencoderStub ae;
    const auto images = textured_corpus(20, 256, 1000);
    const auto corpus = build_projection_corpus(images, ae, 4);
    const std::span<const LatentPair> all(corpus);
    const auto train = all.first(16);
    const auto val = all.last(4);
    TrainConfig cfg;
    cfg.epochs = 20;
    const auto trained = train_projection(train, cfg, ProjectionArchitecture{}, val);
    const double val_model = evaluate_projection(trained.model, val);
    const double val_bilinear = evaluate_baseline(ResampleFilter::Bilinear, val);
    const double val_bicubic = evaluate_baseline(ResampleFilter::Bicubic, val);
    EXPECT_LT(val_model, val_bilinear);
    EXPECT_LT(val_model, val_bicubic);

    // Realizable target: the high-resolution latent is an exact nearest expansion.
    std::vector<LatentPair> realizable;
    for (int i = 0; i < 8; ++i) {
        const auto lo = ae.encode(textured_image(64, 64, 3, 500 + static_cast<std::uint64_t>(i)));
        realizable.emplace_back(lo, upsample_nearest(lo, 4));
    }
    auto init = make_projection_model({}, 3);
    {
        std::mt19937_64 prng(3);
        std::uniform_real_distribution<float> u(-0.05f, 0.05f);
        for (auto& wv : init.layers.back().weights) wv = u(prng);
        for (auto& bv : init.layers.back().bias) bv = u(prng);
    }
    TrainConfig rcfg;
    rcfg.learning_rate = 1e-2f;
    rcfg.batch_size = 2;
    rcfg.epochs = 50;
    const auto conv = train_projection(realizable, rcfg, init);
    int first_below = -1;
    for (const auto& e : conv.log) {
        if (e.train_mse <= 1e-5) {
            first_below = e.epoch;
            break;
        }
    }
    const double final_loss = evaluate_projection(conv.model, realizable);
    EXPECT_LE(final_loss, 1e-5);
    EXPECT_GE(first_below, 1);
    const double elapsed = seconds_since(t0);
    EXPECT_LE(elapsed, 300.0);
    crit.detail() << "FD max rel err " << worst_fd << " over " << checked << " params; val MSE model " << val_model
                  << " bilinear " << val_bilinear << " bicubic " << val_bicubic << "; realizable loss " << final_loss
                  << " (<=1e-5 from epoch " << first_below << "); " << elapsed << " s";
}

TEST(Acceptance, C07_LossArithmetic) {
    Criterion crit(7, "loss arithmetic, PAR counting, calibrated filter");
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> u(0.0f, 5.0f);
    int affine_exact = 0;
    for (int i = 0; i < 100; ++i) {
        const float a = u(rng), b = u(rng), lambda = u(rng);
        affine_exact += total_loss(a, b, lambda).total == a + lambda * b;
    }
    EXPECT_EQ(affine_exact, 100);

    int par_exact = 0;
    for (int i = 0; i < 100; ++i) {
        const int h = tstest::uniform_int(rng, 1, 20), w = tstest::uniform_int(rng, 1, 20);
        HallucinationMask mask(h, w, 1, 0.0f);
        int count = 0;
        for (auto& v : mask.data()) {
            if (tstest::uniform_int(rng, 0, 3) == 0) {
                v = 1.0f;
                ++count;
            } else {
                v = 0.25f;  // below the binarization threshold
            }
        }
        par_exact += par(mask, 0.5f) == static_cast<float>(count) / static_cast<float>(h * w);
    }
    EXPECT_EQ(par_exact, 100);

    std::vector<TrainingSample> samples;
    for (int i = 0; i < 100; ++i) {
        TrainingSample s;
        s.id = "s" + std::to_string(i);
        s.target = textured_image(32, 32, 3, 700 + static_cast<std::uint64_t>(i), 0.0);
        add_impulses(s.target, tstest::uniform_int(rng, 0, 60), 800 + static_cast<std::uint64_t>(i));
        samples.push_back(std::move(s));
    }
    const MaskDetector detector = [](const TrainingSample& s) { return detect_high_frequency_residual(s.target); };
    std::vector<float> pars;
    for (const auto& s : samples) pars.push_back(par(detector(s), 0.5f));
    const float threshold = calibrate_threshold(pars, 0.15f);
    const auto res = filter_dataset(samples, detector, threshold);
    const auto dropped = static_cast<int>(res.dropped.size());
    EXPECT_LE(std::abs(dropped - 15), 1);
    crit.detail() << "affine exact " << affine_exact << "/100, PAR exact " << par_exact << "/100, dropped "
                  << dropped << "/100 at threshold " << threshold;
}

TEST(Acceptance, C08_BreakdownArithmetic) {
    Criterion crit(8, "speed-up breakdown arithmetic");
    const auto rep = breakdown_report({{"projection", 3.12}, {"tiling", 15.35}, {"quantization", 1.16}});
    char want[32];
    std::snprintf(want, sizeof want, "%.2f", 3.12 * 15.35 * 1.16);
    EXPECT_EQ(rep.formatted(), std::string(want));
    EXPECT_LE(std::abs(rep.cumulative - 55.8), 0.5);
    crit.detail() << "product " << rep.formatted() << " (exact " << rep.cumulative << "), |diff vs 55.8| = "
                  << std::abs(rep.cumulative - 55.8);
}

TEST(Acceptance, C09_SeamRegression) {
    Criterion crit(9, "seam regression, zero padding vs adjacent padding");
    const auto proc = conv_processor<ImageBuffer>(ConvKernel::gaussian(3, 1.5));
    const auto corpus = textured_corpus(20, 256, 900);
    int wins = 0;
    double mean_zero = 0.0, mean_adj = 0.0;
    for (const auto& img : corpus) {
        const auto plan = make_plan(256, 256, 64, AdjacentPadding{4});
        TilingOptions zero_opts;
        zero_opts.padding_mode = PaddingMode::Zero;
        const double zero = seam_energy(run_tiled(img, proc, plan, zero_opts).image, plan);
        AcptOptions opts;
        opts.tile_size = 64;
        opts.padding_size = 4;
        const auto adj_res = run_acpt(img, proc, opts);
        const double adj = seam_energy(adj_res.image, adj_res.plan);
        wins += zero > adj ? 1 : 0;
        mean_zero += zero / 20;
        mean_adj += adj / 20;
    }
    EXPECT_GE(wins, 19);
    crit.detail() << "zero > adjacent on " << wins << "/20, mean seam energy zero " << mean_zero << " adjacent "
                  << mean_adj;
}

TEST(Acceptance, C10_EndToEndPipeline) {
    Criterion crit(10, "end-to-end pipeline on a 2048^2 input");
    const auto img = textured_image(2048, 2048, 3, 10);
    PipelineConfig cfg;
    cfg.edit.guidance = GuidanceWeights{1.5f, 7.5f};
    cfg.edit.steps = 4;
    cfg.edit.strength = 0.7f;
    cfg.edit.seed = 11;
    cfg.projection.scale = 4;
    cfg.upscale.processor = "identity";
    cfg.upscale.tile_size = 512;
    const std::vector<float> text{0.3f, -0.2f, 0.5f};
    const auto t0 = clock_type::now();
    const auto a = run_pipeline(img, cfg, text);
    const auto b = run_pipeline(img, cfg, text);
    const double elapsed = seconds_since(t0);
    EXPECT_EQ(a.image.width(), 2048);
    EXPECT_EQ(a.image.height(), 2048);
    EXPECT_TRUE(a.image == b.image);
    EXPECT_EQ(a.report.stages.size(), 3u);
    EXPECT_LE(static_cast<long long>(a.report.latent_width) * a.report.latent_height * a.report.latent_channels,
              64LL * 64 * 4);
    EXPECT_LE(a.report.latent_width, 64);
    EXPECT_LE(a.report.latent_height, 64);
    EXPECT_LE(a.report.latent_channels, 4);
    crit.detail() << "bit-identical " << (a.image == b.image ? "yes" : "no") << ", stages " << a.report.stages.size()
                  << ", latent " << a.report.latent_width << "x" << a.report.latent_height << "x"
                  << a.report.latent_channels << ", stage-3 pixels/output " <<
        static_cast<double>(a.report.upscale_pixels_processed) / (2048.0 * 2048.0) << ", two runs " << elapsed << " s";
}
