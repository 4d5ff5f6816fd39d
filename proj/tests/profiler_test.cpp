#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "test_util.hpp"
#include "tilesynth/profiler.hpp"

using namespace tilesynth;

TEST(OverheadRatio, Examples) {
    EXPECT_EQ(overhead_ratio(0.5), 4.0);
    EXPECT_EQ(overhead_ratio(0.0), 1.0);
    EXPECT_NEAR(overhead_ratio(0.25), 16.0 / 9.0, 1e-12);
    EXPECT_THROW(overhead_ratio(1.0), InvalidRatio);
    EXPECT_THROW(overhead_ratio(-0.1), InvalidRatio);
}

TEST(PaddingOverhead, DefaultBandStaysSmall) {
    EXPECT_NEAR(padding_overhead(512, 32), 1.265625, 1e-12);
    EXPECT_EQ(padding_overhead(512, 0), 1.0);
    for (int tile : {64, 128, 256, 512, 1024}) EXPECT_LE(padding_overhead(tile, default_padding(tile)), 1.3) << tile;
    EXPECT_THROW(padding_overhead(0, 1), InvalidDimension);
}

TEST(Breakdown, Examples) {
    const auto rep = breakdown_report({{"projection", 3.12}, {"tiling", 15.35}, {"quantization", 1.16}});
    // 3.12 * 15.35 * 1.16 = 55.55472
    EXPECT_EQ(rep.formatted(), "55.55");
    EXPECT_NEAR(rep.cumulative, 3.12 * 15.35 * 1.16, 1e-9);
    EXPECT_LE(std::abs(rep.cumulative - 55.8), 0.5);
    EXPECT_EQ(breakdown_report({{"a", 2.0}}).cumulative, 2.0);
    EXPECT_EQ(breakdown_report({{"a", 1.0}, {"b", 1.0}}).cumulative, 1.0);
    EXPECT_THROW(breakdown_report({{"a", 0.0}}), InvalidRatio);
    EXPECT_THROW(breakdown_report({}), EmptyInput);
    const auto j = to_json(rep);
    EXPECT_EQ(j.at("cumulative_text"), "55.55");
    EXPECT_EQ(j.at("stages").size(), 3u);
}

TEST(Breakdown, CumulativeIsProductProperty) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.1, 20.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::pair<std::string, double>> stages;
        double want = 1.0;
        for (int i = 0; i < tstest::uniform_int(rng, 1, 6); ++i) {
            stages.emplace_back("s" + std::to_string(i), u(rng));
            want *= stages.back().second;
        }
        EXPECT_NEAR(breakdown_report(stages).cumulative, want, 1e-9 * want);
    }
}

TEST(Sweep, RecordsPerConfiguration) {
    const auto img = tstest::random_image(128, 128, 1, 2);
    SweepOptions opts;
    opts.tile_sizes = {32, 64, 128};
    opts.overlaps = {0.0, 0.25, 0.5};
    opts.repeats = 3;
    opts.padding = 2;
    opts.reference = img;
    const auto recs = sweep(img, identity_processor<ImageBuffer>(), opts);
    ASSERT_EQ(recs.size(), 9u);
    for (const auto& r : recs) {
        EXPECT_GE(r.pixels_processed, 128u * 128u);
        EXPECT_GE(r.tiles_count, 1u);
        EXPECT_GE(r.wall_time, 0.0);
        ASSERT_TRUE(r.max_abs_error.has_value());
        EXPECT_EQ(*r.max_abs_error, 0.0);
    }
    EXPECT_EQ(recs[6].tiles_count, 1u);  // tile == image
    EXPECT_EQ(recs[0].strategy, "adjacent_padding");
    EXPECT_EQ(recs[1].strategy, "small_overlap");
}

TEST(Sweep, PixelRatioTracksOverheadModel) {
    const auto img = tstest::random_image(512, 512, 1, 3);
    SweepOptions opts;
    opts.tile_sizes = {8, 16, 32};
    opts.overlaps = {0.0, 0.25, 0.5};
    const auto recs = sweep(img, identity_processor<ImageBuffer>(), opts);
    for (std::size_t t = 0; t < 3; ++t) {
        const auto base = static_cast<double>(recs[t * 3].pixels_processed);
        for (std::size_t o = 1; o < 3; ++o) {
            const auto& r = recs[t * 3 + o];
            const double ratio = static_cast<double>(r.pixels_processed) / base;
            // Exact count: n = (E - T) / S + 1 tiles per axis, each T^2 pixels.
            const int stride = r.tile_size - static_cast<int>(r.overlap_ratio * r.tile_size);
            const double n = std::ceil(static_cast<double>(512 - r.tile_size) / stride) + 1;
            EXPECT_NEAR(ratio, n * n * r.tile_size * r.tile_size / (512.0 * 512.0), 1e-12);
            if (r.tile_size > 16) continue;  // the model is asymptotic in extent / tile
            EXPECT_GE(ratio, 0.95 * r.model_overhead) << r.tile_size << ' ' << r.overlap_ratio;
            EXPECT_LE(ratio, 1.05 * r.model_overhead) << r.tile_size << ' ' << r.overlap_ratio;
        }
    }
}

TEST(Sweep, Errors) {
    const auto img = tstest::random_image(64, 64, 1, 4);
    SweepOptions opts;
    opts.tile_sizes = {32};
    opts.overlaps = {0.0};
    opts.repeats = 0;
    EXPECT_THROW(sweep(img, identity_processor<ImageBuffer>(), opts), InvalidDimension);
    opts.repeats = 1;
    opts.tile_sizes = {128};
    EXPECT_THROW(sweep(img, identity_processor<ImageBuffer>(), opts), InvalidTileSize);
}

TEST(Sweep, CsvAndJson) {
    ProfileRecord r;
    r.tile_size = 64;
    r.overlap_ratio = 0.5;
    r.pixels_processed = 1000;
    r.model_overhead = 4;
    r.wall_time = 0.002;
    r.peak_alloc = 4096;
    std::ostringstream os;
    write_sweep_csv(os, {r});
    EXPECT_EQ(os.str(), "tile_size,overlap,pixels_processed,model_overhead,wall_ms,peak_bytes\n64,0.5,1000,4,2,4096\n");
    EXPECT_EQ(to_json(r).at("pixels_processed"), 1000);
    EXPECT_FALSE(to_json(r).contains("max_abs_error"));
}
