#pragma once

// Co-design profiling: pixel-overhead models, tile-size/overlap sweeps and
// multiplicative speed-up breakdowns.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilesynth/error.hpp"
#include "tilesynth/grid.hpp"
#include "tilesynth/processors.hpp"
#include "tilesynth/tiling.hpp"

namespace tilesynth {

/// Pixels processed relative to the output when tiles overlap by `overlap`: (1/(1-r))^2.
inline double overhead_ratio(double overlap) {
    if (!(overlap >= 0.0 && overlap < 1.0)) {
        throw InvalidRatio("overlap ratio must be in [0, 1)");
    }
    const double f = 1.0 / (1.0 - overlap);
    return f * f;
}

/// Per-tile pixel overhead of a padding band: ((tile + 2 pad) / tile)^2.
inline double padding_overhead(int tile_size, int padding_size) {
    if (tile_size < 1 || padding_size < 0) {
        throw InvalidDimension("padding_overhead: tile must be >= 1 and padding >= 0");
    }
    const double f = static_cast<double>(tile_size + 2 * padding_size) / tile_size;
    return f * f;
}

struct ProfileRecord {
    int tile_size = 0;
    double overlap_ratio = 0.0;
    int padding = 0;
    std::string strategy;
    std::size_t tiles_count = 0;
    std::size_t pixels_processed = 0;
    double model_overhead = 1.0;
    double wall_time = 0.0;  // seconds, median over repeats
    std::size_t peak_alloc = 0;
    int threads = 1;
    std::optional<double> max_abs_error;  // against SweepOptions::reference
};

struct SweepOptions {
    std::vector<int> tile_sizes;
    std::vector<double> overlaps;
    int repeats = 1;
    int padding = 0;  // band used for 0%-overlap configurations on aligned sizes
    int threads = 1;
    std::optional<ImageBuffer> reference;
};

/**
 * One record per (tile size, overlap). A 0% overlap on sizes the tile divides
 * runs the adjacent-padding strategy with `padding`; everything else runs the
 * small-overlap strategy. Configurations run sequentially.
 */
inline std::vector<ProfileRecord> sweep(const ImageBuffer& img, const TileProcessor<ImageBuffer>& proc,
                                        const SweepOptions& opts) {
    if (opts.repeats < 1) {
        throw InvalidDimension("sweep: repeats must be >= 1");
    }
    std::vector<ProfileRecord> records;
    for (int tile : opts.tile_sizes) {
        for (double overlap : opts.overlaps) {
            const bool aligned = tile >= 1 && img.width() % tile == 0 && img.height() % tile == 0;
            const TilingStrategy strategy = (overlap == 0.0 && aligned) ? TilingStrategy{AdjacentPadding{opts.padding}}
                                                                        : TilingStrategy{SmallOverlap{overlap}};
            const auto plan = make_plan(img.width(), img.height(), tile, strategy);
            ProfileRecord rec;
            rec.tile_size = tile;
            rec.overlap_ratio = overlap;
            rec.padding = plan.padding_size();
            rec.strategy = plan.uses_adjacent_padding() ? "adjacent_padding" : "small_overlap";
            rec.model_overhead = plan.uses_adjacent_padding() ? padding_overhead(tile, plan.padding_size())
                                                              : overhead_ratio(overlap);
            rec.threads = std::max(1, opts.threads);
            std::vector<double> times;
            for (int r = 0; r < opts.repeats; ++r) {
                MemoryMeter meter;
                TilingOptions topts;
                topts.threads = opts.threads;
                const auto start = std::chrono::steady_clock::now();
                auto res = run_tiled(img, proc, plan, topts, &meter);
                const auto stop = std::chrono::steady_clock::now();
                times.push_back(std::chrono::duration<double>(stop - start).count());
                rec.tiles_count = res.stats.tiles_count;
                rec.pixels_processed = res.stats.pixels_processed;
                rec.peak_alloc = std::max(rec.peak_alloc, res.stats.peak_bytes);
                if (opts.reference && r == 0) {
                    require_same_shape(res.image, *opts.reference, "sweep reference");
                    double m = 0.0;
                    for (std::size_t i = 0; i < res.image.size(); ++i) {
                        m = std::max(m, static_cast<double>(std::abs(res.image.data()[i] - opts.reference->data()[i])));
                    }
                    rec.max_abs_error = m;
                }
            }
            std::sort(times.begin(), times.end());
            const auto mid = times.size() / 2;
            rec.wall_time = times.size() % 2 == 1 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
            records.push_back(std::move(rec));
        }
    }
    return records;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<ProfileRecord>& records) {
    os << "tile_size,overlap,pixels_processed,model_overhead,wall_ms,peak_bytes\n";
    for (const auto& r : records) {
        os << r.tile_size << ',' << r.overlap_ratio << ',' << r.pixels_processed << ',' << r.model_overhead << ','
           << r.wall_time * 1000.0 << ',' << r.peak_alloc << '\n';
    }
}

inline nlohmann::json to_json(const ProfileRecord& r) {
    nlohmann::json j{{"tile_size", r.tile_size},
                     {"overlap", r.overlap_ratio},
                     {"padding", r.padding},
                     {"strategy", r.strategy},
                     {"tiles_count", r.tiles_count},
                     {"pixels_processed", r.pixels_processed},
                     {"model_overhead", r.model_overhead},
                     {"wall_ms", r.wall_time * 1000.0},
                     {"peak_bytes", r.peak_alloc},
                     {"threads", r.threads}};
    if (r.max_abs_error) j["max_abs_error"] = *r.max_abs_error;
    return j;
}

// ---------------------------------------------------------------------------
// Speed-up breakdown

struct BreakdownReport {
    std::vector<std::pair<std::string, double>> stages;
    double cumulative = 1.0;

    /// Cumulative product rounded to two decimals, e.g. "55.56".
    [[nodiscard]] std::string formatted() const {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f", cumulative);
        return buf;
    }
};

inline BreakdownReport breakdown_report(const std::vector<std::pair<std::string, double>>& stage_ratios) {
    if (stage_ratios.empty()) {
        throw EmptyInput("breakdown_report: no stages");
    }
    BreakdownReport rep;
    for (const auto& [label, ratio] : stage_ratios) {
        if (!(ratio > 0.0) || !std::isfinite(ratio)) {
            throw InvalidRatio("breakdown_report: stage '" + label + "' has a non-positive ratio");
        }
        rep.stages.emplace_back(label, ratio);
        rep.cumulative *= ratio;
    }
    return rep;
}

inline nlohmann::json to_json(const BreakdownReport& rep) {
    auto stages = nlohmann::json::array();
    for (const auto& [label, ratio] : rep.stages) stages.push_back({{"label", label}, {"ratio", ratio}});
    return nlohmann::json{{"stages", stages}, {"cumulative", rep.cumulative}, {"cumulative_text", rep.formatted()}};
}

}  // namespace tilesynth
