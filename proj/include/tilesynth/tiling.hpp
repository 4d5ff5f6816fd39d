#pragma once

/**
 * tiling.hpp - Adaptive context-preserving tiling.
 *
 * Two execution strategies:
 *
 *  - Adjacent padding (0% overlap). Used when both image dimensions are
 *    multiples of the tile size. Each tile is processed together with a band
 *    of real neighbouring pixels around it; the band is cropped off the result
 *    and the core is written to a disjoint output region. Bands that would
 *    fall outside the image stay zero.
 *
 *  - Small overlap. Used for every other size. Raw tiles (no padding) are
 *    taken on a stride of tile_size - floor(overlap_ratio * tile_size), a
 *    final position is clamped to the far edge so the whole image is covered,
 *    and results are blended with per-pixel weights.
 *
 * Tile order never changes the result: strategy A writes disjoint regions,
 * strategy B blends processed tiles in plan order.
 */

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilesynth/error.hpp"
#include "tilesynth/grid.hpp"
#include "tilesynth/processors.hpp"

namespace tilesynth {

struct AdjacentPadding {
    int padding_size = 0;
    friend bool operator==(const AdjacentPadding&, const AdjacentPadding&) = default;
};

struct SmallOverlap {
    double overlap_ratio = 0.0;
    friend bool operator==(const SmallOverlap&, const SmallOverlap&) = default;
};

using TilingStrategy = std::variant<AdjacentPadding, SmallOverlap>;

/// How the band around a strategy-A tile is filled where a neighbour exists.
enum class PaddingMode { Zero, Reflect, Adjacent };

/// How a band that would fall outside the image is filled.
enum class BorderPolicy { Zero, Reflect };

enum class BlendMode { LinearFeather, Average };

struct BlendSpec {
    BlendMode mode = BlendMode::LinearFeather;
    int feather = 0;  // ramp width in output pixels; 0 disables the ramp
};

struct TilingPlan {
    TilingStrategy strategy;
    int tile_size = 0;
    int width = 0;
    int height = 0;
    std::vector<int> xs;
    std::vector<int> ys;

    [[nodiscard]] std::vector<std::pair<int, int>> positions() const {
        std::vector<std::pair<int, int>> out;
        out.reserve(xs.size() * ys.size());
        for (int y : ys) {
            for (int x : xs) {
                out.emplace_back(x, y);
            }
        }
        return out;
    }
    [[nodiscard]] std::size_t tile_count() const noexcept { return xs.size() * ys.size(); }
    [[nodiscard]] bool uses_adjacent_padding() const noexcept {
        return std::holds_alternative<AdjacentPadding>(strategy);
    }
    [[nodiscard]] int padding_size() const noexcept {
        const auto* a = std::get_if<AdjacentPadding>(&strategy);
        return a != nullptr ? a->padding_size : 0;
    }
    [[nodiscard]] double overlap_ratio() const noexcept {
        const auto* b = std::get_if<SmallOverlap>(&strategy);
        return b != nullptr ? b->overlap_ratio : 0.0;
    }
    [[nodiscard]] int overlap_pixels() const noexcept {
        return static_cast<int>(std::floor(overlap_ratio() * tile_size));
    }
};

/// Padding band of ~6% of the tile, rounded to an even pixel count (512 -> 32).
[[nodiscard]] inline int default_padding(int tile_size) {
    int p = static_cast<int>(std::lround(0.06 * tile_size));
    return (p % 2 == 0) ? p : p + 1;
}

inline TilingStrategy select_strategy(int width, int height, int tile_size, double default_overlap,
                                      int default_padding) {
    if (tile_size < 1 || tile_size > std::min(width, height)) {
        throw InvalidTileSize("tile size " + std::to_string(tile_size) + " does not fit a " +
                              std::to_string(width) + "x" + std::to_string(height) + " image");
    }
    if (width % tile_size == 0 && height % tile_size == 0) {
        return AdjacentPadding{default_padding};
    }
    return SmallOverlap{default_overlap};
}

/// Tile origins along one axis: multiples of the stride, plus a final
/// position clamped to extent - tile_size when the multiples leave a gap.
inline std::vector<int> tile_positions(int extent, int tile_size, double overlap_ratio) {
    if (tile_size < 1 || tile_size > extent) {
        throw InvalidTileSize("tile size " + std::to_string(tile_size) + " exceeds extent " +
                              std::to_string(extent));
    }
    if (!(overlap_ratio >= 0.0 && overlap_ratio < 1.0)) {
        throw InvalidRatio("overlap ratio must be in [0, 1)");
    }
    const int overlap_pixels = static_cast<int>(std::floor(overlap_ratio * tile_size));
    const int stride = std::max(1, tile_size - overlap_pixels);
    const int last = extent - tile_size;
    std::vector<int> out;
    for (int p = 0; p <= last; p += stride) {
        out.push_back(p);
    }
    if (out.back() != last) {
        out.push_back(last);
    }
    return out;
}

inline TilingPlan make_plan(int width, int height, int tile_size, const TilingStrategy& strategy) {
    if (tile_size < 1 || tile_size > std::min(width, height)) {
        throw InvalidTileSize("tile size " + std::to_string(tile_size) + " does not fit a " +
                              std::to_string(width) + "x" + std::to_string(height) + " image");
    }
    TilingPlan plan{strategy, tile_size, width, height, {}, {}};
    if (const auto* a = std::get_if<AdjacentPadding>(&strategy)) {
        if (a->padding_size < 0) {
            throw InvalidDimension("padding size must be >= 0");
        }
        if (width % tile_size != 0 || height % tile_size != 0) {
            throw InvalidTileSize("adjacent padding needs dimensions divisible by the tile size");
        }
        for (int x = 0; x < width; x += tile_size) plan.xs.push_back(x);
        for (int y = 0; y < height; y += tile_size) plan.ys.push_back(y);
    } else {
        const double r = std::get<SmallOverlap>(strategy).overlap_ratio;
        if (!(r >= 0.0 && r <= 0.5)) {
            throw InvalidRatio("small-overlap ratio must be in [0, 0.5]");
        }
        plan.xs = tile_positions(width, tile_size, r);
        plan.ys = tile_positions(height, tile_size, r);
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Padded extraction

namespace detail {

/// Reflects i into [0, n) without repeating the edge sample.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace detail

/**
 * Extracts the tile at (start_x, start_y) with a band of `padding_size` pixels
 * on every side. Band pixels that lie inside the image are filled per `mode`;
 * band pixels outside the image per `border`. For tiles on a grid of
 * multiples of tile_size with padding_size <= tile_size this is exactly the
 * per-side guard (start_y >= padding_size, ...) with corners filled when both
 * adjoining sides qualify.
 */
template <typename T, typename S>
Grid<T, S> extract_padded(const Grid<T, S>& img, int start_x, int start_y, int tile_size, int padding_size,
                          PaddingMode mode, BorderPolicy border = BorderPolicy::Zero) {
    if (padding_size < 0) {
        throw InvalidDimension("padding size must be >= 0");
    }
    if (!rect_inside(img, Rect{start_x, start_y, tile_size, tile_size})) {
        throw OutOfBounds("tile at (" + std::to_string(start_x) + "," + std::to_string(start_y) +
                          ") size " + std::to_string(tile_size) + " outside image");
    }
    const int p = padding_size;
    const int n = tile_size + 2 * p;
    const int ch = img.channels();

    Grid<T, S> out(n, n, ch);
    for (int py = 0; py < n; ++py) {
        const int ty = py - p;  // tile-local row
        const bool row_mid = ty >= 0 && ty < tile_size;
        const bool row_inside = start_y + ty >= 0 && start_y + ty < img.height();
        for (int px = 0; px < n; ++px) {
            const int tx = px - p;
            const bool core = row_mid && tx >= 0 && tx < tile_size;
            const bool inside = row_inside && start_x + tx >= 0 && start_x + tx < img.width();

            int sy = -1;
            int sx = -1;
            if (core || (inside && mode == PaddingMode::Adjacent)) {
                sy = start_y + ty;
                sx = start_x + tx;
            } else if ((inside && mode == PaddingMode::Reflect) || (!inside && border == BorderPolicy::Reflect)) {
                sy = start_y + detail::reflect_index(ty, tile_size);
                sx = start_x + detail::reflect_index(tx, tile_size);
            }
            if (sy >= 0) {
                const T* src = &img(sy, sx, 0);
                std::copy(src, src + ch, &out(py, px, 0));
            }
        }
    }
    return out;
}

/// Tile with real neighbouring pixels in its padding band; zero where the band leaves the image.
template <typename T, typename S>
Grid<T, S> extract_with_adjacent_padding(const Grid<T, S>& img, int start_x, int start_y, int tile_size,
                                         int padding_size) {
    return extract_padded(img, start_x, start_y, tile_size, padding_size, PaddingMode::Adjacent);
}

/// Crops padding_size * scale pixels from every side.
template <typename T, typename S>
Grid<T, S> remove_padding(const Grid<T, S>& tile, int padding_size, int scale) {
    if (padding_size < 0 || scale < 1) {
        throw InvalidDimension("remove_padding: padding must be >= 0 and scale >= 1");
    }
    const int band = padding_size * scale;
    if (tile.width() < 2 * band + 1 || tile.height() < 2 * band + 1) {
        throw InvalidDimension("remove_padding: tile too small for padding band");
    }
    if (band == 0) {
        return tile;
    }
    return crop(tile, Rect{band, band, tile.width() - 2 * band, tile.height() - 2 * band});
}

// ---------------------------------------------------------------------------
// Blending

/// Weighted accumulator over an output grid. Weights only ramp on tile sides
/// that do not touch the output border, so every covered pixel has weight > 0.
template <typename G>
class BlendAccumulator {
public:
    BlendAccumulator(int height, int width, int channels)
        : values_(height, width, channels), weights_(static_cast<std::size_t>(height) * width, 0.0) {}

    [[nodiscard]] int height() const noexcept { return values_.height(); }
    [[nodiscard]] int width() const noexcept { return values_.width(); }
    [[nodiscard]] std::size_t bytes() const noexcept {
        return values_.bytes() + weights_.size() * sizeof(double);
    }

    void add(const G& tile, int x, int y, const BlendSpec& spec) {
        if (tile.channels() != values_.channels()) {
            throw ChannelMismatch("blend: tile channel count differs from output");
        }
        if (!rect_inside(values_, Rect{x, y, tile.width(), tile.height()})) {
            throw OutOfBounds("blend: tile at (" + std::to_string(x) + "," + std::to_string(y) +
                              ") outside output");
        }
        const auto wx = axis_weights(tile.width(), x, width(), spec);
        const auto wy = axis_weights(tile.height(), y, height(), spec);
        const int ch = tile.channels();
        for (int ty = 0; ty < tile.height(); ++ty) {
            for (int tx = 0; tx < tile.width(); ++tx) {
                const double w = wy[static_cast<std::size_t>(ty)] * wx[static_cast<std::size_t>(tx)];
                weights_[static_cast<std::size_t>(y + ty) * width() + (x + tx)] += w;
                double* dst = &values_(y + ty, x + tx, 0);
                const auto* src = &tile(ty, tx, 0);
                for (int c = 0; c < ch; ++c) {
                    dst[c] += w * static_cast<double>(src[c]);
                }
            }
        }
    }

    [[nodiscard]] double weight_at(int y, int x) const noexcept {
        return weights_[static_cast<std::size_t>(y) * width() + x];
    }

    [[nodiscard]] G finalize() const {
        G out(height(), width(), values_.channels());
        const int ch = values_.channels();
        for (int y = 0; y < height(); ++y) {
            for (int x = 0; x < width(); ++x) {
                const double w = weight_at(y, x);
                if (w <= 0.0) {
                    throw OutOfBounds("blend: output pixel (" + std::to_string(x) + "," +
                                      std::to_string(y) + ") was never covered");
                }
                for (int c = 0; c < ch; ++c) {
                    out(y, x, c) = static_cast<typename G::value_type>(values_(y, x, c) / w);
                }
            }
        }
        return out;
    }

private:
    static std::vector<double> axis_weights(int n, int origin, int extent, const BlendSpec& spec) {
        std::vector<double> w(static_cast<std::size_t>(n), 1.0);
        if (spec.mode == BlendMode::Average || spec.feather <= 0) {
            return w;
        }
        const bool ramp_lo = origin > 0;
        const bool ramp_hi = origin + n < extent;
        const auto f = static_cast<double>(spec.feather);
        for (int i = 0; i < n; ++i) {
            double v = 1.0;
            if (ramp_lo) v = std::min(v, (i + 0.5) / f);
            if (ramp_hi) v = std::min(v, (n - 1 - i + 0.5) / f);
            w[static_cast<std::size_t>(i)] = v;
        }
        return w;
    }

    Grid<double, typename G::space_type> values_;
    std::vector<double> weights_;
};

template <typename G>
void blend_tiles_to_output(BlendAccumulator<G>& acc, const G& tile, int x, int y, const BlendSpec& spec) {
    acc.add(tile, x, y, spec);
}

// ---------------------------------------------------------------------------
// Engine

/// Byte counter with a high-water mark for the engine's own buffers.
class MemoryMeter {
public:
    void acquire(std::size_t n) noexcept {
        const auto now = current_.fetch_add(n) + n;
        auto prev = peak_.load();
        while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
        }
    }
    void release(std::size_t n) noexcept { current_.fetch_sub(n); }
    [[nodiscard]] std::size_t current() const noexcept { return current_.load(); }
    [[nodiscard]] std::size_t peak() const noexcept { return peak_.load(); }
    void reset() noexcept {
        current_ = 0;
        peak_ = 0;
    }

private:
    std::atomic<std::size_t> current_{0};
    std::atomic<std::size_t> peak_{0};
};

class MeterGuard {
public:
    MeterGuard(MemoryMeter& m, std::size_t n) : meter_(&m), n_(n) { meter_->acquire(n_); }
    MeterGuard(const MeterGuard&) = delete;
    MeterGuard& operator=(const MeterGuard&) = delete;
    ~MeterGuard() { meter_->release(n_); }

private:
    MemoryMeter* meter_;
    std::size_t n_;
};

struct TilingOptions {
    PaddingMode padding_mode = PaddingMode::Adjacent;
    BorderPolicy border = BorderPolicy::Zero;
    BlendMode blend = BlendMode::LinearFeather;
    int threads = 1;
};

struct TilingStats {
    std::size_t tiles_count = 0;
    std::size_t pixels_processed = 0;  // output pixels produced by the processor, padding included
    std::size_t peak_bytes = 0;
    int threads = 1;
};

template <typename G>
struct TiledResult {
    G image;
    TilingPlan plan;
    TilingStats stats;
};

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the
/// exception of the lowest failing index.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::optional<std::pair<std::size_t, std::exception_ptr>> first_error;
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(err_mutex);
                if (!first_error || i < first_error->first) {
                    first_error.emplace(i, std::current_exception());
                }
            }
        }
    };
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(workers, n); ++t) {
        pool.emplace_back(work);
    }
    pool.clear();
    if (first_error) {
        std::rethrow_exception(first_error->second);
    }
}

}  // namespace detail

/// Executes a precomputed plan. Strategy A honours `opts.padding_mode`;
/// strategy B always processes raw tiles and blends.
template <typename G>
TiledResult<G> run_tiled(const G& img, const TileProcessor<G>& proc, const TilingPlan& plan,
                         const TilingOptions& opts = {}, MemoryMeter* meter = nullptr) {
    if (plan.width != img.width() || plan.height != img.height()) {
        throw ShapeError("tiling plan was made for a different image size");
    }
    MemoryMeter local_meter;
    MemoryMeter& mem = meter != nullptr ? *meter : local_meter;
    const int s = proc.scale();
    const int t = plan.tile_size;
    const auto positions = plan.positions();

    TiledResult<G> result{G{}, plan, {}};
    result.stats.tiles_count = positions.size();
    result.stats.threads = std::max(1, opts.threads);
    std::atomic<std::size_t> pixels{0};

    if (plan.uses_adjacent_padding()) {
        const int p = plan.padding_size();
        G out(img.height() * s, img.width() * s, img.channels());
        MeterGuard out_guard(mem, out.bytes());
        detail::parallel_for(positions.size(), opts.threads, [&](std::size_t i) {
            const auto [x, y] = positions[i];
            const G padded = extract_padded(img, x, y, t, p, opts.padding_mode, opts.border);
            MeterGuard g1(mem, padded.bytes());
            const G processed = proc(padded);
            MeterGuard g2(mem, processed.bytes());
            pixels += static_cast<std::size_t>(processed.height()) * processed.width();
            const G core = remove_padding(processed, p, s);
            if (core.channels() != out.channels()) {
                throw ChannelMismatch("processor changed the channel count");
            }
            place(out, core, x * s, y * s);  // disjoint regions
        });
        result.image = std::move(out);
    } else {
        const int feather = plan.overlap_pixels() * s;
        const BlendSpec spec{opts.blend, feather};
        std::optional<BlendAccumulator<G>> acc;
        std::optional<MeterGuard> acc_guard;
        const auto wave = static_cast<std::size_t>(std::max(1, opts.threads));
        for (std::size_t begin = 0; begin < positions.size(); begin += wave) {
            const std::size_t count = std::min(wave, positions.size() - begin);
            std::vector<std::optional<G>> done(count);
            detail::parallel_for(count, opts.threads, [&](std::size_t k) {
                const auto [x, y] = positions[begin + k];
                const G tile = crop(img, Rect{x, y, t, t});
                MeterGuard g1(mem, tile.bytes());
                done[k] = proc(tile);
                mem.acquire(done[k]->bytes());
                pixels += static_cast<std::size_t>(done[k]->height()) * done[k]->width();
            });
            for (std::size_t k = 0; k < count; ++k) {
                if (!acc) {
                    acc.emplace(img.height() * s, img.width() * s, done[k]->channels());
                    acc_guard.emplace(mem, acc->bytes());
                }
                const auto [x, y] = positions[begin + k];
                blend_tiles_to_output(*acc, *done[k], x * s, y * s, spec);
                mem.release(done[k]->bytes());
                done[k].reset();
            }
        }
        {
            G finished = acc->finalize();
            MeterGuard fin(mem, finished.bytes());
            result.image = std::move(finished);
        }
    }
    result.stats.pixels_processed = pixels.load();
    result.stats.peak_bytes = mem.peak();
    return result;
}

struct AcptOptions {
    int tile_size = 512;
    std::optional<int> padding_size;  // default_padding(tile_size) when unset
    double overlap_ratio = 0.25;
    BlendMode blend = BlendMode::LinearFeather;
    BorderPolicy border = BorderPolicy::Zero;
    int threads = 1;
};

/// Chooses the strategy from the image size, then runs it.
template <typename G>
TiledResult<G> run_acpt(const G& img, const TileProcessor<G>& proc, const AcptOptions& opts,
                        MemoryMeter* meter = nullptr) {
    const int pad = opts.padding_size.value_or(default_padding(opts.tile_size));
    const auto strategy = select_strategy(img.width(), img.height(), opts.tile_size, opts.overlap_ratio, pad);
    const auto plan = make_plan(img.width(), img.height(), opts.tile_size, strategy);
    TilingOptions topts{PaddingMode::Adjacent, opts.border, opts.blend, opts.threads};
    return run_tiled(img, proc, plan, topts, meter);
}

/// True when the padding band covers the processor's receptive field.
template <typename G>
[[nodiscard]] bool padding_sufficient(const TileProcessor<G>& proc, int padding_size) noexcept {
    return proc.receptive_field() <= padding_size;
}

// ---------------------------------------------------------------------------
// Plan serialization

inline nlohmann::json plan_to_json(const TilingPlan& plan) {
    nlohmann::json j;
    if (plan.uses_adjacent_padding()) {
        j["strategy"] = "adjacent_padding";
        j["padding_size"] = plan.padding_size();
    } else {
        j["strategy"] = "small_overlap";
        j["overlap_ratio"] = plan.overlap_ratio();
    }
    j["tile_size"] = plan.tile_size;
    j["input_dims"] = {plan.width, plan.height};
    auto pos = nlohmann::json::array();
    for (const auto& [x, y] : plan.positions()) {
        pos.push_back({x, y});
    }
    j["positions"] = std::move(pos);
    return j;
}

inline TilingPlan plan_from_json(const nlohmann::json& j) {
    try {
        const int tile = j.at("tile_size").get<int>();
        const int w = j.at("input_dims").at(0).get<int>();
        const int h = j.at("input_dims").at(1).get<int>();
        const auto name = j.at("strategy").get<std::string>();
        TilingStrategy strategy;
        if (name == "adjacent_padding") {
            strategy = AdjacentPadding{j.at("padding_size").get<int>()};
        } else if (name == "small_overlap") {
            strategy = SmallOverlap{j.at("overlap_ratio").get<double>()};
        } else {
            throw FormatError("unknown tiling strategy '" + name + "'");
        }
        return make_plan(w, h, tile, strategy);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed tiling plan: ") + e.what());
    }
}

inline BlendMode parse_blend(const std::string& s) {
    if (s == "feather" || s == "linear_feather") return BlendMode::LinearFeather;
    if (s == "average") return BlendMode::Average;
    throw UsageError("unknown blend mode '" + s + "'");
}

}  // namespace tilesynth
