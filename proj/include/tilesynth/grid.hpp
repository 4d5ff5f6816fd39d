#pragma once

/**
 * grid.hpp - Dense H x W x C rasters shared by every module.
 *
 * Storage is row-major and channel-interleaved: element (y, x, c) lives at
 * ((y * width) + x) * channels + c. Pixel-space images and latent grids use
 * the same layout but are distinct types so that a latent cannot be handed
 * to an image routine by accident; `retag` converts explicitly.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tilesynth/error.hpp"

namespace tilesynth {

struct PixelSpace {};
struct LatentSpace {};

/// Axis-aligned rectangle in pixel units.
struct Rect {
    int x = 0;
    int y = 0;
    int w = 1;
    int h = 1;

    friend bool operator==(const Rect&, const Rect&) = default;
};

template <typename T, typename Space>
class Grid {
public:
    using value_type = T;
    using space_type = Space;

    Grid() = default;

    Grid(int height, int width, int channels, T fill = T{})
        : height_(height), width_(width), channels_(channels) {
        if (height <= 0 || width <= 0 || channels <= 0) {
            throw InvalidDimension("grid dimensions must be positive, got " +
                                   std::to_string(height) + "x" + std::to_string(width) + "x" +
                                   std::to_string(channels));
        }
        data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
    }

    Grid(int height, int width, int channels, std::vector<T> data)
        : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
        if (height <= 0 || width <= 0 || channels <= 0) {
            throw InvalidDimension("grid dimensions must be positive");
        }
        if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
            throw ShapeError("grid data length does not match dimensions");
        }
    }

    [[nodiscard]] int height() const noexcept { return height_; }
    [[nodiscard]] int width() const noexcept { return width_; }
    [[nodiscard]] int channels() const noexcept { return channels_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
    [[nodiscard]] std::size_t bytes() const noexcept { return data_.size() * sizeof(T); }

    [[nodiscard]] std::span<T> data() noexcept { return data_; }
    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<T>& storage() const noexcept { return data_; }

    [[nodiscard]] std::size_t index(int y, int x, int c = 0) const noexcept {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    T& operator()(int y, int x, int c = 0) noexcept { return data_[index(y, x, c)]; }
    const T& operator()(int y, int x, int c = 0) const noexcept { return data_[index(y, x, c)]; }

    /// Row `y` as a contiguous span of width * channels values.
    [[nodiscard]] std::span<T> row(int y) noexcept {
        return std::span<T>(data_).subspan(index(y, 0), static_cast<std::size_t>(width_) * channels_);
    }
    [[nodiscard]] std::span<const T> row(int y) const noexcept {
        return std::span<const T>(data_).subspan(index(y, 0),
                                                 static_cast<std::size_t>(width_) * channels_);
    }

    [[nodiscard]] bool same_shape(const auto& other) const noexcept {
        return height_ == other.height() && width_ == other.width() &&
               channels_ == other.channels();
    }

    [[nodiscard]] bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    void fill(T v) noexcept { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

using ImageBuffer = Grid<float, PixelSpace>;
using LatentGrid = Grid<float, LatentSpace>;

/// Same values, different space tag (and optionally scalar type).
template <typename Space, typename U = void, typename T, typename S>
auto retag(const Grid<T, S>& g) {
    using Out = std::conditional_t<std::is_void_v<U>, T, U>;
    std::vector<Out> values(g.data().begin(), g.data().end());
    return Grid<Out, Space>(g.height(), g.width(), g.channels(), std::move(values));
}

/// Element type conversion within the same space.
template <typename U, typename T, typename S>
Grid<U, S> cast(const Grid<T, S>& g) {
    return retag<S, U>(g);
}

template <typename G>
void require_same_shape(const G& a, const G& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.height()) +
                         "x" + std::to_string(a.width()) + "x" + std::to_string(a.channels()) +
                         " vs " + std::to_string(b.height()) + "x" + std::to_string(b.width()) +
                         "x" + std::to_string(b.channels()) + ")");
    }
}

template <typename G>
[[nodiscard]] bool rect_inside(const G& g, const Rect& r) noexcept {
    return r.x >= 0 && r.y >= 0 && r.w >= 1 && r.h >= 1 && r.x + r.w <= g.width() &&
           r.y + r.h <= g.height();
}

/// Exact copy of the rectangle `r` of `src`.
template <typename T, typename S>
Grid<T, S> crop(const Grid<T, S>& src, const Rect& r) {
    if (!rect_inside(src, r)) {
        throw OutOfBounds("crop rectangle (" + std::to_string(r.x) + "," + std::to_string(r.y) +
                          "," + std::to_string(r.w) + "," + std::to_string(r.h) +
                          ") outside source");
    }
    Grid<T, S> out(r.h, r.w, src.channels());
    const auto run = static_cast<std::size_t>(r.w) * src.channels();
    for (int y = 0; y < r.h; ++y) {
        const auto from = src.row(r.y + y).subspan(static_cast<std::size_t>(r.x) * src.channels(), run);
        std::copy(from.begin(), from.end(), out.row(y).begin());
    }
    return out;
}

/// Copies `src` into `dst` with its top-left corner at (x, y).
template <typename T, typename S>
void place(Grid<T, S>& dst, const Grid<T, S>& src, int x, int y) {
    if (src.channels() != dst.channels()) {
        throw ChannelMismatch("place: channel count differs");
    }
    if (!rect_inside(dst, Rect{x, y, src.width(), src.height()})) {
        throw OutOfBounds("place: source does not fit inside destination");
    }
    const auto off = static_cast<std::size_t>(x) * dst.channels();
    for (int r = 0; r < src.height(); ++r) {
        const auto from = src.row(r);
        std::copy(from.begin(), from.end(), dst.row(y + r).begin() + static_cast<std::ptrdiff_t>(off));
    }
}

/// Nearest-neighbour expansion by an integer factor (block replication).
template <typename T, typename S>
Grid<T, S> upsample_nearest(const Grid<T, S>& src, int factor) {
    if (factor < 1) {
        throw InvalidDimension("upsample factor must be >= 1");
    }
    if (factor == 1) {
        return src;
    }
    Grid<T, S> out(src.height() * factor, src.width() * factor, src.channels());
    const int ch = src.channels();
    for (int y = 0; y < out.height(); ++y) {
        const auto in = src.row(y / factor);
        auto dst = out.row(y);
        for (int x = 0; x < out.width(); ++x) {
            const auto s = static_cast<std::size_t>(x / factor) * ch;
            for (int c = 0; c < ch; ++c) {
                dst[static_cast<std::size_t>(x) * ch + c] = in[s + c];
            }
        }
    }
    return out;
}

}  // namespace tilesynth
