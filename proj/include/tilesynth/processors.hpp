#pragma once

/**
 * processors.hpp - Tile processors.
 *
 * A tile processor maps a grid to a grid `scale` times larger in each spatial
 * dimension. Its descriptor states how far (in input pixels) an input value
 * can influence the output; the tiling engine relies on that radius to decide
 * whether a padding band is wide enough for tiled and whole-image results to
 * agree.
 *
 * All convolutions here use zero-border semantics, which is exactly what a
 * zero-initialised padding band reproduces at the image border.
 */

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tilesynth/error.hpp"
#include "tilesynth/grid.hpp"

namespace tilesynth {

struct ProcessorDescriptor {
    int scale = 1;
    int receptive_field = 0;
    std::string name;
};

/// Type-erased, immutable tile processor over grids of type G.
template <typename G>
class TileProcessor {
public:
    using Fn = std::function<G(const G&)>;

    TileProcessor(ProcessorDescriptor desc, Fn fn) : desc_(std::move(desc)), fn_(std::move(fn)) {
        if (desc_.scale < 1 || desc_.receptive_field < 0) {
            throw InvalidDimension("processor '" + desc_.name +
                                   "': scale must be >= 1 and receptive field >= 0");
        }
    }

    [[nodiscard]] const ProcessorDescriptor& descriptor() const noexcept { return desc_; }
    [[nodiscard]] int scale() const noexcept { return desc_.scale; }
    [[nodiscard]] int receptive_field() const noexcept { return desc_.receptive_field; }

    G operator()(const G& tile) const {
        G out = fn_(tile);
        if (out.height() != tile.height() * desc_.scale || out.width() != tile.width() * desc_.scale) {
            throw ShapeError("processor '" + desc_.name + "' broke its scale contract");
        }
        return out;
    }

private:
    ProcessorDescriptor desc_;
    Fn fn_;
};

// ---------------------------------------------------------------------------
// Single-kernel convolution (shared across channels)

struct ConvKernel {
    int radius = 0;
    std::vector<float> taps;  // (2r+1)^2, row-major

    [[nodiscard]] int side() const noexcept { return 2 * radius + 1; }
    [[nodiscard]] float at(int dy, int dx) const noexcept {
        return taps[static_cast<std::size_t>((dy + radius) * side() + (dx + radius))];
    }

    static ConvKernel delta() { return ConvKernel{0, {1.0f}}; }

    static ConvKernel box(int r) {
        const int n = (2 * r + 1) * (2 * r + 1);
        return ConvKernel{r, std::vector<float>(static_cast<std::size_t>(n), 1.0f / static_cast<float>(n))};
    }

    static ConvKernel gaussian(int r, double sigma) {
        ConvKernel k{r, {}};
        double sum = 0.0;
        std::vector<double> w;
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                w.push_back(std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
                sum += w.back();
            }
        }
        for (double v : w) {
            k.taps.push_back(static_cast<float>(v / sum));
        }
        return k;
    }

    /// Uniform taps in [-1, 1]; not normalized.
    template <typename Rng>
    static ConvKernel random(int r, Rng& rng) {
        std::uniform_real_distribution<float> u(-1.0f, 1.0f);
        ConvKernel k{r, {}};
        k.taps.resize(static_cast<std::size_t>((2 * r + 1) * (2 * r + 1)));
        for (auto& t : k.taps) {
            t = u(rng);
        }
        return k;
    }
};

/// Direct 2-D convolution, zero border, applied independently to every channel.
template <typename T, typename S>
Grid<T, S> conv2d_apply(const Grid<T, S>& img, const ConvKernel& kernel) {
    const int r = kernel.radius;
    if (r < 0 || kernel.taps.size() != static_cast<std::size_t>(kernel.side() * kernel.side())) {
        throw ShapeError("conv kernel taps do not match radius");
    }
    const int h = img.height();
    const int w = img.width();
    const int ch = img.channels();
    Grid<T, S> out(h, w, ch);
    std::vector<double> acc(static_cast<std::size_t>(ch));
    for (int y = 0; y < h; ++y) {
        const int dy0 = std::max(-r, -y);
        const int dy1 = std::min(r, h - 1 - y);
        for (int x = 0; x < w; ++x) {
            const int dx0 = std::max(-r, -x);
            const int dx1 = std::min(r, w - 1 - x);
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int dy = dy0; dy <= dy1; ++dy) {
                const auto src = img.row(y + dy);
                for (int dx = dx0; dx <= dx1; ++dx) {
                    const double k = kernel.at(dy, dx);
                    const auto base = static_cast<std::size_t>(x + dx) * ch;
                    for (int c = 0; c < ch; ++c) {
                        acc[static_cast<std::size_t>(c)] += k * src[base + c];
                    }
                }
            }
            for (int c = 0; c < ch; ++c) {
                out(y, x, c) = static_cast<T>(acc[static_cast<std::size_t>(c)]);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Small 3x3 CNNs

enum class Activation { Identity, ReLU };

inline const char* to_string(Activation a) { return a == Activation::ReLU ? "relu" : "identity"; }

template <typename T>
struct CnnLayer {
    int in_ch = 0;
    int out_ch = 0;
    Activation activation = Activation::Identity;
    std::vector<T> weights;  // [out_ch][in_ch][3][3]
    std::vector<T> bias;     // [out_ch]

    static constexpr int kernel = 3;
    static constexpr int radius = 1;

    CnnLayer() = default;
    CnnLayer(int in, int out, Activation act)
        : in_ch(in),
          out_ch(out),
          activation(act),
          weights(static_cast<std::size_t>(in) * out * 9, T{}),
          bias(static_cast<std::size_t>(out), T{}) {}

    [[nodiscard]] std::size_t weight_index(int o, int i, int ky, int kx) const noexcept {
        return ((static_cast<std::size_t>(o) * in_ch + i) * 3 + ky) * 3 + kx;
    }
    [[nodiscard]] std::size_t parameter_count() const noexcept { return weights.size() + bias.size(); }
};

/**
 * A stack of 3x3 convolutions, optionally preceded by nearest-neighbour
 * expansion by `scale` and wrapped in a residual skip (output = expanded
 * input + stack output).
 */
template <typename T>
struct CnnNet {
    int scale = 1;
    bool residual = false;
    int declared_receptive_field = 0;  // in expanded-grid pixels
    std::vector<CnnLayer<T>> layers;

    [[nodiscard]] int layer_receptive_field() const noexcept {
        return static_cast<int>(layers.size()) * CnnLayer<T>::radius;
    }
    /// Influence radius measured in input pixels.
    [[nodiscard]] int input_receptive_field() const noexcept {
        return (declared_receptive_field + scale - 1) / scale;
    }
    [[nodiscard]] int in_channels() const noexcept { return layers.empty() ? 0 : layers.front().in_ch; }
    [[nodiscard]] int out_channels() const noexcept { return layers.empty() ? 0 : layers.back().out_ch; }
    [[nodiscard]] std::size_t parameter_count() const noexcept {
        std::size_t n = 0;
        for (const auto& l : layers) {
            n += l.parameter_count();
        }
        return n;
    }

    void validate() const {
        if (scale < 1) {
            throw ShapeError("network scale must be >= 1");
        }
        if (layers.empty()) {
            throw ShapeError("network has no layers");
        }
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.in_ch < 1 || l.out_ch < 1 ||
                l.weights.size() != static_cast<std::size_t>(l.in_ch) * l.out_ch * 9 ||
                l.bias.size() != static_cast<std::size_t>(l.out_ch)) {
                throw ShapeError("layer " + std::to_string(i) + " has inconsistent shapes");
            }
            if (i > 0 && layers[i - 1].out_ch != l.in_ch) {
                throw ShapeError("layer " + std::to_string(i) + " input channels do not chain");
            }
        }
        if (residual && in_channels() != out_channels()) {
            throw ShapeError("residual skip needs equal input and output channels");
        }
        if (declared_receptive_field != layer_receptive_field()) {
            throw ShapeError("declared receptive field " + std::to_string(declared_receptive_field) +
                             " does not match layer stack (" +
                             std::to_string(layer_receptive_field()) + ")");
        }
    }

    template <typename U>
    [[nodiscard]] CnnNet<U> cast() const {
        CnnNet<U> out;
        out.scale = scale;
        out.residual = residual;
        out.declared_receptive_field = declared_receptive_field;
        for (const auto& l : layers) {
            CnnLayer<U> c(l.in_ch, l.out_ch, l.activation);
            std::copy(l.weights.begin(), l.weights.end(), c.weights.begin());
            std::copy(l.bias.begin(), l.bias.end(), c.bias.begin());
            out.layers.push_back(std::move(c));
        }
        return out;
    }
};

using CnnWeights = CnnNet<float>;

/// One 3x3 convolution with zero border; no activation.
template <typename T, typename S>
Grid<T, S> conv3x3(const Grid<T, S>& in, const CnnLayer<T>& layer) {
    if (in.channels() != layer.in_ch) {
        throw ChannelMismatch("conv3x3: expected " + std::to_string(layer.in_ch) + " channels, got " +
                              std::to_string(in.channels()));
    }
    const int h = in.height();
    const int w = in.width();
    const int ic_n = layer.in_ch;
    const int oc_n = layer.out_ch;
    // Re-layout to [ky][kx][ic][oc] so the innermost loop is contiguous.
    std::vector<T> wt(layer.weights.size());
    for (int o = 0; o < oc_n; ++o) {
        for (int i = 0; i < ic_n; ++i) {
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    wt[((static_cast<std::size_t>(ky) * 3 + kx) * ic_n + i) * oc_n + o] =
                        layer.weights[layer.weight_index(o, i, ky, kx)];
                }
            }
        }
    }
    Grid<T, S> out(h, w, oc_n);
    std::vector<T> acc(static_cast<std::size_t>(oc_n));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::copy(layer.bias.begin(), layer.bias.end(), acc.begin());
            for (int ky = 0; ky < 3; ++ky) {
                const int yy = y + ky - 1;
                if (yy < 0 || yy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int xx = x + kx - 1;
                    if (xx < 0 || xx >= w) continue;
                    const T* src = &in(yy, xx, 0);
                    const T* wrow = &wt[(static_cast<std::size_t>(ky) * 3 + kx) * ic_n * oc_n];
                    for (int i = 0; i < ic_n; ++i) {
                        const T v = src[i];
                        const T* wp = wrow + static_cast<std::size_t>(i) * oc_n;
                        for (int o = 0; o < oc_n; ++o) {
                            acc[static_cast<std::size_t>(o)] += v * wp[o];
                        }
                    }
                }
            }
            std::copy(acc.begin(), acc.end(), &out(y, x, 0));
        }
    }
    return out;
}

template <typename T, typename S>
void apply_activation(Grid<T, S>& g, Activation act) {
    if (act == Activation::ReLU) {
        for (auto& v : g.data()) {
            v = v > T{} ? v : T{};
        }
    }
}

/// Forward pass keeping every intermediate: trace[0] is the expanded input,
/// trace[i+1] the post-activation output of layer i. The final output (with
/// the residual skip applied) is returned separately.
template <typename T, typename S>
struct CnnTrace {
    std::vector<Grid<T, S>> activations;
    Grid<T, S> output;
};

template <typename T, typename S>
CnnTrace<T, S> cnn_forward_trace(const Grid<T, S>& input, const CnnNet<T>& net) {
    if (net.layers.empty()) {
        throw ShapeError("network has no layers");
    }
    if (input.channels() != net.in_channels()) {
        throw ChannelMismatch("network expects " + std::to_string(net.in_channels()) +
                              " input channels, got " + std::to_string(input.channels()));
    }
    CnnTrace<T, S> trace;
    trace.activations.reserve(net.layers.size() + 1);
    trace.activations.push_back(upsample_nearest(input, net.scale));
    for (const auto& layer : net.layers) {
        auto next = conv3x3(trace.activations.back(), layer);
        apply_activation(next, layer.activation);
        trace.activations.push_back(std::move(next));
    }
    trace.output = trace.activations.back();
    if (net.residual) {
        const auto& skip = trace.activations.front();
        auto out = trace.output.data();
        const auto in = skip.data();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += in[i];
        }
    }
    return trace;
}

template <typename T, typename S>
Grid<T, S> cnn_forward(const Grid<T, S>& input, const CnnNet<T>& net) {
    if (net.layers.empty()) {
        throw ShapeError("network has no layers");
    }
    if (input.channels() != net.in_channels()) {
        throw ChannelMismatch("network expects " + std::to_string(net.in_channels()) +
                              " input channels, got " + std::to_string(input.channels()));
    }
    const auto expanded = upsample_nearest(input, net.scale);
    Grid<T, S> h = expanded;
    for (const auto& layer : net.layers) {
        h = conv3x3(h, layer);
        apply_activation(h, layer.activation);
    }
    if (net.residual) {
        auto out = h.data();
        const auto in = expanded.data();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += in[i];
        }
    }
    return h;
}

// ---------------------------------------------------------------------------
// Processor factories

template <typename G>
TileProcessor<G> identity_processor() {
    return TileProcessor<G>({1, 0, "identity"}, [](const G& g) { return g; });
}

template <typename G>
TileProcessor<G> nearest_upscaler(int factor) {
    return TileProcessor<G>({factor, 0, "nearest_x" + std::to_string(factor)},
                            [factor](const G& g) { return upsample_nearest(g, factor); });
}

/// Pixelwise affine map v -> gain * v + offset; receptive field 0.
template <typename G>
TileProcessor<G> gain_processor(float gain, float offset = 0.0f) {
    return TileProcessor<G>({1, 0, "gain"}, [gain, offset](const G& g) {
        G out = g;
        for (auto& v : out.data()) {
            v = gain * v + offset;
        }
        return out;
    });
}

template <typename G>
TileProcessor<G> conv_processor(ConvKernel kernel) {
    const int r = kernel.radius;
    return TileProcessor<G>({1, r, "conv_r" + std::to_string(r)},
                            [k = std::move(kernel)](const G& g) { return conv2d_apply(g, k); });
}

template <typename G>
TileProcessor<G> cnn_processor(CnnWeights net, std::string name = "cnn") {
    net.validate();
    ProcessorDescriptor d{net.scale, net.input_receptive_field(), std::move(name)};
    return TileProcessor<G>(std::move(d), [n = std::move(net)](const G& g) { return cnn_forward(g, n); });
}

}  // namespace tilesynth
