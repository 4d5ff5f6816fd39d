#pragma once

/**
 * projection.hpp - Learnable latent upscaling.
 *
 * The model expands a latent by nearest-neighbour replication and adds the
 * output of a small 3x3 conv stack (residual skip), so a zero-initialised
 * final layer starts out as plain nearest-neighbour upscaling. Gradients are
 * computed by hand; training minimizes mean squared error with Adam.
 *
 * The autoencoder stub stands in for a real image autoencoder: it maps each
 * 8x8 pixel block to four latent values (mean R, G, B and mean luma) and
 * decodes by replicating the mean colour back over the block.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tilesynth/error.hpp"
#include "tilesynth/grid.hpp"
#include "tilesynth/processors.hpp"
#include "tilesynth/resample.hpp"

namespace tilesynth {

template <typename T>
using ProjectionNet = CnnNet<T>;
using ProjectionModel = CnnNet<float>;

struct ProjectionArchitecture {
    int channels = 4;
    int scale = 4;
    int blocks = 3;
    int width = 16;
};

/// He-uniform hidden layers, zero final layer: the fresh model is nearest-neighbour upscaling.
inline ProjectionModel make_projection_model(const ProjectionArchitecture& arch = {}, std::uint64_t seed = 1) {
    if (arch.blocks < 1 || arch.width < 1 || arch.channels < 1 || arch.scale < 1) {
        throw ShapeError("projection architecture needs positive blocks, width, channels and scale");
    }
    ProjectionModel m;
    m.scale = arch.scale;
    m.residual = true;
    std::mt19937_64 rng(seed);
    for (int b = 0; b < arch.blocks; ++b) {
        const bool last = b + 1 == arch.blocks;
        const int in = b == 0 ? arch.channels : arch.width;
        const int out = last ? arch.channels : arch.width;
        CnnLayer<float> layer(in, out, last ? Activation::Identity : Activation::ReLU);
        if (!last) {
            const float bound = std::sqrt(6.0f / static_cast<float>(in * 9));
            std::uniform_real_distribution<float> u(-bound, bound);
            for (auto& w : layer.weights) w = u(rng);
        }
        m.layers.push_back(std::move(layer));
    }
    m.declared_receptive_field = m.layer_receptive_field();
    return m;
}

template <typename T>
Grid<T, LatentSpace> project_forward(const Grid<T, LatentSpace>& z, const ProjectionNet<T>& model) {
    return cnn_forward(z, model);
}

// ---------------------------------------------------------------------------
// Backward pass

template <typename T>
struct ProjectionGradients {
    std::vector<CnnLayer<T>> layers;  // same shapes as the model; weights/bias hold dL/dparam
    Grid<T, LatentSpace> input;       // dL/dz
};

namespace detail {

/// Accumulates parameter gradients of one 3x3 layer and returns dL/d(input).
template <typename T, typename S>
Grid<T, S> conv3x3_backward(const Grid<T, S>& in, const CnnLayer<T>& layer, const Grid<T, S>& grad_pre,
                            CnnLayer<T>& grad) {
    const int h = in.height();
    const int w = in.width();
    const int ic_n = layer.in_ch;
    const int oc_n = layer.out_ch;
    Grid<T, S> grad_in(h, w, ic_n);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const T* g = &grad_pre(y, x, 0);
            for (int o = 0; o < oc_n; ++o) {
                grad.bias[static_cast<std::size_t>(o)] += g[o];
            }
            for (int ky = 0; ky < 3; ++ky) {
                const int yy = y + ky - 1;
                if (yy < 0 || yy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int xx = x + kx - 1;
                    if (xx < 0 || xx >= w) continue;
                    const T* src = &in(yy, xx, 0);
                    T* gsrc = &grad_in(yy, xx, 0);
                    for (int o = 0; o < oc_n; ++o) {
                        const T go = g[o];
                        if (go == T{}) continue;
                        for (int i = 0; i < ic_n; ++i) {
                            const auto wi = layer.weight_index(o, i, ky, kx);
                            grad.weights[wi] += go * src[i];
                            gsrc[i] += go * layer.weights[wi];
                        }
                    }
                }
            }
        }
    }
    return grad_in;
}

}  // namespace detail

/// Exact reverse-mode gradients of project_forward for upstream gradient `grad_out`.
template <typename T>
ProjectionGradients<T> project_backward(const Grid<T, LatentSpace>& z, const ProjectionNet<T>& model,
                                        const Grid<T, LatentSpace>& grad_out) {
    const auto trace = cnn_forward_trace(z, model);
    if (!grad_out.same_shape(trace.output)) {
        throw ShapeError("project_backward: upstream gradient shape does not match forward output");
    }
    ProjectionGradients<T> grads;
    for (const auto& l : model.layers) {
        grads.layers.emplace_back(l.in_ch, l.out_ch, l.activation);
    }
    Grid<T, LatentSpace> g = grad_out;
    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const auto& layer = model.layers[li];
        if (layer.activation == Activation::ReLU) {
            const auto post = trace.activations[li + 1].data();
            auto gd = g.data();
            for (std::size_t i = 0; i < gd.size(); ++i) {
                if (!(post[i] > T{})) gd[i] = T{};
            }
        }
        g = detail::conv3x3_backward(trace.activations[li], layer, g, grads.layers[li]);
    }
    // g is now dL/d(expanded input) through the conv stack.
    if (model.residual) {
        auto gd = g.data();
        const auto go = grad_out.data();
        for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += go[i];
    }
    const int s = model.scale;
    Grid<T, LatentSpace> gin(z.height(), z.width(), z.channels());
    for (int y = 0; y < g.height(); ++y) {
        for (int x = 0; x < g.width(); ++x) {
            for (int c = 0; c < z.channels(); ++c) {
                gin(y / s, x / s, c) += g(y, x, c);
            }
        }
    }
    grads.input = std::move(gin);
    return grads;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    float learning_rate = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
    int epochs = 50;
    int batch_size = 4;
    std::uint64_t seed = 7;

    void validate() const {
        if (!(learning_rate > 0.0f)) throw InvalidRatio("learning rate must be > 0");
        if (!(beta1 > 0.0f && beta1 < 1.0f) || !(beta2 > 0.0f && beta2 < 1.0f)) {
            throw InvalidRatio("Adam betas must lie in (0, 1)");
        }
        if (epochs < 1 || batch_size < 1) throw InvalidDimension("epochs and batch size must be >= 1");
    }
};

/// (low-resolution latent, high-resolution latent)
using LatentPair = std::pair<LatentGrid, LatentGrid>;

struct EpochLog {
    int epoch = 0;
    double train_mse = 0.0;
    double val_mse = 0.0;  // NaN when no validation set was given
};

struct TrainResult {
    ProjectionModel model;
    std::vector<EpochLog> log;
};

/// Adam over a model's flattened parameters.
class AdamState {
public:
    AdamState(const ProjectionModel& model, const TrainConfig& cfg) : cfg_(cfg) {
        std::size_t n = 0;
        for (const auto& l : model.layers) n += l.parameter_count();
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
    }

    void step(ProjectionModel& model, const std::vector<CnnLayer<double>>& grads) {
        ++t_;
        const double b1 = cfg_.beta1;
        const double b2 = cfg_.beta2;
        const double corr1 = 1.0 - std::pow(b1, t_);
        const double corr2 = 1.0 - std::pow(b2, t_);
        std::size_t k = 0;
        auto update = [&](float& p, double g) {
            m_[k] = b1 * m_[k] + (1.0 - b1) * g;
            v_[k] = b2 * v_[k] + (1.0 - b2) * g * g;
            const double mhat = m_[k] / corr1;
            const double vhat = v_[k] / corr2;
            p = static_cast<float>(p - cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon));
            ++k;
        };
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            auto& l = model.layers[li];
            const auto& g = grads[li];
            for (std::size_t i = 0; i < l.weights.size(); ++i) update(l.weights[i], g.weights[i]);
            for (std::size_t i = 0; i < l.bias.size(); ++i) update(l.bias[i], g.bias[i]);
        }
    }

private:
    TrainConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    int t_ = 0;
};

inline double mse(const LatentGrid& a, const LatentGrid& b) {
    require_same_shape(a, b, "mse");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

inline double evaluate_projection(const ProjectionModel& model, std::span<const LatentPair> pairs) {
    if (pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (const auto& [lo, hi] : pairs) sum += mse(project_forward(lo, model), hi);
    return sum / static_cast<double>(pairs.size());
}

/// Mean MSE of a fixed resampling baseline (e.g. bilinear) on the same pairs.
inline double evaluate_baseline(ResampleFilter filter, std::span<const LatentPair> pairs) {
    double sum = 0.0;
    for (const auto& [lo, hi] : pairs) sum += mse(resample(lo, hi.width(), hi.height(), filter), hi);
    return sum / static_cast<double>(pairs.size());
}

inline void validate_corpus(std::span<const LatentPair> corpus, const ProjectionModel& model) {
    if (corpus.empty()) throw EmptyInput("training corpus is empty");
    for (const auto& [lo, hi] : corpus) {
        if (lo.channels() != model.in_channels() || hi.channels() != model.out_channels() ||
            hi.height() != lo.height() * model.scale || hi.width() != lo.width() * model.scale) {
            throw ShapeError("corpus pair shapes do not match the projection model");
        }
    }
}

/**
 * Mini-batch Adam on mean squared error, starting from `init`. Batches are
 * drawn from a per-epoch shuffle seeded by cfg.seed, and gradients are
 * reduced in batch order, so a fixed seed gives identical weights.
 */
inline TrainResult train_projection(std::span<const LatentPair> corpus, const TrainConfig& cfg,
                                    ProjectionModel init, std::span<const LatentPair> validation = {}) {
    cfg.validate();
    init.validate();
    validate_corpus(corpus, init);
    TrainResult res{std::move(init), {}};
    AdamState adam(res.model, cfg);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            const auto model_d = res.model.cast<double>();
            std::vector<CnnLayer<double>> acc;
            for (const auto& l : model_d.layers) acc.emplace_back(l.in_ch, l.out_ch, l.activation);
            for (std::size_t k = b; k < end; ++k) {
                const auto& [lo, hi] = corpus[order[k]];
                const auto lo_d = cast<double>(lo);
                const auto out = project_forward(lo_d, model_d);
                Grid<double, LatentSpace> grad(out.height(), out.width(), out.channels());
                const double n = static_cast<double>(out.size());
                double loss = 0.0;
                for (std::size_t i = 0; i < out.size(); ++i) {
                    const double d = out.data()[i] - hi.data()[i];
                    loss += d * d;
                    grad.data()[i] = 2.0 * d / n;
                }
                loss /= n;
                if (!std::isfinite(loss)) {
                    throw DivergenceError("projection training diverged at epoch " + std::to_string(epoch));
                }
                epoch_loss += loss;
                const auto g = project_backward(lo_d, model_d, grad);
                for (std::size_t li = 0; li < acc.size(); ++li) {
                    for (std::size_t i = 0; i < acc[li].weights.size(); ++i) acc[li].weights[i] += g.layers[li].weights[i];
                    for (std::size_t i = 0; i < acc[li].bias.size(); ++i) acc[li].bias[i] += g.layers[li].bias[i];
                }
            }
            const double inv = 1.0 / static_cast<double>(end - b);
            for (auto& l : acc) {
                for (auto& w : l.weights) w *= inv;
                for (auto& v : l.bias) v *= inv;
            }
            adam.step(res.model, acc);
        }
        const double train_mse = epoch_loss / static_cast<double>(corpus.size());
        res.log.push_back(EpochLog{epoch, train_mse, evaluate_projection(res.model, validation)});
    }
    return res;
}

inline TrainResult train_projection(std::span<const LatentPair> corpus, const TrainConfig& cfg,
                                    const ProjectionArchitecture& arch = {}, std::span<const LatentPair> validation = {}) {
    return train_projection(corpus, cfg, make_projection_model(arch, cfg.seed), validation);
}

inline void write_training_log_csv(std::ostream& os, const std::vector<EpochLog>& log) {
    os << "epoch,train_mse,val_mse\n";
    for (const auto& e : log) {
        os << e.epoch << ',' << e.train_mse << ',';
        if (std::isfinite(e.val_mse)) os << e.val_mse;
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Autoencoder stub

class AutoencoderStub {
public:
    static constexpr int kFactor = 8;
    static constexpr int kLatentChannels = 4;

    /// 8x8 block means of R, G, B plus mean luma. Gray input is replicated; alpha is ignored.
    [[nodiscard]] LatentGrid encode(const ImageBuffer& img) const {
        if (img.height() % kFactor != 0 || img.width() % kFactor != 0) {
            throw ShapeError("autoencoder input dimensions must be multiples of 8");
        }
        if (img.channels() != 1 && img.channels() != 3 && img.channels() != 4) {
            throw ChannelMismatch("autoencoder expects 1, 3 or 4 channel images");
        }
        const int lh = img.height() / kFactor;
        const int lw = img.width() / kFactor;
        LatentGrid z(lh, lw, kLatentChannels);
        for (int by = 0; by < lh; ++by) {
            for (int bx = 0; bx < lw; ++bx) {
                double rgb[3] = {0.0, 0.0, 0.0};
                for (int y = by * kFactor; y < (by + 1) * kFactor; ++y) {
                    for (int x = bx * kFactor; x < (bx + 1) * kFactor; ++x) {
                        for (int c = 0; c < 3; ++c) {
                            rgb[c] += img(y, x, img.channels() == 1 ? 0 : c);
                        }
                    }
                }
                constexpr double n = kFactor * kFactor;
                for (int c = 0; c < 3; ++c) z(by, bx, c) = static_cast<float>(rgb[c] / n);
                z(by, bx, 3) = static_cast<float>((0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]) / n);
            }
        }
        return z;
    }

    /// Mean colour replicated over each 8x8 block; always 3 channels.
    [[nodiscard]] ImageBuffer decode(const LatentGrid& z) const {
        if (z.channels() != kLatentChannels) {
            throw ChannelMismatch("autoencoder latents have 4 channels");
        }
        ImageBuffer img(z.height() * kFactor, z.width() * kFactor, 3);
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                for (int c = 0; c < 3; ++c) img(y, x, c) = z(y / kFactor, x / kFactor, c);
            }
        }
        return img;
    }
};

/// (encode(downsampled image), encode(image)) per input; the latent pair differs in size by exactly `scale`.
inline std::vector<LatentPair> build_projection_corpus(std::span<const ImageBuffer> images, const AutoencoderStub& ae,
                                                       int scale, ResampleFilter filter = ResampleFilter::Lanczos3) {
    if (scale < 1) throw InvalidDimension("projection scale must be >= 1");
    std::vector<LatentPair> out;
    out.reserve(images.size());
    const int align = AutoencoderStub::kFactor * scale;
    for (const auto& img : images) {
        if (img.height() % align != 0 || img.width() % align != 0) {
            throw ShapeError("corpus image dimensions must be multiples of " + std::to_string(align));
        }
        const auto small = resample(img, img.width() / scale, img.height() / scale, filter);
        out.emplace_back(ae.encode(small), ae.encode(img));
    }
    return out;
}

}  // namespace tilesynth
