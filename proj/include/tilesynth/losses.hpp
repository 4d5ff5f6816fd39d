#pragma once

/**
 * losses.hpp - Hallucination-aware training loss, partial-artifact ratio and
 * threshold-based dataset filtering.
 *
 *   L = L_LDM + lambda * L_Hallu
 *   L_LDM   = mean (eps - eps_pred)^2
 *   L_Hallu = mean M(D(latent))^2        (M: per-pixel artifact mask in [0,1])
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tilesynth/error.hpp"
#include "tilesynth/grid.hpp"

namespace tilesynth {

struct MaskSpace {};

/// Per-pixel artifact likelihood, 1 = artifact. Single channel.
using HallucinationMask = Grid<float, MaskSpace>;

inline void validate_mask(const HallucinationMask& m) {
    if (m.channels() != 1) {
        throw ChannelMismatch("hallucination mask must have one channel");
    }
    for (float v : m.data()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw InvalidRatio("hallucination mask values must lie in [0, 1]");
        }
    }
}

struct LossTerms {
    float l_ldm = 0.0f;
    float l_hallu = 0.0f;
    float lambda = 0.0f;
    float total = 0.0f;
};

struct TrainingSample {
    std::string id;
    ImageBuffer target;  // edited image x
    ImageBuffer source;  // conditioning image before encoding
    std::string prompt_id;
    std::optional<float> par;
};

inline float ldm_loss(const LatentGrid& eps_true, const LatentGrid& eps_pred) {
    require_same_shape(eps_true, eps_pred, "ldm_loss");
    const auto a = eps_true.data();
    const auto b = eps_pred.data();
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        sum += d * d;
    }
    return static_cast<float>(sum / static_cast<double>(a.size()));
}

/// Squared norm of the mask normalized by pixel count.
inline float hallucination_loss(const HallucinationMask& mask) {
    double sum = 0.0;
    for (float v : mask.data()) {
        sum += static_cast<double>(v) * v;
    }
    return static_cast<float>(sum / static_cast<double>(mask.size()));
}

inline LossTerms total_loss(float l_ldm, float l_hallu, float lambda) {
    if (!(l_ldm >= 0.0f) || !(l_hallu >= 0.0f) || !(lambda >= 0.0f)) {
        throw InvalidRatio("loss terms and lambda must be non-negative");
    }
    return LossTerms{l_ldm, l_hallu, lambda, l_ldm + lambda * l_hallu};
}

/// Fraction of pixels whose mask value exceeds `binarize_threshold`.
inline float par(const HallucinationMask& mask, float binarize_threshold) {
    if (!(binarize_threshold >= 0.0f && binarize_threshold <= 1.0f)) {
        throw InvalidRatio("PAR threshold must be in [0, 1]");
    }
    const auto n = static_cast<std::size_t>(
        std::count_if(mask.data().begin(), mask.data().end(), [&](float v) { return v > binarize_threshold; }));
    return static_cast<float>(static_cast<double>(n) / static_cast<double>(mask.size()));
}

/// Full training objective for one sample: the denoising error plus the
/// penalty on artifacts detected in the decoded clean-latent estimate.
inline LossTerms hallucination_aware_loss(const LatentGrid& eps_true, const LatentGrid& eps_pred,
                                          const LatentGrid& clean_estimate,
                                          const std::function<ImageBuffer(const LatentGrid&)>& decode,
                                          const std::function<HallucinationMask(const ImageBuffer&)>& detect,
                                          float lambda) {
    const auto mask = detect(decode(clean_estimate));
    validate_mask(mask);
    return total_loss(ldm_loss(eps_true, eps_pred), hallucination_loss(mask), lambda);
}

// ---------------------------------------------------------------------------
// Built-in stand-in detector

/// 3x3 median with clamp-to-edge sampling, per channel.
inline ImageBuffer median3x3(const ImageBuffer& img) {
    ImageBuffer out(img.height(), img.width(), img.channels());
    std::array<float, 9> win{};
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < img.channels(); ++c) {
                int k = 0;
                for (int dy = -1; dy <= 1; ++dy) {
                    const int yy = std::clamp(y + dy, 0, img.height() - 1);
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int xx = std::clamp(x + dx, 0, img.width() - 1);
                        win[static_cast<std::size_t>(k++)] = img(yy, xx, c);
                    }
                }
                std::nth_element(win.begin(), win.begin() + 4, win.end());
                out(y, x, c) = win[4];
            }
        }
    }
    return out;
}

/**
 * Synthetic artifact detector: flags pixels whose largest per-channel
 * deviation from the local 3x3 median exceeds `residual_threshold`. Isolated
 * impulses are flagged; smooth texture is not. This is a desk-scale stand-in
 * for a learned artifact detector.
 */
inline HallucinationMask detect_high_frequency_residual(const ImageBuffer& img, float residual_threshold = 0.25f) {
    const auto med = median3x3(img);
    HallucinationMask mask(img.height(), img.width(), 1);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            float r = 0.0f;
            for (int c = 0; c < img.channels(); ++c) {
                r = std::max(r, std::abs(img(y, x, c) - med(y, x, c)));
            }
            mask(y, x) = r > residual_threshold ? 1.0f : 0.0f;
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Dataset filtering

using MaskDetector = std::function<HallucinationMask(const TrainingSample&)>;

struct ManifestEntry {
    std::string sample_id;
    std::optional<float> par;  // empty when the detector failed
    bool kept = false;
    std::string reason;
};

struct FilterResult {
    std::vector<std::size_t> kept;     // indices into the input, in order
    std::vector<std::size_t> dropped;  // indices into the input, in order
    std::vector<ManifestEntry> manifest;
};

/// Keeps samples with PAR <= threshold. A detector failure drops the sample
/// with the error recorded as the reason.
inline FilterResult filter_dataset(std::span<const TrainingSample> samples, const MaskDetector& detector,
                                   float threshold, float binarize_threshold = 0.5f) {
    FilterResult res;
    res.manifest.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        ManifestEntry e{s.id, std::nullopt, false, {}};
        try {
            float value = 0.0f;
            if (s.par) {
                value = *s.par;
            } else {
                const auto mask = detector(s);
                validate_mask(mask);
                value = par(mask, binarize_threshold);
            }
            e.par = value;
            e.kept = value <= threshold;
            if (!e.kept) e.reason = "par above threshold";
        } catch (const std::exception& ex) {
            e.reason = std::string("detector error: ") + ex.what();
        }
        (e.kept ? res.kept : res.dropped).push_back(i);
        res.manifest.push_back(std::move(e));
    }
    return res;
}

/// (1 - target_drop_fraction)-quantile of `pars`, linearly interpolated between order statistics.
inline float calibrate_threshold(std::span<const float> pars, float target_drop_fraction) {
    if (pars.empty()) {
        throw EmptyInput("calibrate_threshold: no PAR values");
    }
    if (!(target_drop_fraction > 0.0f && target_drop_fraction < 1.0f)) {
        throw InvalidRatio("target drop fraction must be in (0, 1)");
    }
    std::vector<double> v(pars.begin(), pars.end());
    std::sort(v.begin(), v.end());
    const double pos = (1.0 - static_cast<double>(target_drop_fraction)) * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return static_cast<float>(v[lo] + frac * (v[hi] - v[lo]));
}

}  // namespace tilesynth
