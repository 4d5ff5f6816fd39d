#pragma once

/**
 * pipeline.hpp - Three-stage high-resolution editing.
 *
 *   1. edit     : resample so the shorter side is the edit resolution (512),
 *                 encode, run the guided sampler on the small latent
 *   2. project  : upscale the edited latent with the projection model
 *   3. upscale  : decode and run a tiled upscaler in pixel space (default),
 *                 or tile in latent space and decode afterwards
 *
 * The scales must compose: edit_resolution * projection.scale * upscaler.scale
 * equals the input's shorter side.
 */

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilesynth/diffusion.hpp"
#include "tilesynth/error.hpp"
#include "tilesynth/grid.hpp"
#include "tilesynth/processors.hpp"
#include "tilesynth/projection.hpp"
#include "tilesynth/resample.hpp"
#include "tilesynth/tiling.hpp"
#include "tilesynth/weights_io.hpp"

namespace tilesynth {

struct EditStageConfig {
    int steps = 4;
    std::optional<GuidanceWeights> guidance;  // required; there is no default
    std::string denoiser = "identity";        // "identity" or a weights file
    float strength = 1.0f;                    // sampler start time t in (0, 1]
    std::uint64_t seed = 0;
};

struct ProjectionStageConfig {
    std::string model = "nearest";  // "nearest" or a weights file
    int scale = 4;
};

struct UpscaleStageConfig {
    std::string processor = "identity";  // "identity", "nearest", "gaussian:<r>" or a weights file
    int scale = 1;                       // for built-in processors; weights files carry their own
    int tile_size = 512;
    std::optional<int> padding;
    double overlap = 0.25;
    BlendMode blend = BlendMode::LinearFeather;
    bool latent_space = false;
    int threads = 1;
};

struct PreprocessConfig {
    ResampleFilter filter = ResampleFilter::Lanczos3;
    int edit_resolution = 512;
};

struct PipelineConfig {
    EditStageConfig edit;
    ProjectionStageConfig projection;
    UpscaleStageConfig upscale;
    PreprocessConfig preprocess;
};

struct StageReport {
    std::string name;
    double wall_ms = 0.0;
    std::size_t peak_bytes = 0;
};

struct PipelineReport {
    std::vector<StageReport> stages;
    int edit_width = 0;
    int edit_height = 0;
    int latent_width = 0;
    int latent_height = 0;
    int latent_channels = 0;
    int output_width = 0;
    int output_height = 0;
    std::size_t upscale_pixels_processed = 0;
    nlohmann::json plan;
    std::string output_path;
};

struct PipelineResult {
    ImageBuffer image;
    PipelineReport report;
};

// ---------------------------------------------------------------------------
// Config parsing

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    PipelineConfig cfg;
    try {
        if (j.contains("edit")) {
            const auto& e = j.at("edit");
            cfg.edit.steps = e.value("steps", cfg.edit.steps);
            cfg.edit.denoiser = e.value("denoiser", cfg.edit.denoiser);
            cfg.edit.strength = e.value("strength", cfg.edit.strength);
            cfg.edit.seed = e.value("seed", cfg.edit.seed);
            if (e.contains("guidance")) {
                cfg.edit.guidance = GuidanceWeights{e.at("guidance").at("image").get<float>(),
                                                    e.at("guidance").at("text").get<float>()};
            }
        }
        if (j.contains("projection")) {
            const auto& p = j.at("projection");
            cfg.projection.model = p.value("model", cfg.projection.model);
            cfg.projection.scale = p.value("scale", cfg.projection.scale);
        }
        if (j.contains("upscale")) {
            const auto& u = j.at("upscale");
            cfg.upscale.processor = u.value("processor", cfg.upscale.processor);
            cfg.upscale.scale = u.value("scale", cfg.upscale.scale);
            cfg.upscale.tile_size = u.value("tile_size", cfg.upscale.tile_size);
            if (u.contains("padding")) cfg.upscale.padding = u.at("padding").get<int>();
            cfg.upscale.overlap = u.value("overlap", cfg.upscale.overlap);
            if (u.contains("blend")) cfg.upscale.blend = parse_blend(u.at("blend").get<std::string>());
            cfg.upscale.latent_space = u.value("latent_space", cfg.upscale.latent_space);
            cfg.upscale.threads = u.value("threads", cfg.upscale.threads);
        }
        if (j.contains("preprocess")) {
            const auto& p = j.at("preprocess");
            if (p.contains("filter")) cfg.preprocess.filter = parse_filter(p.at("filter").get<std::string>());
            cfg.preprocess.edit_resolution = p.value("edit_resolution", cfg.preprocess.edit_resolution);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw FormatError(std::string("invalid pipeline config: ") + ex.what());
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Processor construction

/// Builds a tile processor from a spec string: "identity", "nearest" (uses
/// `scale`), "gaussian:<radius>" or a path to a weights file.
template <typename G>
TileProcessor<G> processor_from_spec(const std::string& spec, int scale = 1) {
    if (spec == "identity") {
        if (scale != 1) throw UsageError("identity processor has scale 1");
        return identity_processor<G>();
    }
    if (spec == "nearest") return nearest_upscaler<G>(scale);
    if (spec.rfind("gaussian:", 0) == 0) {
        const int r = std::stoi(spec.substr(9));
        return conv_processor<G>(ConvKernel::gaussian(r, std::max(0.5, r / 2.0)));
    }
    auto net = load_weights(spec);
    return cnn_processor<G>(std::move(net), std::filesystem::path(spec).stem().string());
}

/// Denoiser whose clean-latent estimate is always `target`: it returns the
/// noise that explains z_t as alpha(t) * target + sigma(t) * eps.
inline Denoiser reconstruction_denoiser(LatentGrid target, Schedule sched) {
    return [target = std::move(target), sched = std::move(sched)](const LatentGrid& z, float t,
                                                                  const ConditioningView&) {
        require_same_shape(z, target, "reconstruction_denoiser");
        const double a = sched.alpha(t);
        const double s = sched.sigma(t);
        LatentGrid eps(z.height(), z.width(), z.channels());
        for (std::size_t i = 0; i < eps.size(); ++i) {
            eps.data()[i] = static_cast<float>((z.data()[i] - a * target.data()[i]) / s);
        }
        return eps;
    };
}

/// Toy CNN noise predictor over [z_t (4), c_I or zeros (4), mean(c_T) or 0 (1)] channels.
inline Denoiser cnn_denoiser(CnnWeights net) {
    net.validate();
    if (net.in_channels() != 9 || net.out_channels() != 4 || net.scale != 1) {
        throw ShapeError("denoiser network must map 9 channels to 4 at scale 1");
    }
    return [net = std::move(net)](const LatentGrid& z, float, const ConditioningView& cond) {
        LatentGrid in(z.height(), z.width(), 9);
        float text = 0.0f;
        if (cond.text != nullptr && !cond.text->empty()) {
            double sum = 0.0;
            for (float v : *cond.text) sum += v;
            text = static_cast<float>(sum / static_cast<double>(cond.text->size()));
        }
        if (cond.image != nullptr) require_same_shape(z, *cond.image, "cnn_denoiser image conditioning");
        for (int y = 0; y < z.height(); ++y) {
            for (int x = 0; x < z.width(); ++x) {
                for (int c = 0; c < 4; ++c) {
                    in(y, x, c) = z(y, x, c);
                    in(y, x, 4 + c) = cond.image != nullptr ? (*cond.image)(y, x, c) : 0.0f;
                }
                in(y, x, 8) = text;
            }
        }
        return cnn_forward(in, net);
    };
}

// ---------------------------------------------------------------------------
// Orchestration

/// Edit-resolution dimensions: shorter side -> `res`, longer side scaled and rounded to a multiple of 8.
inline std::pair<int, int> edit_dimensions(int width, int height, int res) {
    if (std::min(width, height) < res) {
        throw InvalidDimension("input shorter side must be at least " + std::to_string(res));
    }
    auto longer = [&](int l, int s) {
        const double v = static_cast<double>(l) * res / s;
        return std::max(8, static_cast<int>(std::lround(v / 8.0)) * 8);
    };
    if (width <= height) return {res, longer(height, width)};
    return {longer(width, height), res};
}

inline PipelineResult run_pipeline(const ImageBuffer& input, const PipelineConfig& cfg,
                                   const std::optional<std::vector<float>>& text_conditioning = std::nullopt) {
    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };
    if (!cfg.edit.guidance) {
        throw UsageError("pipeline config needs edit.guidance {image, text}");
    }
    const int res = cfg.preprocess.edit_resolution;
    if (res % AutoencoderStub::kFactor != 0) {
        throw ScaleCompositionError("edit resolution must be a multiple of 8");
    }

    const AutoencoderStub ae;
    const Schedule sched = schedule_cosine();

    // Stage 3's processor is resolved first so its scale can be checked up front.
    const bool latent_tiling = cfg.upscale.latent_space;
    std::optional<TileProcessor<ImageBuffer>> pixel_proc;
    std::optional<TileProcessor<LatentGrid>> latent_proc;
    int up_scale = 1;
    if (latent_tiling) {
        latent_proc.emplace(processor_from_spec<LatentGrid>(cfg.upscale.processor, cfg.upscale.scale));
        up_scale = latent_proc->scale();
    } else {
        pixel_proc.emplace(processor_from_spec<ImageBuffer>(cfg.upscale.processor, cfg.upscale.scale));
        up_scale = pixel_proc->scale();
    }
    std::optional<ProjectionModel> proj_model;
    int proj_scale = cfg.projection.scale;
    if (cfg.projection.model != "nearest") {
        proj_model = load_weights(cfg.projection.model);
        proj_scale = proj_model->scale;
        if (proj_model->in_channels() != AutoencoderStub::kLatentChannels ||
            proj_model->out_channels() != AutoencoderStub::kLatentChannels) {
            throw ShapeError("projection model must map 4-channel latents");
        }
    }
    if (proj_scale < 1) throw ScaleCompositionError("projection scale must be >= 1");
    const int shorter = std::min(input.width(), input.height());
    if (static_cast<long long>(res) * proj_scale * up_scale != shorter) {
        throw ScaleCompositionError("edit resolution " + std::to_string(res) + " x projection " +
                                    std::to_string(proj_scale) + " x upscaler " + std::to_string(up_scale) +
                                    " does not reach the input's shorter side " + std::to_string(shorter));
    }

    PipelineReport report;

    // Stage 1: preprocess + edit.
    auto t0 = clock::now();
    const auto [ew, eh] = edit_dimensions(input.width(), input.height(), res);
    const ImageBuffer edit_img = (ew == input.width() && eh == input.height())
                                     ? input
                                     : resample(input, ew, eh, cfg.preprocess.filter);
    const LatentGrid z0 = ae.encode(edit_img);
    if (std::min(z0.width(), z0.height()) != res / AutoencoderStub::kFactor) {
        throw ShapeError("edit latent does not match the edit resolution");
    }
    Conditioning cond{z0, text_conditioning};
    Denoiser denoiser = cfg.edit.denoiser == "identity" ? reconstruction_denoiser(z0, sched)
                                                        : cnn_denoiser(load_weights(cfg.edit.denoiser));
    LatentGrid noise(z0.height(), z0.width(), z0.channels());
    {
        std::mt19937_64 rng(cfg.edit.seed);
        std::normal_distribution<float> n01(0.0f, 1.0f);
        for (auto& v : noise.data()) v = n01(rng);
    }
    const auto noisy = add_noise(z0, noise, cfg.edit.strength, sched);
    const LatentGrid edited = denoise_loop(noisy.z_t, denoiser, cond, *cfg.edit.guidance, sched, cfg.edit.steps,
                                           cfg.edit.strength);
    report.edit_width = ew;
    report.edit_height = eh;
    report.latent_width = edited.width();
    report.latent_height = edited.height();
    report.latent_channels = edited.channels();
    report.stages.push_back({"edit", ms_since(t0),
                             edit_img.bytes() + z0.bytes() * 3 + noise.bytes() + edited.bytes()});

    // Stage 2: latent projection.
    t0 = clock::now();
    const LatentGrid projected = proj_model ? project_forward(edited, *proj_model) : upsample_nearest(edited, proj_scale);
    report.stages.push_back({"project", ms_since(t0), edited.bytes() + projected.bytes()});

    // Stage 3: tiled upscale.
    t0 = clock::now();
    AcptOptions aopts;
    aopts.tile_size = cfg.upscale.tile_size;
    aopts.padding_size = cfg.upscale.padding;
    aopts.overlap_ratio = cfg.upscale.overlap;
    aopts.blend = cfg.upscale.blend;
    aopts.threads = cfg.upscale.threads;
    MemoryMeter meter;
    ImageBuffer output;
    if (latent_tiling) {
        auto tiled = run_acpt(projected, *latent_proc, aopts, &meter);
        report.upscale_pixels_processed = tiled.stats.pixels_processed;
        report.plan = plan_to_json(tiled.plan);
        output = ae.decode(tiled.image);
        meter.acquire(output.bytes());
    } else {
        const ImageBuffer decoded = ae.decode(projected);
        MeterGuard guard(meter, decoded.bytes());
        auto tiled = run_acpt(decoded, *pixel_proc, aopts, &meter);
        report.upscale_pixels_processed = tiled.stats.pixels_processed;
        report.plan = plan_to_json(tiled.plan);
        output = std::move(tiled.image);
    }
    report.stages.push_back({"upscale", ms_since(t0), meter.peak()});
    report.output_width = output.width();
    report.output_height = output.height();
    return PipelineResult{std::move(output), std::move(report)};
}

inline nlohmann::json to_json(const PipelineReport& r) {
    auto stages = nlohmann::json::array();
    for (const auto& s : r.stages) {
        stages.push_back({{"name", s.name}, {"wall_ms", s.wall_ms}, {"peak_bytes", s.peak_bytes}});
    }
    nlohmann::json j{{"stages", stages},
                     {"edit_dims", {r.edit_width, r.edit_height}},
                     {"latent_dims", {r.latent_width, r.latent_height, r.latent_channels}},
                     {"output_dims", {r.output_width, r.output_height}},
                     {"upscale_pixels_processed", r.upscale_pixels_processed},
                     {"plan", r.plan}};
    if (!r.output_path.empty()) j["output_path"] = r.output_path;
    return j;
}

}  // namespace tilesynth
