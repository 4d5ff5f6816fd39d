#pragma once

/**
 * cli.hpp - Command-line front end.
 *
 *   upscale           tiled processing of one image
 *   sweep             tile-size / overlap profiling sweep (CSV on stdout)
 *   pipeline          three-stage edit -> project -> upscale
 *   eval              PSNR / SSIM / L1 / L2 / seam energy between two images
 *   filter            PAR-based dataset filtering (JSON-lines manifest)
 *   train-projection  train the latent projection model
 *
 * Exit codes: 0 success, 1 runtime error, 2 usage error.
 */

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "tilesynth/dataset.hpp"
#include "tilesynth/image_io.hpp"
#include "tilesynth/losses.hpp"
#include "tilesynth/metrics.hpp"
#include "tilesynth/pipeline.hpp"
#include "tilesynth/profiler.hpp"
#include "tilesynth/projection.hpp"
#include "tilesynth/synthetic.hpp"
#include "tilesynth/tiling.hpp"
#include "tilesynth/weights_io.hpp"

namespace tilesynth {

namespace detail {

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IOError(path + ": cannot open");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            if constexpr (std::is_integral_v<T>) {
                out.push_back(static_cast<T>(std::stoll(item)));
            } else {
                out.push_back(static_cast<T>(std::stod(item)));
            }
        } catch (const std::exception&) {
            throw UsageError("cannot parse list item '" + item + "'");
        }
    }
    if (out.empty()) throw UsageError("empty list '" + text + "'");
    return out;
}

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

/// Runs the CLI. `out` receives machine-readable output, `err` diagnostics.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"tilesynth - memory-bounded tiled image processing"};
    app.require_subcommand(1);
    app.fallthrough();
    bool json = false;
    app.add_flag("--json", json, "Print a JSON report on stdout");

    // upscale
    auto* up = app.add_subcommand("upscale", "Tiled processing of one image");
    std::string up_in, up_out, up_proc = "identity", up_blend = "feather", up_plan_out;
    int up_tile = 512, up_scale = 1, up_threads = 1;
    std::optional<int> up_pad;
    double up_overlap = 0.25;
    up->add_option("--in", up_in, "Input image (PNG or P6 PPM)")->required();
    up->add_option("--out", up_out, "Output PNG")->required();
    up->add_option("--tile", up_tile, "Tile size in pixels");
    up->add_option("--pad", up_pad, "Padding band in pixels (default: ~6% of the tile)");
    up->add_option("--overlap", up_overlap, "Overlap ratio for sizes the tile does not divide");
    up->add_option("--processor", up_proc, "identity | nearest | gaussian:<r> | weights file");
    up->add_option("--scale", up_scale, "Scale for built-in processors");
    up->add_option("--blend", up_blend, "feather | average");
    up->add_option("--threads", up_threads, "Tile worker threads");
    up->add_option("--plan-out", up_plan_out, "Write the tiling plan as JSON");

    // sweep
    auto* sw = app.add_subcommand("sweep", "Tile-size / overlap profiling sweep");
    std::string sw_in, sw_tiles = "128,256,512", sw_overlaps = "0,0.25,0.5", sw_proc = "identity";
    int sw_size = 1024, sw_repeats = 3, sw_pad = 0, sw_threads = 1;
    sw->add_option("--in", sw_in, "Input image (default: synthetic texture)");
    sw->add_option("--size", sw_size, "Synthetic image size when --in is absent");
    sw->add_option("--tiles", sw_tiles, "Comma-separated tile sizes");
    sw->add_option("--overlaps", sw_overlaps, "Comma-separated overlap ratios");
    sw->add_option("--repeats", sw_repeats, "Timing repeats (median reported)");
    sw->add_option("--pad", sw_pad, "Padding band for 0% overlap on aligned sizes");
    sw->add_option("--processor", sw_proc, "identity | nearest | gaussian:<r> | weights file");
    sw->add_option("--threads", sw_threads, "Tile worker threads");

    // pipeline
    auto* pl = app.add_subcommand("pipeline", "Three-stage edit, project, upscale");
    std::string pl_in, pl_out, pl_config, pl_cond;
    std::optional<int> pl_steps;
    std::optional<std::uint64_t> pl_seed;
    pl->add_option("--in", pl_in, "Input image")->required();
    pl->add_option("--out", pl_out, "Output PNG")->required();
    pl->add_option("--config", pl_config, "Pipeline JSON config")->required();
    pl->add_option("--cond", pl_cond, "Text conditioning vector (JSON array)");
    pl->add_option("--steps", pl_steps, "Override edit.steps");
    pl->add_option("--seed", pl_seed, "Override edit.seed");

    // eval
    auto* ev = app.add_subcommand("eval", "Compare two images");
    std::string ev_a, ev_b, ev_plan, ev_id = "image", ev_strategy = "-";
    ev->add_option("--a", ev_a, "Reference image")->required();
    ev->add_option("--b", ev_b, "Test image")->required();
    ev->add_option("--plan", ev_plan, "Tiling plan JSON for seam energy");
    ev->add_option("--id", ev_id, "Image id for the CSV row");
    ev->add_option("--strategy", ev_strategy, "Strategy label for the CSV row");

    // filter
    auto* fl = app.add_subcommand("filter", "Filter a dataset by partial-artifact ratio");
    std::string fl_dataset, fl_manifest;
    std::optional<float> fl_drop, fl_threshold;
    float fl_binarize = 0.5f, fl_residual = 0.25f;
    fl->add_option("--dataset", fl_dataset, "Dataset directory with index.json")->required();
    auto* drop_opt = fl->add_option("--drop", fl_drop, "Target fraction to drop (calibrates the threshold)");
    fl->add_option("--threshold", fl_threshold, "Fixed PAR threshold")->excludes(drop_opt);
    fl->add_option("--manifest", fl_manifest, "Write the JSON-lines manifest here (default: stdout)");
    fl->add_option("--binarize", fl_binarize, "Mask binarization threshold");
    fl->add_option("--residual", fl_residual, "Detector residual threshold");

    // train-projection
    auto* tp = app.add_subcommand("train-projection", "Train the latent projection model");
    std::string tp_images, tp_out, tp_log;
    int tp_synthetic = 0, tp_size = 256, tp_scale = 4, tp_blocks = 3, tp_width = 16;
    double tp_val_fraction = 0.2;
    TrainConfig tcfg;
    tp->add_option("--images", tp_images, "Directory of training images");
    tp->add_option("--synthetic", tp_synthetic, "Number of synthetic textured images to use instead");
    tp->add_option("--size", tp_size, "Synthetic image size");
    tp->add_option("--scale", tp_scale, "Projection scale");
    tp->add_option("--blocks", tp_blocks, "Conv blocks");
    tp->add_option("--width", tp_width, "Hidden width");
    tp->add_option("--epochs", tcfg.epochs, "Epochs");
    tp->add_option("--lr", tcfg.learning_rate, "Learning rate");
    tp->add_option("--batch", tcfg.batch_size, "Batch size");
    tp->add_option("--seed", tcfg.seed, "Seed");
    tp->add_option("--val-fraction", tp_val_fraction, "Held-out fraction");
    tp->add_option("--out", tp_out, "Weights file to write")->required();
    tp->add_option("--log", tp_log, "Training log CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (up->parsed()) {
            const auto img = load_image(up_in);
            const auto proc = processor_from_spec<ImageBuffer>(up_proc, up_scale);
            AcptOptions opts;
            opts.tile_size = up_tile;
            opts.padding_size = up_pad;
            opts.overlap_ratio = up_overlap;
            opts.blend = parse_blend(up_blend);
            opts.threads = up_threads;
            const auto res = run_acpt(img, proc, opts);
            save_image(res.image, up_out);
            if (!up_plan_out.empty()) {
                std::ofstream pf(up_plan_out);
                pf << plan_to_json(res.plan).dump(2) << '\n';
            }
            if (json) {
                out << nlohmann::json{{"output", up_out},
                                      {"plan", plan_to_json(res.plan)},
                                      {"tiles_count", res.stats.tiles_count},
                                      {"pixels_processed", res.stats.pixels_processed},
                                      {"peak_bytes", res.stats.peak_bytes}}
                           .dump()
                    << '\n';
            }
            return 0;
        }
        if (sw->parsed()) {
            const auto img = sw_in.empty() ? textured_image(sw_size, sw_size, 3, 1) : load_image(sw_in);
            const auto proc = processor_from_spec<ImageBuffer>(sw_proc, 1);
            SweepOptions opts;
            opts.tile_sizes = detail::parse_list<int>(sw_tiles);
            opts.overlaps = detail::parse_list<double>(sw_overlaps);
            opts.repeats = sw_repeats;
            opts.padding = sw_pad;
            opts.threads = sw_threads;
            const auto records = sweep(img, proc, opts);
            if (json) {
                auto arr = nlohmann::json::array();
                for (const auto& r : records) arr.push_back(to_json(r));
                out << arr.dump() << '\n';
            } else {
                write_sweep_csv(out, records);
            }
            return 0;
        }
        if (pl->parsed()) {
            auto cfg = pipeline_config_from_json(detail::read_json_file(pl_config));
            if (pl_steps) cfg.edit.steps = *pl_steps;
            if (pl_seed) cfg.edit.seed = *pl_seed;
            std::optional<std::vector<float>> cond;
            if (!pl_cond.empty()) cond = detail::read_json_file(pl_cond).get<std::vector<float>>();
            const auto img = load_image(pl_in);
            auto res = run_pipeline(img, cfg, cond);
            save_image(res.image, pl_out);
            res.report.output_path = pl_out;
            if (json) out << to_json(res.report).dump() << '\n';
            return 0;
        }
        if (ev->parsed()) {
            const auto a = load_image(ev_a);
            const auto b = load_image(ev_b);
            const double p = psnr(a, b);
            const double s = ssim(a, b);
            double seam = 0.0;
            if (!ev_plan.empty()) seam = seam_energy(b, plan_from_json(detail::read_json_file(ev_plan)));
            if (json) {
                out << nlohmann::json{{"image_id", ev_id},
                                      {"strategy", ev_strategy},
                                      {"psnr", std::isinf(p) ? nlohmann::json("inf") : nlohmann::json(p)},
                                      {"ssim", s},
                                      {"l1", l1(a, b)},
                                      {"l2", l2(a, b)},
                                      {"seam_energy", seam}}
                           .dump()
                    << '\n';
            } else {
                write_metric_header(out);
                write_metric_row(out, ev_id, ev_strategy, p, s, seam);
            }
            return 0;
        }
        if (fl->parsed()) {
            if (!fl_drop && !fl_threshold) throw UsageError("filter needs --drop or --threshold");
            const auto entries = read_dataset_index(fl_dataset);
            std::vector<TrainingSample> samples;
            samples.reserve(entries.size());
            std::vector<std::string> load_errors(entries.size());
            for (std::size_t i = 0; i < entries.size(); ++i) {
                try {
                    samples.push_back(load_sample(entries[i]));
                } catch (const Error& e) {
                    load_errors[i] = e.what();
                    samples.push_back(TrainingSample{entries[i].id, {}, {}, entries[i].prompt_id, std::nullopt});
                }
            }
            std::vector<std::optional<float>> pars(samples.size());
            const MaskDetector detector = [&](const TrainingSample& s) {
                if (s.target.empty()) throw DetectorError("image could not be loaded");
                return detect_high_frequency_residual(s.target, fl_residual);
            };
            for (std::size_t i = 0; i < samples.size(); ++i) {
                if (samples[i].target.empty()) continue;
                samples[i].par = par(detector(samples[i]), fl_binarize);
            }
            float threshold = 1.0f;
            if (fl_threshold) {
                threshold = *fl_threshold;
            } else {
                std::vector<float> known;
                for (const auto& s : samples) if (s.par) known.push_back(*s.par);
                threshold = calibrate_threshold(known, *fl_drop);
            }
            auto res = filter_dataset(samples, detector, threshold, fl_binarize);
            for (std::size_t i = 0; i < res.manifest.size(); ++i) {
                if (!load_errors[i].empty()) res.manifest[i].reason = "detector error: " + load_errors[i];
            }
            if (fl_manifest.empty()) {
                write_manifest(out, res.manifest);
            } else {
                std::ofstream mf(fl_manifest);
                if (!mf) throw IOError(fl_manifest + ": cannot write manifest");
                write_manifest(mf, res.manifest);
            }
            err << "threshold " << threshold << ": kept " << res.kept.size() << ", dropped " << res.dropped.size()
                << " of " << samples.size() << '\n';
            if (json && !fl_manifest.empty()) {
                out << nlohmann::json{{"threshold", threshold},
                                      {"kept", res.kept.size()},
                                      {"dropped", res.dropped.size()},
                                      {"manifest", fl_manifest}}
                           .dump()
                    << '\n';
            }
            return 0;
        }
        if (tp->parsed()) {
            std::vector<ImageBuffer> images;
            if (!tp_images.empty()) {
                for (const auto& p : detail::list_images(tp_images)) images.push_back(load_image(p));
            } else if (tp_synthetic > 0) {
                for (int i = 0; i < tp_synthetic; ++i) {
                    images.push_back(textured_image(tp_size, tp_size, 3, 1000 + static_cast<std::uint64_t>(i)));
                }
            } else {
                throw UsageError("train-projection needs --images or --synthetic");
            }
            const auto corpus = build_projection_corpus(images, AutoencoderStub{}, tp_scale);
            const auto n_val = static_cast<std::size_t>(std::floor(tp_val_fraction * static_cast<double>(corpus.size())));
            const std::span<const LatentPair> all(corpus);
            const auto train = all.first(corpus.size() - n_val);
            const auto val = all.last(n_val);
            ProjectionArchitecture arch{AutoencoderStub::kLatentChannels, tp_scale, tp_blocks, tp_width};
            const auto res = train_projection(train, tcfg, arch, val);
            save_weights(res.model, tp_out);
            if (!tp_log.empty()) {
                std::ofstream lf(tp_log);
                write_training_log_csv(lf, res.log);
            }
            if (json) {
                nlohmann::json j{{"weights", tp_out},
                                 {"parameters", res.model.parameter_count()},
                                 {"final_train_mse", res.log.back().train_mse}};
                if (!val.empty()) {
                    j["val_mse"] = res.log.back().val_mse;
                    j["bilinear_val_mse"] = evaluate_baseline(ResampleFilter::Bilinear, val);
                    j["bicubic_val_mse"] = evaluate_baseline(ResampleFilter::Bicubic, val);
                }
                out << j.dump() << '\n';
            } else {
                write_training_log_csv(out, res.log);
            }
            return 0;
        }
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace tilesynth
