#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"
#include "tilesynth/dataset.hpp"
#include "tilesynth/pipeline.hpp"
#include "tilesynth/synthetic.hpp"

using namespace tilesynth;

namespace {

PipelineConfig identity_config() {
    PipelineConfig cfg;
    cfg.edit.guidance = GuidanceWeights{1.5f, 7.5f};
    cfg.projection.scale = 1;
    cfg.upscale.tile_size = 128;
    return cfg;
}

}  // namespace

TEST(EditDimensions, Examples) {
    EXPECT_EQ(edit_dimensions(512, 512, 512), (std::pair{512, 512}));
    EXPECT_EQ(edit_dimensions(2048, 2048, 512), (std::pair{512, 512}));
    EXPECT_EQ(edit_dimensions(1024, 768, 512), (std::pair{680, 512}));
    EXPECT_EQ(edit_dimensions(768, 2048, 512), (std::pair{512, 1368}));
    EXPECT_THROW(edit_dimensions(511, 1024, 512), InvalidDimension);
}

TEST(PipelineConfig, FromJson) {
    const auto cfg = pipeline_config_from_json(nlohmann::json::parse(R"({
        "edit": {"steps": 8, "guidance": {"image": 1.5, "text": 7.5}, "seed": 3},
        "projection": {"scale": 2},
        "upscale": {"processor": "nearest", "scale": 2, "tile_size": 256, "padding": 16,
                    "overlap": 0.5, "blend": "average", "latent_space": true},
        "preprocess": {"filter": "bicubic", "edit_resolution": 256}})"));
    EXPECT_EQ(cfg.edit.steps, 8);
    ASSERT_TRUE(cfg.edit.guidance);
    EXPECT_EQ(cfg.edit.guidance->text, 7.5f);
    EXPECT_EQ(cfg.edit.seed, 3u);
    EXPECT_EQ(cfg.projection.scale, 2);
    EXPECT_EQ(cfg.upscale.processor, "nearest");
    EXPECT_EQ(cfg.upscale.padding, 16);
    EXPECT_EQ(cfg.upscale.blend, BlendMode::Average);
    EXPECT_TRUE(cfg.upscale.latent_space);
    EXPECT_EQ(cfg.preprocess.filter, ResampleFilter::Bicubic);
    EXPECT_EQ(cfg.preprocess.edit_resolution, 256);
    EXPECT_FALSE(pipeline_config_from_json(nlohmann::json::object()).edit.guidance);
    EXPECT_THROW(pipeline_config_from_json(nlohmann::json::parse(R"({"edit": {"steps": "many"}})")), FormatError);
    EXPECT_THROW(pipeline_config_from_json(nlohmann::json::parse(R"({"edit": {"guidance": {"image": 1}}})")),
                 FormatError);
}

TEST(ProcessorFromSpec, BuiltinsAndWeights) {
    EXPECT_EQ(processor_from_spec<ImageBuffer>("identity").scale(), 1);
    EXPECT_EQ(processor_from_spec<ImageBuffer>("nearest", 2).scale(), 2);
    EXPECT_EQ(processor_from_spec<ImageBuffer>("gaussian:3").receptive_field(), 3);
    EXPECT_THROW(processor_from_spec<ImageBuffer>("identity", 2), UsageError);
    EXPECT_THROW(processor_from_spec<ImageBuffer>("/nonexistent/net.bin"), IOError);
    const auto dir = tstest::temp_dir("spec");
    CnnWeights net;
    net.layers.emplace_back(3, 3, Activation::Identity);
    net.declared_receptive_field = 1;
    save_weights(net, dir / "tiny.bin");
    const auto p = processor_from_spec<ImageBuffer>((dir / "tiny.bin").string());
    EXPECT_EQ(p.receptive_field(), 1);
    EXPECT_EQ(p.descriptor().name, "tiny");
}

TEST(ReconstructionDenoiser, SamplerRecoversTarget) {
    const auto target = tstest::random_grid<LatentGrid>(6, 5, 4, 1, -1, 1);
    const auto sched = schedule_cosine();
    const auto noise = tstest::random_grid<LatentGrid>(6, 5, 4, 2, -1, 1);
    const auto start = add_noise(target, noise, 1.0f, sched).z_t;
    const auto out = denoise_loop(start, reconstruction_denoiser(target, sched), {}, {2.0f, 3.0f}, sched, 10);
    EXPECT_LE(tstest::max_abs_diff(out, target), 1e-5);
}

TEST(CnnDenoiser, ShapeContract) {
    CnnWeights wrong;
    wrong.layers.emplace_back(4, 4, Activation::Identity);
    wrong.declared_receptive_field = 1;
    EXPECT_THROW(cnn_denoiser(wrong), ShapeError);
    CnnWeights net;
    net.layers.emplace_back(9, 4, Activation::Identity);
    net.declared_receptive_field = 1;
    const auto d = cnn_denoiser(net);
    const LatentGrid z(3, 3, 4, 1.0f);
    std::vector<float> text{1.0f, 2.0f};
    EXPECT_EQ(d(z, 0.5f, {&z, &text}), LatentGrid(3, 3, 4, 0.0f));
    const LatentGrid wrong_cond(2, 3, 4);
    EXPECT_THROW(d(z, 0.5f, {&wrong_cond, nullptr}), ShapeError);
}

TEST(RunPipeline, IdentityCompositionRoundTrips) {
    const auto img = textured_image(512, 512, 3, 3);
    const auto res = run_pipeline(img, identity_config());
    const AutoencoderStub ae;
    const auto want = ae.decode(ae.encode(img));
    ASSERT_TRUE(res.image.same_shape(want));
    EXPECT_LE(tstest::max_abs_diff(res.image, want), 1e-5);
    ASSERT_EQ(res.report.stages.size(), 3u);
    EXPECT_EQ(res.report.stages[0].name, "edit");
    EXPECT_EQ(res.report.stages[1].name, "project");
    EXPECT_EQ(res.report.stages[2].name, "upscale");
    for (const auto& s : res.report.stages) EXPECT_GE(s.wall_ms, 0.0);
    EXPECT_EQ(res.report.latent_width, 64);
    EXPECT_EQ(res.report.latent_height, 64);
    EXPECT_EQ(res.report.latent_channels, 4);
}

TEST(RunPipeline, ScalesCompose) {
    // 128 * 4 * 2 = 1024, the scaled-down analogue of 512 * 4 * 2 = 4096.
    auto cfg = identity_config();
    cfg.preprocess.edit_resolution = 128;
    cfg.projection.scale = 4;
    cfg.upscale.processor = "nearest";
    cfg.upscale.scale = 2;
    const auto img = textured_image(1024, 1024, 3, 4);
    const auto res = run_pipeline(img, cfg);
    EXPECT_EQ(res.image.width(), 1024);
    EXPECT_EQ(res.image.height(), 1024);
    EXPECT_EQ(res.report.stages.size(), 3u);
    EXPECT_EQ(res.report.latent_width, 16);
    // Stage 3 runs on 512^2 with tile 128 and the default 8 px band.
    EXPECT_LE(static_cast<double>(res.report.upscale_pixels_processed), 1.3 * 1024 * 1024);
    EXPECT_EQ(res.report.plan.at("strategy"), "adjacent_padding");
}

TEST(RunPipeline, LatentSpaceTiling) {
    auto cfg = identity_config();
    cfg.upscale.latent_space = true;
    cfg.upscale.tile_size = 16;
    const auto img = textured_image(512, 512, 3, 5);
    const auto pixel = run_pipeline(img, identity_config());
    const auto latent = run_pipeline(img, cfg);
    EXPECT_EQ(latent.image, pixel.image);
    EXPECT_EQ(latent.report.plan.at("tile_size"), 16);
}

TEST(RunPipeline, AspectRatioInput) {
    auto cfg = identity_config();
    cfg.upscale.tile_size = 64;
    const auto res = run_pipeline(textured_image(512, 768, 3, 6), cfg);
    EXPECT_EQ(res.image.height(), 512);
    EXPECT_EQ(res.image.width(), 768);
    EXPECT_EQ(res.report.latent_width, 96);
}

TEST(RunPipeline, DeterministicGivenSeed) {
    auto cfg = identity_config();
    cfg.edit.strength = 0.6f;
    cfg.edit.steps = 3;
    cfg.edit.seed = 9;
    const auto img = textured_image(512, 512, 3, 7);
    const std::vector<float> text{0.1f, 0.2f};
    const auto a = run_pipeline(img, cfg, text);
    const auto b = run_pipeline(img, cfg, text);
    EXPECT_EQ(a.image, b.image);
}

TEST(RunPipeline, Errors) {
    const auto img = textured_image(512, 512, 3, 8);
    auto cfg = identity_config();
    cfg.edit.guidance.reset();
    EXPECT_THROW(run_pipeline(img, cfg), UsageError);
    cfg = identity_config();
    cfg.projection.scale = 2;
    EXPECT_THROW(run_pipeline(img, cfg), ScaleCompositionError);
    cfg = identity_config();
    cfg.preprocess.edit_resolution = 500;
    EXPECT_THROW(run_pipeline(img, cfg), ScaleCompositionError);
    EXPECT_THROW(run_pipeline(textured_image(256, 256, 3, 9), identity_config()), ScaleCompositionError);
    cfg = identity_config();
    cfg.edit.steps = 0;
    EXPECT_THROW(run_pipeline(img, cfg), InvalidDimension);
    EXPECT_THROW(run_pipeline(textured_image(256, 512, 3, 9), identity_config()), ScaleCompositionError);
}

TEST(RunPipeline, ReportJson) {
    const auto res = run_pipeline(textured_image(512, 512, 3, 10), identity_config());
    auto report = res.report;
    report.output_path = "out.png";
    const auto j = to_json(report);
    EXPECT_EQ(j.at("stages").size(), 3u);
    EXPECT_EQ(j.at("latent_dims"), (nlohmann::json{64, 64, 4}));
    EXPECT_EQ(j.at("output_dims"), (nlohmann::json{512, 512}));
    EXPECT_EQ(j.at("output_path"), "out.png");
}

TEST(Dataset, IndexRoundTripAndLoad) {
    const auto dir = tstest::temp_dir("dataset");
    std::vector<DatasetEntry> entries;
    for (int i = 0; i < 3; ++i) {
        const std::string id = "s" + std::to_string(i);
        save_image(textured_image(16, 16, 3, 20 + static_cast<std::uint64_t>(i)), dir / (id + "_src.png"));
        save_image(textured_image(16, 16, 3, 30 + static_cast<std::uint64_t>(i)), dir / (id + "_tgt.png"));
        entries.push_back({id, dir / (id + "_src.png"), dir / (id + "_tgt.png"), "p" + std::to_string(i % 2)});
    }
    write_dataset_index(dir, entries);
    const auto back = read_dataset_index(dir);
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(back[2].id, "s2");
    EXPECT_EQ(back[1].prompt_id, "p1");
    EXPECT_EQ(back[0].source, dir / "s0_src.png");
    const auto s = load_sample(back[0]);
    EXPECT_EQ(s.id, "s0");
    EXPECT_EQ(s.target.width(), 16);
}

TEST(Dataset, Errors) {
    const auto dir = tstest::temp_dir("dataset_err");
    EXPECT_THROW(read_dataset_index(dir), IOError);
    std::ofstream(dir / "index.json") << R"({"samples": [{"id": 3}]})";
    EXPECT_THROW(read_dataset_index(dir), FormatError);
    save_image(ImageBuffer(8, 8, 3), dir / "a.png");
    save_image(ImageBuffer(8, 16, 3), dir / "b.png");
    EXPECT_THROW(load_sample({"x", dir / "a.png", dir / "b.png", ""}), ShapeError);
    EXPECT_THROW(load_sample({"x", dir / "a.png", dir / "missing.png", ""}), IOError);
}

TEST(Dataset, ManifestLines) {
    std::ostringstream os;
    write_manifest(os, {{"s0", 0.0125f, true, ""}, {"s1", std::nullopt, false, "detector failed"}});
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    const auto a = nlohmann::json::parse(line);
    EXPECT_EQ(a.at("sample_id"), "s0");
    EXPECT_TRUE(a.at("kept").get<bool>());
    EXPECT_NEAR(a.at("par").get<double>(), 0.0125, 1e-7);
    std::getline(in, line);
    const auto b = nlohmann::json::parse(line);
    EXPECT_TRUE(b.at("par").is_null());
    EXPECT_EQ(b.at("reason"), "detector failed");
}
