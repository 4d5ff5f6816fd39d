#pragma once

/**
 * dataset.hpp - Image-pair dataset listings and filter manifests.
 *
 * A dataset directory holds image files and an `index.json`:
 *
 *   {"samples": [{"id": "s000", "source": "s000_src.png",
 *                 "target": "s000_tgt.png", "prompt_id": "p0"}, ...]}
 *
 * Paths are relative to the directory. Filter manifests are JSON lines:
 *
 *   {"sample_id": "s000", "par": 0.0123, "kept": true}
 */

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilesynth/error.hpp"
#include "tilesynth/image_io.hpp"
#include "tilesynth/losses.hpp"

namespace tilesynth {

struct DatasetEntry {
    std::string id;
    std::filesystem::path source;
    std::filesystem::path target;
    std::string prompt_id;
};

inline std::vector<DatasetEntry> read_dataset_index(const std::filesystem::path& dir) {
    const auto index = dir / "index.json";
    std::ifstream in(index);
    if (!in) {
        throw IOError(index.string() + ": cannot open dataset index");
    }
    std::vector<DatasetEntry> out;
    try {
        const auto j = nlohmann::json::parse(in);
        for (const auto& s : j.at("samples")) {
            out.push_back(DatasetEntry{s.at("id").get<std::string>(), dir / s.at("source").get<std::string>(),
                                       dir / s.at("target").get<std::string>(), s.value("prompt_id", std::string{})});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(index.string() + ": " + e.what());
    }
    return out;
}

inline void write_dataset_index(const std::filesystem::path& dir, const std::vector<DatasetEntry>& entries) {
    auto samples = nlohmann::json::array();
    for (const auto& e : entries) {
        samples.push_back({{"id", e.id},
                           {"source", std::filesystem::relative(e.source, dir).generic_string()},
                           {"target", std::filesystem::relative(e.target, dir).generic_string()},
                           {"prompt_id", e.prompt_id}});
    }
    std::ofstream out(dir / "index.json");
    if (!out) {
        throw IOError((dir / "index.json").string() + ": cannot write dataset index");
    }
    out << nlohmann::json{{"samples", samples}}.dump(2) << '\n';
}

inline TrainingSample load_sample(const DatasetEntry& e) {
    auto target = load_image(e.target);
    auto source = load_image(e.source);
    if (target.height() != source.height() || target.width() != source.width()) {
        throw ShapeError("sample '" + e.id + "': source and target sizes differ");
    }
    return TrainingSample{e.id, std::move(target), std::move(source), e.prompt_id, std::nullopt};
}

inline nlohmann::json to_json(const ManifestEntry& e) {
    nlohmann::json j{{"sample_id", e.sample_id}, {"kept", e.kept}};
    j["par"] = e.par ? nlohmann::json(*e.par) : nlohmann::json(nullptr);
    if (!e.reason.empty()) j["reason"] = e.reason;
    return j;
}

inline void write_manifest(std::ostream& os, const std::vector<ManifestEntry>& manifest) {
    for (const auto& e : manifest) os << to_json(e).dump() << '\n';
}

}  // namespace tilesynth
