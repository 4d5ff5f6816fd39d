#pragma once

/**
 * weights_io.hpp - CNN weight files.
 *
 * Layout (all integers and floats little-endian):
 *
 *   u32    header_length
 *   u8[]   UTF-8 JSON header of header_length bytes
 *   f32[]  per layer, in declaration order: weights [out][in][3][3], then bias [out]
 *
 * Header fields: format, version, scale, residual, receptive_field,
 * layers[{in_ch, out_ch, kernel, activation}], checksum (FNV-1a 64 over the
 * float payload bytes, lowercase hex).
 */

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilesynth/error.hpp"
#include "tilesynth/processors.hpp"

namespace tilesynth {

inline constexpr const char* kWeightsFormat = "tilesynth-cnn";

[[nodiscard]] inline std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace detail {

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline float get_f32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(v);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_weights(const CnnWeights& net) {
    net.validate();
    std::vector<std::uint8_t> payload;
    for (const auto& l : net.layers) {
        for (float w : l.weights) detail::put_f32(payload, w);
        for (float b : l.bias) detail::put_f32(payload, b);
    }
    nlohmann::json header;
    header["format"] = kWeightsFormat;
    header["version"] = 1;
    header["scale"] = net.scale;
    header["residual"] = net.residual;
    header["receptive_field"] = net.declared_receptive_field;
    auto layers = nlohmann::json::array();
    for (const auto& l : net.layers) {
        layers.push_back({{"in_ch", l.in_ch},
                          {"out_ch", l.out_ch},
                          {"kernel", 3},
                          {"activation", to_string(l.activation)}});
    }
    header["layers"] = std::move(layers);
    header["checksum"] = detail::hex64(fnv1a64(payload));
    const std::string text = header.dump();

    std::vector<std::uint8_t> out;
    detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

inline CnnWeights decode_weights(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4) {
        throw FormatError("weights file shorter than its length prefix");
    }
    std::uint32_t hlen = 0;
    for (int i = 0; i < 4; ++i) hlen |= static_cast<std::uint32_t>(bytes[static_cast<std::size_t>(i)]) << (8 * i);
    if (bytes.size() < 4ull + hlen) {
        throw FormatError("weights header truncated");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 4, bytes.begin() + 4 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("weights header is not valid JSON: ") + e.what());
    }

    CnnWeights net;
    std::string checksum;
    try {
        if (header.at("format").get<std::string>() != kWeightsFormat) {
            throw FormatError("unexpected weights format tag");
        }
        if (header.at("version").get<int>() != 1) {
            throw FormatError("unsupported weights version");
        }
        net.scale = header.at("scale").get<int>();
        net.residual = header.value("residual", false);
        net.declared_receptive_field = header.at("receptive_field").get<int>();
        checksum = header.at("checksum").get<std::string>();
        for (const auto& lj : header.at("layers")) {
            if (lj.value("kernel", 3) != 3) {
                throw ShapeError("only 3x3 kernels are supported");
            }
            const auto act = lj.at("activation").get<std::string>();
            if (act != "relu" && act != "identity") {
                throw FormatError("unknown activation '" + act + "'");
            }
            net.layers.emplace_back(lj.at("in_ch").get<int>(), lj.at("out_ch").get<int>(),
                                    act == "relu" ? Activation::ReLU : Activation::Identity);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("weights header missing fields: ") + e.what());
    }

    std::size_t floats = 0;
    for (const auto& l : net.layers) {
        if (l.in_ch < 1 || l.out_ch < 1) throw ShapeError("layer channel counts must be positive");
        floats += l.weights.size() + l.bias.size();
    }
    const std::size_t offset = 4ull + hlen;
    const std::size_t expected = offset + floats * 4;
    if (bytes.size() < expected) {
        throw FormatError("weights payload truncated");
    }
    if (bytes.size() > expected) {
        throw FormatError("weights payload has trailing bytes");
    }
    const std::vector<std::uint8_t> payload(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
    if (detail::hex64(fnv1a64(payload)) != checksum) {
        throw ChecksumError("weights payload checksum mismatch");
    }
    const std::uint8_t* p = payload.data();
    for (auto& l : net.layers) {
        for (auto& w : l.weights) { w = detail::get_f32(p); p += 4; }
        for (auto& b : l.bias) { b = detail::get_f32(p); p += 4; }
    }
    net.validate();
    return net;
}

inline CnnWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IOError(path.string() + ": cannot open weights file");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_weights(bytes);
}

inline void save_weights(const CnnWeights& net, const std::filesystem::path& path) {
    const auto bytes = encode_weights(net);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IOError(path.string() + ": cannot open for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IOError(path.string() + ": write failed");
    }
}

/// Descriptor the loaded network exposes as a tile processor.
[[nodiscard]] inline ProcessorDescriptor describe(const CnnWeights& net, std::string name = "cnn") {
    return ProcessorDescriptor{net.scale, net.input_receptive_field(), std::move(name)};
}

}  // namespace tilesynth
