#pragma once

// PNG (8-bit gray/gray+alpha/RGB/RGBA) and binary PPM (P6) reading, PNG writing.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tilesynth/error.hpp"
#include "tilesynth/grid.hpp"

namespace tilesynth {

/// Round-half-up quantization to 8 bits after clamping to [0,1].
[[nodiscard]] inline std::uint8_t quantize_u8(float v) noexcept {
    if (!(v > 0.0f)) {
        return 0;  // also catches NaN
    }
    if (v >= 1.0f) {
        return 255;
    }
    return static_cast<std::uint8_t>(std::floor(static_cast<double>(v) * 255.0 + 0.5));
}

namespace detail {

inline ImageBuffer from_bytes(const std::vector<std::uint8_t>& bytes, int h, int w, int ch) {
    std::vector<float> values(bytes.size());
    std::transform(bytes.begin(), bytes.end(), values.begin(),
                   [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
    return ImageBuffer(h, w, ch, std::move(values));
}

inline bool has_png_signature(const std::vector<std::uint8_t>& head) {
    static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    return head.size() >= 8 && std::equal(std::begin(sig), std::end(sig), head.begin());
}

inline ImageBuffer load_ppm(std::ifstream& in, const std::string& path) {
    auto next_token = [&]() {
        std::string tok;
        int c = in.get();
        while (c != EOF) {
            if (c == '#') {
                while (c != EOF && c != '\n') {
                    c = in.get();
                }
            } else if (std::isspace(c)) {
                if (!tok.empty()) {
                    break;
                }
            } else {
                tok.push_back(static_cast<char>(c));
            }
            c = in.get();
        }
        return tok;
    };
    if (next_token() != "P6") {
        throw FormatError(path + ": only binary PPM (P6) is supported");
    }
    int w = 0;
    int h = 0;
    int maxval = 0;
    try {
        w = std::stoi(next_token());
        h = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw FormatError(path + ": malformed PPM header");
    }
    if (w <= 0 || h <= 0 || maxval <= 0) {
        throw FormatError(path + ": invalid PPM header values");
    }
    if (maxval > 255) {
        throw FormatError(path + ": 16-bit PPM is not supported");
    }
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw FormatError(path + ": truncated PPM payload");
    }
    std::vector<float> values(bytes.size());
    std::transform(bytes.begin(), bytes.end(), values.begin(), [maxval](std::uint8_t b) {
        return static_cast<float>(b) / static_cast<float>(maxval);
    });
    return ImageBuffer(h, w, 3, std::move(values));
}

inline ImageBuffer load_png(const std::string& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
        throw FormatError(path + ": " + image.message);
    }
    if ((image.format & PNG_FORMAT_FLAG_LINEAR) != 0) {
        png_image_free(&image);
        throw FormatError(path + ": 16-bit PNG is not supported");
    }
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    const bool alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
    image.format = color ? (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB)
                         : (alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY);
    const int ch = static_cast<int>(PNG_IMAGE_PIXEL_CHANNELS(image.format));
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
    if (png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr) == 0) {
        std::string msg = image.message;
        png_image_free(&image);
        throw FormatError(path + ": " + msg);
    }
    return from_bytes(bytes, static_cast<int>(image.height), static_cast<int>(image.width), ch);
}

}  // namespace detail

/// Reads a PNG or binary PPM file; values are scaled to [0,1].
inline ImageBuffer load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IOError(path.string() + ": cannot open for reading");
    }
    std::vector<std::uint8_t> head(8, 0);
    in.read(reinterpret_cast<char*>(head.data()), 8);
    head.resize(static_cast<std::size_t>(in.gcount()));
    if (detail::has_png_signature(head)) {
        in.close();
        return detail::load_png(path.string());
    }
    if (head.size() >= 2 && head[0] == 'P' && head[1] == '6') {
        in.clear();
        in.seekg(0);
        return detail::load_ppm(in, path.string());
    }
    throw FormatError(path.string() + ": not a PNG or P6 PPM file");
}

/// Writes an 8-bit PNG. Values are clamped to [0,1] and rounded half-up.
inline void save_image(const ImageBuffer& img, const std::filesystem::path& path) {
    png_uint_32 format = 0;
    switch (img.channels()) {
        case 1: format = PNG_FORMAT_GRAY; break;
        case 3: format = PNG_FORMAT_RGB; break;
        case 4: format = PNG_FORMAT_RGBA; break;
        default:
            throw ChannelMismatch("save_image: PNG output needs 1, 3 or 4 channels, got " +
                                  std::to_string(img.channels()));
    }
    std::vector<std::uint8_t> bytes(img.size());
    std::transform(img.data().begin(), img.data().end(), bytes.begin(), quantize_u8);

    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = format;
    if (png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr) == 0) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IOError(path.string() + ": " + msg);
    }
}

}  // namespace tilesynth
