#pragma once

// Binary PGM (P5) / PPM (P6) codec, 8-bit only. Decoded values are scaled
// to [0,1]; headers may carry '#' comments between fields.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace ynet {

struct ParseError : std::runtime_error {
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error("netpbm parse error at byte " + std::to_string(offset) + ": " + what), offset(offset) {}
    std::size_t offset;
};

using Bytes = std::vector<std::uint8_t>;

namespace detail {

class PnmHeaderReader {
public:
    explicit PnmHeaderReader(std::span<const std::uint8_t> bytes) : b_(bytes) {}

    void expect_magic(char kind) {
        if (b_.size() < 2 || b_[0] != 'P' || b_[1] != static_cast<std::uint8_t>(kind)) {
            throw ParseError(std::string("expected magic P") + kind, 0);
        }
        pos_ = 2;
    }

    // Whitespace (and comments) is mandatory before every field.
    std::size_t read_uint(const char* field) {
        skip_separator(field);
        const std::size_t start = pos_;
        std::uint64_t v = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + (b_[pos_] - '0');
            if (v > 1'000'000) throw ParseError(std::string(field) + " is out of range", start);
            ++pos_;
        }
        if (pos_ == start) throw ParseError(std::string("expected digits for ") + field, pos_);
        return static_cast<std::size_t>(v);
    }

    // Exactly one whitespace byte separates maxval from the raster.
    std::size_t finish_header() {
        if (pos_ >= b_.size() || !is_space(b_[pos_])) throw ParseError("expected whitespace after maxval", pos_);
        return pos_ + 1;
    }

private:
    static bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

    void skip_separator(const char* field) {
        bool seen = false;
        while (pos_ < b_.size()) {
            if (is_space(b_[pos_])) {
                seen = true;
                ++pos_;
            } else if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n' && b_[pos_] != '\r') ++pos_;
                seen = true;
            } else {
                break;
            }
        }
        if (pos_ >= b_.size()) throw ParseError(std::string("truncated header before ") + field, pos_);
        if (!seen) throw ParseError(std::string("expected whitespace before ") + field, pos_);
    }

    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

struct PnmLayout {
    std::size_t width, height, data_offset;
};

inline PnmLayout parse_pnm_header(std::span<const std::uint8_t> bytes, char kind, std::size_t channels) {
    PnmHeaderReader r(bytes);
    r.expect_magic(kind);
    const std::size_t w = r.read_uint("width");
    const std::size_t h = r.read_uint("height");
    const std::size_t maxval = r.read_uint("maxval");
    if (w == 0 || h == 0) throw ParseError("zero image dimension", 2);
    const std::size_t off = r.finish_header();
    if (maxval != 255) throw ParseError("unsupported maxval " + std::to_string(maxval) + " (only 255)", off - 1);
    const std::size_t expected = w * h * channels;
    if (bytes.size() - off < expected) {
        throw ParseError("truncated raster: need " + std::to_string(expected) + " bytes, have " +
                             std::to_string(bytes.size() - off),
                         bytes.size());
    }
    if (bytes.size() - off > expected) throw ParseError("trailing bytes after raster", off + expected);
    return {w, h, off};
}

inline std::uint8_t quantize(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace detail

/// P5 -> [H,W] in [0,1].
inline Tensor<float> decode_pgm(std::span<const std::uint8_t> bytes) {
    const auto l = detail::parse_pnm_header(bytes, '5', 1);
    Tensor<float> out({l.height, l.width});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(bytes[l.data_offset + i]) / 255.0f;
    return out;
}

/// P6 -> [3,H,W] in [0,1] (planar channels).
inline Tensor<float> decode_ppm(std::span<const std::uint8_t> bytes) {
    const auto l = detail::parse_pnm_header(bytes, '6', 3);
    const std::size_t plane = l.width * l.height;
    Tensor<float> out({3, l.height, l.width});
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            out[c * plane + i] = static_cast<float>(bytes[l.data_offset + 3 * i + c]) / 255.0f;
        }
    }
    return out;
}

/// [H,W] (or [1,H,W]) in [0,1] -> P5, rounded to the nearest 8-bit level.
template <typename T>
Bytes encode_pgm(const Tensor<T>& image) {
    if (!(image.rank() == 2 || (image.rank() == 3 && image.dim(0) == 1))) {
        throw ShapeError("encode_pgm expects [H,W], got " + to_string(image.shape()));
    }
    const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
    const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    Bytes out(header.begin(), header.end());
    out.reserve(out.size() + image.size());
    for (auto v : image) out.push_back(detail::quantize(static_cast<double>(v)));
    return out;
}

/// [3,H,W] in [0,1] -> P6.
template <typename T>
Bytes encode_ppm(const Tensor<T>& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("encode_ppm expects [3,H,W], got " + to_string(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
    const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    Bytes out(header.begin(), header.end());
    out.reserve(out.size() + 3 * plane);
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) out.push_back(detail::quantize(static_cast<double>(image[c * plane + i])));
    }
    return out;
}

inline Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace ynet
