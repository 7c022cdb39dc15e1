#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "image.hpp"
#include "json.hpp"
#include "netpbm.hpp"
#include "tensor.hpp"

namespace ynet {

namespace fs = std::filesystem;

struct Sample {
    Tensor<float> image;  // [3,S,S] in [0,1]
    Tensor<float> mask;   // [S,S] in {0,1}
    std::optional<int> severity;
};

struct ManifestEntry {
    std::string image;
    std::string mask;
    std::optional<int> severity;
};

/// Dataset listing with named train/val/test partitions of entry indices.
/// Entry paths are relative to `root`, the manifest's directory.
struct DatasetManifest {
    int version = 1;
    std::size_t size = 0;
    fs::path root;
    std::vector<ManifestEntry> entries;
    std::map<std::string, std::vector<std::size_t>> splits;

    const std::vector<std::size_t>& split(const std::string& name) const {
        auto it = splits.find(name);
        if (it == splits.end()) throw ValidationError("manifest has no split named \"" + name + "\"");
        return it->second;
    }

    void validate() const {
        if (version != 1) throw ValidationError("manifest.version must be 1, got " + std::to_string(version));
        std::set<std::size_t> seen;
        for (const auto& [name, idx] : splits) {
            for (auto i : idx) {
                if (i >= entries.size()) throw ValidationError("manifest split " + name + " index " + std::to_string(i) + " out of range");
                if (!seen.insert(i).second) throw ValidationError("manifest split " + name + " repeats entry " + std::to_string(i));
            }
        }
        if (seen.size() != entries.size()) throw ValidationError("manifest splits do not cover every entry");
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["version"] = version;
        j["size"] = size;
        j["entries"] = nlohmann::json::array();
        for (const auto& e : entries) {
            nlohmann::json je{{"image", e.image}, {"mask", e.mask}};
            if (e.severity) je["severity"] = *e.severity;
            j["entries"].push_back(je);
        }
        j["splits"] = nlohmann::json::object();
        for (const auto& [name, idx] : splits) j["splits"][name] = idx;
        return j;
    }

    static DatasetManifest from_json(const nlohmann::json& j, fs::path root) {
        DatasetManifest m;
        try {
            m.version = j.at("version").get<int>();
            m.size = j.at("size").get<std::size_t>();
            for (const auto& je : j.at("entries")) {
                ManifestEntry e{je.at("image").get<std::string>(), je.at("mask").get<std::string>(), std::nullopt};
                if (je.contains("severity")) e.severity = je.at("severity").get<int>();
                m.entries.push_back(std::move(e));
            }
            for (const auto& [name, idx] : j.at("splits").items()) m.splits[name] = idx.get<std::vector<std::size_t>>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(std::string("malformed manifest: ") + e.what());
        }
        m.root = std::move(root);
        m.validate();
        return m;
    }
};

inline DatasetManifest load_manifest(const fs::path& path) {
    const Bytes bytes = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    return DatasetManifest::from_json(j, path.parent_path());
}

inline void save_manifest(const DatasetManifest& m, const fs::path& path) {
    write_file(path, m.to_json().dump(2) + "\n");
}

/// Decodes an RGB image (P6, or P5 replicated to three channels).
inline Tensor<float> decode_rgb(std::span<const std::uint8_t> bytes) {
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
        const Tensor<float> g = decode_pgm(bytes);
        std::vector<float> data;
        for (int c = 0; c < 3; ++c) data.insert(data.end(), g.begin(), g.end());
        return Tensor<float>({3, g.dim(0), g.dim(1)}, std::move(data));
    }
    return decode_ppm(bytes);
}

/// Decoded, resized samples of one split, in manifest order.
inline std::vector<Sample> load_split(const DatasetManifest& m, const std::string& split_name, std::size_t size) {
    std::vector<Sample> out;
    for (auto i : m.split(split_name)) {
        const auto& e = m.entries[i];
        const fs::path img_path = m.root / e.image, mask_path = m.root / e.mask;
        if (!fs::exists(img_path)) throw IoError("missing image file " + img_path.string());
        if (!fs::exists(mask_path)) throw IoError("missing mask file " + mask_path.string());
        Sample s;
        s.image = resize(decode_rgb(read_file(img_path)), size, ResizeMode::bilinear);
        s.mask = resize(decode_pgm(read_file(mask_path)), size, ResizeMode::nearest);
        for (auto& v : s.mask) v = v >= 0.5f ? 1.0f : 0.0f;
        s.severity = e.severity;
        out.push_back(std::move(s));
    }
    return out;
}

struct SynthConfig {
    std::size_t n_samples = 200;
    std::size_t size = 64;
    std::uint64_t seed = 1;
    std::array<std::array<double, 2>, 4> area_bins{{{0.02, 0.06}, {0.06, 0.12}, {0.12, 0.22}, {0.22, 0.40}}};
    double noise_level = 0.04;

    void validate() const {
        if (n_samples == 0 || n_samples % 4 != 0) throw ValidationError("synth.n_samples must be a positive multiple of 4");
        if (size < 8) throw ValidationError("synth.size must be >= 8");
        for (std::size_t b = 0; b < 4; ++b) {
            const auto [lo, hi] = area_bins[b];
            if (!(lo > 0.0 && lo < hi && hi < 1.0)) throw ValidationError("synth.area_bins[" + std::to_string(b) + "] is not a valid interval");
            if (b > 0 && lo < area_bins[b - 1][1]) throw ValidationError("synth.area_bins must be disjoint and ascending");
        }
        if (!(noise_level >= 0.0)) throw ValidationError("synth.noise_level must be >= 0");
    }
};

/// Index of the half-open area bin containing `fraction`, if any.
inline std::optional<int> severity_bin(const SynthConfig& cfg, double fraction) {
    for (std::size_t b = 0; b < cfg.area_bins.size(); ++b) {
        if (fraction >= cfg.area_bins[b][0] && fraction < cfg.area_bins[b][1]) return static_cast<int>(b);
    }
    return std::nullopt;
}

inline double mask_area_fraction(const Tensor<float>& mask) {
    double s = 0.0;
    for (auto v : mask) s += v;
    return s / static_cast<double>(mask.size());
}

namespace detail {

struct LesionShape {
    double cx, cy, rx, ry, angle;
    std::array<double, 3> amp, phase;  // boundary harmonics 2..4
};

inline Tensor<float> render_lesion(const LesionShape& l, std::size_t S) {
    Tensor<float> mask({S, S});
    const double ca = std::cos(l.angle), sa = std::sin(l.angle);
    for (std::size_t y = 0; y < S; ++y) {
        for (std::size_t x = 0; x < S; ++x) {
            const double dx = static_cast<double>(x) + 0.5 - l.cx, dy = static_cast<double>(y) + 0.5 - l.cy;
            const double u = (ca * dx + sa * dy) / l.rx, v = (-sa * dx + ca * dy) / l.ry;
            const double phi = std::atan2(v, u);
            double r = 1.0;
            for (std::size_t m = 0; m < 3; ++m) r += l.amp[m] * std::cos(static_cast<double>(m + 2) * phi + l.phase[m]);
            if (u * u + v * v <= r * r) mask[y * S + x] = 1.0f;
        }
    }
    return mask;
}

// Low-frequency texture: a handful of random plane waves.
inline std::vector<double> texture(std::size_t S, Rng& rng, double amplitude) {
    std::vector<double> t(S * S, 0.0);
    for (int w = 0; w < 4; ++w) {
        const double fx = rng.uniform(-3.0, 3.0), fy = rng.uniform(-3.0, 3.0), ph = rng.uniform(0.0, 2 * std::numbers::pi);
        const double a = amplitude * rng.uniform(0.5, 1.0);
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
                const double arg = 2 * std::numbers::pi * (fx * x + fy * y) / static_cast<double>(S) + ph;
                t[y * S + x] += a * std::sin(arg);
            }
        }
    }
    return t;
}

}  // namespace detail

struct SyntheticSample {
    Tensor<float> image;
    Tensor<float> mask;
    int severity;
};

/// One synthetic sample of the requested severity class; a pure function of
/// (cfg, index, severity).
inline SyntheticSample synth_sample(const SynthConfig& cfg, std::size_t index, int severity) {
    const std::size_t S = cfg.size;
    Rng rng = Rng(cfg.seed).split(0x5e1 + index);
    const auto [lo, hi] = cfg.area_bins[static_cast<std::size_t>(severity)];
    // Target areas avoid the outer fifth of each bin so classes stay separated.
    const double target = rng.uniform(lo + 0.2 * (hi - lo), hi - 0.2 * (hi - lo));

    for (int attempt = 0; attempt < 50; ++attempt) {
        detail::LesionShape l{};
        const double aspect = rng.uniform(0.75, 1.33);
        l.angle = rng.uniform(0.0, std::numbers::pi);
        for (std::size_t m = 0; m < 3; ++m) {
            l.amp[m] = rng.uniform(0.0, 0.07);
            l.phase[m] = rng.uniform(0.0, 2 * std::numbers::pi);
        }
        const double base = std::sqrt(target / std::numbers::pi) * static_cast<double>(S);
        l.rx = base * std::sqrt(aspect);
        l.ry = base / std::sqrt(aspect);
        const double extent = std::max(l.rx, l.ry) * 1.25;
        const double margin = std::min(extent + 1.0, static_cast<double>(S) / 2.0);
        // Lesions sit near the frame centre, as in dermoscopy framing.
        const double jitter = std::max(0.0, std::min(static_cast<double>(S) / 16.0, static_cast<double>(S) / 2.0 - margin));
        l.cx = static_cast<double>(S) / 2.0 + rng.uniform(-jitter, jitter);
        l.cy = static_cast<double>(S) / 2.0 + rng.uniform(-jitter, jitter);

        Tensor<float> mask;
        for (int refine = 0; refine < 6; ++refine) {
            mask = detail::render_lesion(l, S);
            const double got = mask_area_fraction(mask);
            if (got <= 0.0) break;
            const double s = std::sqrt(target / got);
            if (std::abs(s - 1.0) < 1e-3) break;
            l.rx *= s;
            l.ry *= s;
        }
        if (severity_bin(cfg, mask_area_fraction(mask)) != severity) continue;

        Rng tex = rng.split(1);
        const std::array<double, 3> skin{0.86 + rng.uniform(-0.05, 0.05), 0.66 + rng.uniform(-0.05, 0.05),
                                         0.56 + rng.uniform(-0.05, 0.05)};
        const std::array<double, 3> lesion{0.42 + rng.uniform(-0.06, 0.06), 0.26 + rng.uniform(-0.05, 0.05),
                                           0.20 + rng.uniform(-0.05, 0.05)};
        const auto bg_tex = detail::texture(S, tex, 0.04);
        const auto le_tex = detail::texture(S, tex, 0.06);
        Tensor<float> image({3, S, S});
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < S * S; ++i) {
                const bool in = mask[i] > 0.5f;
                double v = in ? lesion[c] + le_tex[i] : skin[c] + bg_tex[i];
                v += tex.normal(0.0, cfg.noise_level);
                image[c * S * S + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
        return {std::move(image), std::move(mask), severity};
    }
    throw ValidationError("synth: could not render a lesion inside area bin " + std::to_string(severity) +
                          " for sample " + std::to_string(index));
}

/// Writes a balanced synthetic dataset (PPM images, PGM masks, manifest.json)
/// into `out_dir` and returns the manifest.
inline DatasetManifest synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    fs::create_directories(out_dir / "masks", ec);
    if (ec || !fs::is_directory(out_dir / "images") || !fs::is_directory(out_dir / "masks")) {
        throw IoError("cannot create dataset directories under " + out_dir.string());
    }

    Rng rng = Rng(cfg.seed).split(0xc1a55);
    std::vector<int> classes(cfg.n_samples);
    for (std::size_t i = 0; i < cfg.n_samples; ++i) classes[i] = static_cast<int>(i % 4);
    std::shuffle(classes.begin(), classes.end(), rng.engine());

    DatasetManifest m;
    m.size = cfg.size;
    m.root = out_dir;
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        const auto s = synth_sample(cfg, i, classes[i]);
        char name[32];
        std::snprintf(name, sizeof name, "%04zu", i);
        ManifestEntry e{std::string("images/img_") + name + ".ppm", std::string("masks/mask_") + name + ".pgm", s.severity};
        write_file(out_dir / e.image, encode_ppm(s.image));
        write_file(out_dir / e.mask, encode_pgm(s.mask));
        m.entries.push_back(std::move(e));
    }

    std::vector<std::size_t> order(cfg.n_samples);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    const auto n = static_cast<double>(cfg.n_samples);
    const auto n_train = static_cast<std::size_t>(std::lround(0.70 * n));
    const auto n_val = static_cast<std::size_t>(std::lround(0.15 * n));
    auto part = [&](std::size_t from, std::size_t to) {
        std::vector<std::size_t> v(order.begin() + static_cast<std::ptrdiff_t>(from), order.begin() + static_cast<std::ptrdiff_t>(to));
        std::sort(v.begin(), v.end());
        return v;
    };
    m.splits["train"] = part(0, n_train);
    m.splits["val"] = part(n_train, n_train + n_val);
    m.splits["test"] = part(n_train + n_val, cfg.n_samples);
    m.validate();
    save_manifest(m, out_dir / "manifest.json");
    return m;
}

}  // namespace ynet
