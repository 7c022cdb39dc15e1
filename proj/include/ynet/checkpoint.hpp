#pragma once

// Checkpoint = JSON manifest (<stem>.json) + raw blob (<stem>.bin) of
// little-endian float32 values, concatenated in manifest order.

#include <bit>
#include <cstring>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "model.hpp"
#include "netpbm.hpp"

namespace ynet {

namespace fs = std::filesystem;

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
    std::string phase = "init";  // init | segmentation | cluster_init | clustering
    std::size_t epoch = 0;
    std::string config_hash;
    std::string rng_state;
};

template <typename T>
struct Checkpoint {
    YNet<T> model;
    CheckpointMeta meta;
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"image_size", c.image_size},     {"in_channels", c.in_channels}, {"base_channels", c.base_channels},
            {"depth", c.depth},               {"embed_dim", c.embed_dim},     {"dropout_rate", c.dropout_rate},
            {"variant", to_string(c.variant)}};
}

/// Fields absent from `j` keep their defaults from `base`.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
    auto field = [&](const char* name, auto& dst) {
        if (!j.contains(name)) return;
        try {
            j.at(name).get_to(dst);
        } catch (const nlohmann::json::exception&) {
            throw ValidationError(std::string("model.") + name + " has the wrong type");
        }
    };
    field("image_size", base.image_size);
    field("in_channels", base.in_channels);
    field("base_channels", base.base_channels);
    field("depth", base.depth);
    field("embed_dim", base.embed_dim);
    field("dropout_rate", base.dropout_rate);
    if (j.contains("variant")) {
        if (!j.at("variant").is_string()) throw ValidationError("model.variant has the wrong type");
        base.variant = parse_variant(j.at("variant").get<std::string>());
    }
    base.validate();
    return base;
}

/// FNV-1a over a canonical JSON dump.
inline std::string config_hash(const nlohmann::json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : j.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline fs::path checkpoint_manifest_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }
inline fs::path checkpoint_blob_path(const fs::path& stem) { return fs::path(stem.string() + ".bin"); }

/// Writes <stem>.json and <stem>.bin.
template <typename T>
void save_checkpoint(const YNet<T>& model, const CheckpointMeta& meta, const fs::path& stem) {
    nlohmann::json j;
    j["format"] = "ynet-checkpoint";
    j["version"] = kCheckpointVersion;
    j["model"] = model_config_to_json(model.config());
    j["blob"] = checkpoint_blob_path(stem).filename().string();
    j["metadata"] = {{"phase", meta.phase}, {"epoch", meta.epoch}, {"config_hash", meta.config_hash}, {"rng_state", meta.rng_state}};
    j["tensors"] = nlohmann::json::array();

    Bytes blob;
    model.params().visit([&](const std::string& name, ParamGroup, const Tensor<T>& t) {
        j["tensors"].push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape()}, {"offset", blob.size()}});
        for (auto v : t) {
            auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
            for (int b = 0; b < 4; ++b) blob.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
        }
    });
    j["total_bytes"] = blob.size();
    if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
    write_file(checkpoint_blob_path(stem), blob);
    write_file(checkpoint_manifest_path(stem), j.dump(2) + "\n");
}

template <typename T>
Checkpoint<T> load_checkpoint(const fs::path& stem) {
    const fs::path mpath = checkpoint_manifest_path(stem);
    if (!fs::exists(mpath)) throw IoError("checkpoint manifest not found: " + mpath.string());
    const Bytes text = read_file(mpath);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text.begin(), text.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
    }
    auto need = [&](const nlohmann::json& obj, const char* key) -> const nlohmann::json& {
        if (!obj.contains(key)) throw ValidationError(std::string("checkpoint field \"") + key + "\" is missing");
        return obj.at(key);
    };
    if (need(j, "format") != "ynet-checkpoint") throw ValidationError("checkpoint field \"format\" is not ynet-checkpoint");
    if (need(j, "version") != kCheckpointVersion) {
        throw ValidationError("checkpoint field \"version\" is unsupported: " + need(j, "version").dump());
    }
    Checkpoint<T> ck;
    ck.model = YNet<T>(model_config_from_json(need(j, "model")), 0);
    const auto& entries = need(j, "tensors");

    // Centroids are optional: size the slot if the manifest lists them.
    for (const auto& e : entries) {
        if (e.value("name", "") == "cluster.centroids") ck.model.params().centroids = Tensor<T>(e.at("shape").template get<Shape>());
    }

    const Bytes blob = read_file(stem.parent_path() / need(j, "blob").template get<std::string>());
    if (blob.size() != need(j, "total_bytes").template get<std::size_t>()) {
        throw ValidationError("checkpoint field \"total_bytes\" (" + j["total_bytes"].dump() + ") does not match blob length " +
                              std::to_string(blob.size()));
    }

    std::size_t index = 0, offset = 0;
    ck.model.params().visit([&](const std::string& name, ParamGroup, Tensor<T>& t) {
        if (index >= entries.size()) throw ValidationError("checkpoint field \"tensors\" lacks parameter " + name);
        const auto& e = entries[index++];
        if (need(e, "name") != name) {
            throw ValidationError("checkpoint field \"tensors[" + std::to_string(index - 1) + "].name\" is " + e["name"].dump() +
                                  ", expected " + name);
        }
        if (need(e, "dtype") != "f32") throw ValidationError("checkpoint field \"dtype\" of " + name + " must be f32");
        const auto shape = need(e, "shape").template get<Shape>();
        if (shape != t.shape()) {
            throw ValidationError("checkpoint field \"shape\" of " + name + " is " + to_string(shape) + ", model expects " +
                                  to_string(t.shape()));
        }
        if (need(e, "offset").template get<std::size_t>() != offset) {
            throw ValidationError("checkpoint field \"offset\" of " + name + " is " + e["offset"].dump() + ", expected " +
                                  std::to_string(offset));
        }
        if (offset + 4 * t.size() > blob.size()) throw ValidationError("checkpoint blob is truncated at " + name);
        for (std::size_t i = 0; i < t.size(); ++i, offset += 4) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(blob[offset + b]) << (8 * b);
            if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
            t[i] = static_cast<T>(std::bit_cast<float>(bits));
        }
    });
    if (index != entries.size()) throw ValidationError("checkpoint field \"tensors\" lists unknown extra entries");
    if (offset != blob.size()) throw ValidationError("checkpoint blob has trailing bytes");

    if (const auto it = j.find("metadata"); it != j.end()) {
        ck.meta.phase = it->value("phase", "init");
        ck.meta.epoch = it->value("epoch", std::size_t{0});
        ck.meta.config_hash = it->value("config_hash", "");
        ck.meta.rng_state = it->value("rng_state", "");
    }
    return ck;
}

}  // namespace ynet
