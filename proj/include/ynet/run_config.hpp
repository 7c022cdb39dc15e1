#pragma once

// Run configuration document shared by the CLI commands.

#include <filesystem>
#include <optional>
#include <string>

#include "checkpoint.hpp"
#include "dataset.hpp"
#include "json.hpp"
#include "training.hpp"

namespace ynet {

inline constexpr int kRunConfigVersion = 1;

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::optional<fs::path> manifest_path;
    std::optional<SynthConfig> synth;
    fs::path out_dir;

    /// Synthetic data lives under the run directory.
    fs::path dataset_dir() const { return out_dir / "data"; }

    nlohmann::json to_json() const;
};

namespace detail {

template <typename V>
void read_field(const nlohmann::json& obj, const std::string& section, const char* name, V& dst) {
    if (!obj.contains(name)) return;
    try {
        obj.at(name).get_to(dst);
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(section + "." + name + " has the wrong type");
    }
}

inline void require_object(const nlohmann::json& j, const std::string& name) {
    if (!j.is_object()) throw ValidationError(name + " must be an object");
}

inline void reject_unknown(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> known) {
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
            throw ValidationError(section + "." + key + " is not a recognised field");
        }
    }
}

}  // namespace detail

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    detail::require_object(j, "train");
    detail::reject_unknown(j, "train", {"epochs", "batch_size", "learning_rate", "seed", "p_update_interval",
                                        "freeze_decoder_in_phase2", "gamma_seg"});
    TrainConfig c;
    detail::read_field(j, "train", "epochs", c.epochs);
    detail::read_field(j, "train", "batch_size", c.batch_size);
    detail::read_field(j, "train", "learning_rate", c.learning_rate);
    detail::read_field(j, "train", "seed", c.seed);
    detail::read_field(j, "train", "p_update_interval", c.p_update_interval);
    detail::read_field(j, "train", "freeze_decoder_in_phase2", c.freeze_decoder_in_phase2);
    detail::read_field(j, "train", "gamma_seg", c.gamma_seg);
    c.validate();
    return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"seed", c.seed},
            {"p_update_interval", c.p_update_interval},
            {"freeze_decoder_in_phase2", c.freeze_decoder_in_phase2},
            {"gamma_seg", c.gamma_seg}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
    detail::require_object(j, "data.synth");
    detail::reject_unknown(j, "data.synth", {"n_samples", "size", "seed", "noise_level", "area_bins"});
    SynthConfig c;
    detail::read_field(j, "data.synth", "n_samples", c.n_samples);
    detail::read_field(j, "data.synth", "size", c.size);
    detail::read_field(j, "data.synth", "seed", c.seed);
    detail::read_field(j, "data.synth", "noise_level", c.noise_level);
    detail::read_field(j, "data.synth", "area_bins", c.area_bins);
    c.validate();
    return c;
}

inline nlohmann::json synth_config_to_json(const SynthConfig& c) {
    return {{"n_samples", c.n_samples}, {"size", c.size}, {"seed", c.seed}, {"noise_level", c.noise_level}, {"area_bins", c.area_bins}};
}

inline nlohmann::json RunConfig::to_json() const {
    nlohmann::json data;
    if (manifest_path) data["manifest_path"] = manifest_path->string();
    if (synth) data["synth"] = synth_config_to_json(*synth);
    return {{"format_version", kRunConfigVersion},
            {"model", model_config_to_json(model)},
            {"train", train_config_to_json(train)},
            {"data", data},
            {"out_dir", out_dir.string()}};
}

/// Relative paths resolve against `base_dir` (the config file's directory).
inline RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
    detail::require_object(j, "config");
    detail::reject_unknown(j, "config", {"format_version", "model", "train", "data", "out_dir"});
    if (!j.contains("format_version")) throw ValidationError("format_version is missing");
    if (j.at("format_version") != kRunConfigVersion) {
        throw ValidationError("format_version must be " + std::to_string(kRunConfigVersion) + ", got " + j.at("format_version").dump());
    }
    RunConfig rc;
    if (j.contains("model")) {
        detail::require_object(j.at("model"), "model");
        detail::reject_unknown(j.at("model"), "model",
                               {"image_size", "in_channels", "base_channels", "depth", "embed_dim", "dropout_rate", "variant"});
        rc.model = model_config_from_json(j.at("model"));
    }
    if (j.contains("train")) rc.train = train_config_from_json(j.at("train"));

    if (!j.contains("data")) throw ValidationError("data is missing");
    const auto& data = j.at("data");
    detail::require_object(data, "data");
    detail::reject_unknown(data, "data", {"manifest_path", "synth"});
    if (data.contains("manifest_path") == data.contains("synth")) {
        throw ValidationError("data must specify exactly one of manifest_path or synth");
    }
    if (data.contains("manifest_path")) {
        if (!data.at("manifest_path").is_string()) throw ValidationError("data.manifest_path has the wrong type");
        rc.manifest_path = base_dir / data.at("manifest_path").get<std::string>();
        if (!fs::exists(*rc.manifest_path)) throw ValidationError("data.manifest_path does not exist: " + rc.manifest_path->string());
    } else {
        rc.synth = synth_config_from_json(data.at("synth"));
    }

    if (!j.contains("out_dir") || !j.at("out_dir").is_string()) throw ValidationError("out_dir is missing or not a string");
    rc.out_dir = base_dir / j.at("out_dir").get<std::string>();
    return rc;
}

inline RunConfig load_run_config(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("config not found: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config is not valid JSON: " + std::string(e.what()));
    }
    return run_config_from_json(j, path.parent_path());
}

}  // namespace ynet
