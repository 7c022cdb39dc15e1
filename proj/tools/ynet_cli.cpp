// ynet: synthesize data, train both phases, evaluate and predict.
//
// Exit codes: 0 success, 1 I/O or codec failure, 2 usage or validation
// failure, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ynet/run_config.hpp"
#include "ynet/ynet.hpp"

using namespace ynet;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr std::size_t kClusters = 4;

void say(const std::string& line) { std::cout << line << std::endl; }

fs::path checkpoint_stem(const std::string& arg) {
    fs::path p(arg);
    if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
    return p;
}

void require_checkpoint(const fs::path& stem, const std::string& what) {
    if (!fs::exists(checkpoint_manifest_path(stem))) {
        throw ValidationError(what + " not found: " + checkpoint_manifest_path(stem).string());
    }
}

DatasetManifest dataset_for(const RunConfig& rc) {
    if (rc.manifest_path) return load_manifest(*rc.manifest_path);
    return synth_generate(*rc.synth, rc.dataset_dir());
}

CheckpointMeta meta_for(const RunConfig& rc, std::string phase, std::size_t epoch, std::string rng_state = {}) {
    return {std::move(phase), epoch, config_hash(rc.to_json()), std::move(rng_state)};
}

/// Rejects checkpoints whose architecture differs from the configured one.
void check_compatible(const ModelConfig& configured, const ModelConfig& stored) {
    const auto a = model_config_to_json(configured), b = model_config_to_json(stored);
    if (a == b) return;
    std::string diff;
    for (const auto& [key, value] : a.items()) {
        if (b.at(key) != value) diff += " " + key + " (config " + value.dump() + ", checkpoint " + b.at(key).dump() + ")";
    }
    const Shape want{configured.in_channels, configured.image_size, configured.image_size};
    const Shape got{stored.in_channels, stored.image_size, stored.image_size};
    throw ValidationError("checkpoint does not match config:" + diff + "; input shape " + to_string(got) + " vs " +
                          to_string(want));
}

std::vector<EpochStats> read_loss_curve(const fs::path& path) {
    std::vector<EpochStats> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        EpochStats e;
        std::string vl, vi;
        ss >> e.epoch >> e.train_loss >> vl >> vi;
        e.val_loss = std::strtod(vl.c_str(), nullptr);
        e.val_iou = std::strtod(vi.c_str(), nullptr);
        out.push_back(e);
    }
    return out;
}

std::string numbers(const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : " ") + detail::format_double(x);
    return s;
}

int cmd_synth(const std::string& config, std::optional<std::size_t> n, std::optional<std::size_t> size,
              std::optional<std::uint64_t> seed, std::optional<double> noise, const std::string& out) {
    SynthConfig cfg;
    fs::path dir;
    if (!config.empty()) {
        const RunConfig rc = load_run_config(config);
        if (!rc.synth) throw ValidationError("data.synth is required for synth --config");
        cfg = *rc.synth;
        dir = out.empty() ? rc.dataset_dir() : fs::path(out);
    } else {
        if (out.empty()) throw CLI::RequiredError("--out");
        dir = out;
    }
    if (n) cfg.n_samples = *n;
    if (size) cfg.size = *size;
    if (seed) cfg.seed = *seed;
    if (noise) cfg.noise_level = *noise;
    synth_generate(cfg, dir);
    say("manifest " + (dir / "manifest.json").string());
    return 0;
}

int cmd_train_seg(const std::string& config) {
    const RunConfig rc = load_run_config(config);
    const auto m = dataset_for(rc);
    const auto train = load_split(m, "train", rc.model.image_size);
    const auto val = load_split(m, "val", rc.model.image_size);
    fs::create_directories(rc.out_dir);

    YNet<float> model(rc.model, rc.train.seed);
    save_checkpoint(model, meta_for(rc, "init", 0), rc.out_dir / "checkpoint_init");
    say("train-seg " + std::string(to_string(rc.model.variant)) + " params " + std::to_string(model.param_count()) + " train " +
        std::to_string(train.size()) + " val " + std::to_string(val.size()));
    const auto r = train_segmentation(model, train, val, rc.train, say);
    save_checkpoint(model, meta_for(rc, "segmentation", rc.train.epochs, r.rng_state), rc.out_dir / "checkpoint_final");
    save_checkpoint(r.best_model, meta_for(rc, "segmentation", r.best_epoch, r.rng_state), rc.out_dir / "checkpoint_best");
    write_file(rc.out_dir / "loss_curve.csv", loss_curve_csv(r.history));
    say("best epoch " + std::to_string(r.best_epoch) + " val_iou " + detail::format_double(r.best_val_iou));
    return 0;
}

int cmd_cluster(const std::string& config, const std::string& phase) {
    const RunConfig rc = load_run_config(config);
    if (phase == "init") {
        const fs::path from = rc.out_dir / "checkpoint_best";
        require_checkpoint(from, "phase-1 checkpoint");
        auto ck = load_checkpoint<float>(from);
        check_compatible(rc.model, ck.model.config());
        const auto train = load_split(dataset_for(rc), "train", rc.model.image_size);
        const auto km = init_clusters(ck.model, train, kClusters, rc.train.seed);
        save_checkpoint(ck.model, meta_for(rc, "cluster_init", 0), rc.out_dir / "checkpoint_cluster_init");
        say("k-means inertia " + detail::format_double(km.inertia) + " iterations " + std::to_string(km.iterations));
        if (std::all_of(train.begin(), train.end(), [](const Sample& s) { return s.severity.has_value(); })) {
            say("train cluster_accuracy " + detail::format_double(evaluate_clustering(ck.model, train).cluster_accuracy));
        }
        return 0;
    }
    const fs::path from = rc.out_dir / "checkpoint_cluster_init";
    require_checkpoint(from, "cluster-init checkpoint");
    auto ck = load_checkpoint<float>(from);
    check_compatible(rc.model, ck.model.config());
    const auto train = load_split(dataset_for(rc), "train", rc.model.image_size);
    const auto r = train_clustering(ck.model, train, rc.train, say);
    save_checkpoint(ck.model, meta_for(rc, "clustering", rc.train.epochs), rc.out_dir / "checkpoint_cluster");
    write_file(rc.out_dir / "kl_curve.csv", kl_curve_csv(r.kl_curve));
    say("kl first " + detail::format_double(r.kl_curve.front().kl) + " final " + detail::format_double(r.kl_curve.back().kl));
    return 0;
}

int cmd_eval(const std::string& config, const std::string& checkpoint) {
    const RunConfig rc = load_run_config(config);
    const fs::path stem = checkpoint_stem(checkpoint);
    require_checkpoint(stem, "checkpoint");
    const auto ck = load_checkpoint<float>(stem);
    check_compatible(rc.model, ck.model.config());
    const auto m = dataset_for(rc);
    const auto test = load_split(m, "test", rc.model.image_size);
    if (test.empty()) throw ValidationError("test split is empty");
    const auto& idx = m.split("test");

    const fs::path pred_dir = rc.out_dir / "predictions";
    fs::create_directories(pred_dir);
    std::vector<Bytes> encoded(test.size());
    parallel_for(test.size(), [&](std::size_t i) {
        const auto probs = predict(ck.model, test[i].image);
        encoded[i] = encode_pgm(probs.reshaped({rc.model.image_size, rc.model.image_size}));
    });
    for (std::size_t i = 0; i < test.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "pred_%04zu.pgm", idx[i]);
        write_file(pred_dir / name, encoded[i]);
    }

    MetricsReport report;
    report.iou_mean = evaluate_iou(ck.model, test);
    report.per_epoch_losses = read_loss_curve(rc.out_dir / "loss_curve.csv");
    const bool labelled = std::all_of(test.begin(), test.end(), [](const Sample& s) { return s.severity.has_value(); });
    if (ck.model.has_centroids() && labelled) report.clustering = evaluate_clustering(ck.model, test);
    write_file(rc.out_dir / "metrics.json", report.to_json().dump(2) + "\n");

    say("iou_mean " + detail::format_double(report.iou_mean) + " over " + std::to_string(test.size()) + " test samples");
    if (report.clustering) {
        say("cluster_accuracy " + detail::format_double(report.clustering->cluster_accuracy));
        say("confusion (rows = cluster, cols = true label)");
        for (const auto& row : report.clustering->confusion) {
            std::string line;
            for (auto v : row) line += " " + std::to_string(v);
            say(line);
        }
    }
    say("metrics " + (rc.out_dir / "metrics.json").string());
    return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& image, const std::string& out, bool embed) {
    const fs::path stem = checkpoint_stem(checkpoint);
    require_checkpoint(stem, "checkpoint");
    const auto ck = load_checkpoint<float>(stem);
    const std::size_t S = ck.model.config().image_size;
    const auto input = resize(decode_rgb(read_file(image)), S, ResizeMode::bilinear);
    write_file(out, encode_pgm(predict(ck.model, input).reshaped({S, S})));
    if (embed) {
        const auto z = ck.model.forward_embed(input);
        say("embedding " + numbers(std::vector<double>(z.begin(), z.end())));
        if (ck.model.has_centroids()) {
            const auto q = soft_assign(z.reshaped({1, z.size()}), ck.model.params().centroids);
            say("cluster " + std::to_string(hard_assign(q)[0]));
        } else {
            say("cluster none");
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Y-Net segmentation autoencoder with a clustering head"};
    app.require_subcommand(1);

    std::string config, out, checkpoint, image, phase;
    std::optional<std::size_t> n, size;
    std::optional<std::uint64_t> seed;
    std::optional<double> noise;
    bool embed = false;

    auto* synth = app.add_subcommand("synth", "Generate the synthetic lesion dataset");
    synth->add_option("--config", config, "Run config (uses data.synth)")->check(CLI::ExistingFile);
    synth->add_option("--n", n, "Number of samples (multiple of 4)");
    synth->add_option("--size", size, "Image side length");
    synth->add_option("--seed", seed, "Generator seed");
    synth->add_option("--noise", noise, "Pixel noise standard deviation");
    synth->add_option("--out", out, "Output directory");

    auto* train = app.add_subcommand("train-seg", "Phase 1: segmentation training");
    train->add_option("--config", config, "Run config")->required();

    auto* cluster = app.add_subcommand("cluster", "Phase 2: k-means init or KL fine-tuning");
    cluster->add_option("--config", config, "Run config")->required();
    cluster->add_option("--phase", phase, "init | train")->required()->check(CLI::IsMember({"init", "train"}));

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    eval->add_option("--config", config, "Run config")->required();
    eval->add_option("--checkpoint", checkpoint, "Checkpoint stem or manifest path")->required();

    auto* pred = app.add_subcommand("predict", "Segment one image");
    pred->add_option("--checkpoint", checkpoint, "Checkpoint stem or manifest path")->required();
    pred->add_option("--image", image, "Input PPM or PGM")->required();
    pred->add_option("--out", out, "Output mask PGM")->required();
    pred->add_flag("--embed", embed, "Print the embedding and hard cluster label");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(config, n, size, seed, noise, out);
        if (train->parsed()) return cmd_train_seg(config);
        if (cluster->parsed()) return cmd_cluster(config, phase);
        if (eval->parsed()) return cmd_eval(config, checkpoint);
        return cmd_predict(checkpoint, image, out, embed);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n" << synth->help();
        return kExitUsage;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const NumericalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::logic_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
}
