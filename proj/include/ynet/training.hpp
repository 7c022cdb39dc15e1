#pragma once

// Two-phase protocol: segmentation training of the autoencoder, then
// k-means centroid initialisation and KL fine-tuning of encoder + centroids.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "adam.hpp"
#include "clustering.hpp"
#include "dataset.hpp"
#include "json.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "parallel.hpp"

namespace ynet {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 1;
    double learning_rate = 1e-4;
    std::uint64_t seed = 1;
    std::size_t p_update_interval = 0;  // batches between target refreshes; 0 = once per epoch
    bool freeze_decoder_in_phase2 = true;
    double gamma_seg = 0.0;

    void validate() const {
        if (epochs < 1) throw ValidationError("train.epochs must be >= 1");
        if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("train.learning_rate must be >= 0");
        if (!(gamma_seg >= 0.0)) throw ValidationError("train.gamma_seg must be >= 0");
    }
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_iou = 0.0;
};

template <typename T>
struct SegmentationResult {
    YNet<T> best_model;
    std::size_t best_epoch = 0;
    double best_val_iou = -1.0;
    std::vector<EpochStats> history;
    std::string rng_state;
};

using Logger = std::function<void(const std::string&)>;

namespace detail {

template <typename T>
Tensor<T> image_as(const Sample& s) {
    if constexpr (std::is_same_v<T, float>) return s.image;
    else return s.image.cast<T>();
}

template <typename T>
Tensor<T> mask_as(const Sample& s) {
    if constexpr (std::is_same_v<T, float>) return s.mask;
    else return s.mask.cast<T>();
}

/// Aligned parameter/gradient pointer lists for Adam; gradients of groups
/// not in `trainable` are left null so those parameters stay fixed.
template <typename T>
std::pair<std::vector<Tensor<T>*>, std::vector<const Tensor<T>*>> adam_lists(
    ModelParams<T>& params, const ModelParams<T>& grads, const std::function<bool(ParamGroup)>& trainable) {
    std::vector<Tensor<T>*> p;
    std::vector<const Tensor<T>*> g;
    params.visit([&](const std::string&, ParamGroup, Tensor<T>& t) { p.push_back(&t); });
    grads.visit([&](const std::string&, ParamGroup grp, const Tensor<T>& t) { g.push_back(trainable(grp) ? &t : nullptr); });
    return {std::move(p), std::move(g)};
}

template <typename T>
void add_scaled(ModelParams<T>& into, const ModelParams<T>& g, T scale) {
    std::vector<const Tensor<T>*> src;
    g.visit([&](const std::string&, ParamGroup, const Tensor<T>& t) { src.push_back(&t); });
    std::size_t i = 0;
    into.visit([&](const std::string&, ParamGroup, Tensor<T>& t) {
        const Tensor<T>& s = *src[i++];
        for (std::size_t j = 0; j < t.size(); ++j) t[j] += scale * s[j];
    });
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

}  // namespace detail

/// Eval-mode foreground probabilities [1,S,S].
template <typename T>
Tensor<T> predict(const YNet<T>& model, const Tensor<T>& image) {
    Rng unused(0);
    return model.forward_seg(image, false, unused);
}

/// Mean per-sample IoU of a predictor's thresholded masks.
inline double evaluate_iou(const std::function<Tensor<float>(const Sample&)>& predictor, const std::vector<Sample>& samples) {
    if (samples.empty()) throw ValidationError("evaluate_iou: empty split");
    std::vector<double> scores(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        scores[i] = iou(binarize(predictor(samples[i])), samples[i].mask);
    });
    double s = 0.0;
    for (auto v : scores) s += v;
    return s / static_cast<double>(samples.size());
}

template <typename T>
double evaluate_iou(const YNet<T>& model, const std::vector<Sample>& samples) {
    return evaluate_iou([&](const Sample& s) { return predict(model, detail::image_as<T>(s)).template cast<float>(); }, samples);
}

/// Eval-mode mean BCE and mean IoU over a split.
template <typename T>
std::pair<double, double> evaluate_loss_iou(const YNet<T>& model, const std::vector<Sample>& samples) {
    std::vector<double> loss(samples.size()), score(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        const Tensor<T> p = predict(model, detail::image_as<T>(samples[i]));
        const Tensor<T> m = detail::mask_as<T>(samples[i]);
        loss[i] = bce_loss(p, m);
        score[i] = iou(binarize(p), m);
    });
    double l = 0.0, s = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        l += loss[i];
        s += score[i];
    }
    const auto n = static_cast<double>(samples.size());
    return {l / n, s / n};
}

/// Segmentation training with Adam and active dropout. `model` ends holding
/// the final parameters; the best-validation-IoU copy is returned.
template <typename T>
SegmentationResult<T> train_segmentation(YNet<T>& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                                         const TrainConfig& cfg, const Logger& log = {}) {
    cfg.validate();
    if (train.empty()) throw ValidationError("train_segmentation: empty training split");
    Rng root(cfg.seed);
    Rng shuffle_rng = root.split(0x5f1);
    Rng dropout_rng = root.split(0xd0);
    AdamState<T> adam(AdamConfig{cfg.learning_rate});
    SegmentationResult<T> result;
    result.best_model = model;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
        double loss_sum = 0.0;
        std::size_t batch = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            ModelParams<T> grads = model.params().zeros();
            double batch_loss = 0.0;
            for (std::size_t b = start; b < end; ++b) {
                const Sample& s = train[order[b]];
                const auto pass = model.forward(detail::image_as<T>(s), true, dropout_rng);
                const Tensor<T> target = detail::mask_as<T>(s);
                batch_loss += bce_loss(pass.probs, target);
                detail::add_scaled(grads, model.backward_seg(pass, target), static_cast<T>(1.0 / static_cast<double>(end - start)));
            }
            batch_loss /= static_cast<double>(end - start);
            if (!std::isfinite(batch_loss)) {
                throw NumericalError("non-finite segmentation loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch) + ": " + detail::format_double(batch_loss));
            }
            loss_sum += batch_loss * static_cast<double>(end - start);
            auto [p, g] = detail::adam_lists(model.params(), grads, [](ParamGroup grp) { return grp != ParamGroup::centroids; });
            adam_step(p, g, adam);
        }
        EpochStats st{epoch, loss_sum / static_cast<double>(train.size()), std::numeric_limits<double>::quiet_NaN(),
                      std::numeric_limits<double>::quiet_NaN()};
        if (!val.empty()) std::tie(st.val_loss, st.val_iou) = evaluate_loss_iou(model, val);
        result.history.push_back(st);
        if (val.empty() || st.val_iou > result.best_val_iou) {
            result.best_val_iou = st.val_iou;
            result.best_epoch = epoch;
            result.best_model = model;
        }
        if (log) {
            log("epoch " + std::to_string(epoch) + " train_loss " + detail::format_double(st.train_loss) + " val_loss " +
                detail::format_double(st.val_loss) + " val_iou " + detail::format_double(st.val_iou));
        }
    }
    result.rng_state = dropout_rng.state();
    return result;
}

/// Eval-mode embeddings of every sample, stacked as [n, k].
template <typename T>
Tensor<T> embed_all(const YNet<T>& model, const std::vector<Sample>& samples) {
    const std::size_t k = model.config().embed_dim;
    if (samples.empty()) throw ValidationError("embed_all: empty split");
    Tensor<T> z({samples.size(), k});
    parallel_for(samples.size(), [&](std::size_t i) {
        const Tensor<T> e = model.forward_embed(detail::image_as<T>(samples[i]));
        std::copy(e.begin(), e.end(), z.begin() + static_cast<std::ptrdiff_t>(i * k));
    });
    return z;
}

/// Fits k-means on the training embeddings and installs the centroids as
/// the model's clustering layer.
template <typename T>
KMeansResult<T> init_clusters(YNet<T>& model, const std::vector<Sample>& train, std::size_t k, std::uint64_t seed) {
    if (train.size() < k) {
        throw ValidationError("init_clusters: " + std::to_string(train.size()) + " samples is fewer than k = " + std::to_string(k));
    }
    const Tensor<T> z = embed_all(model, train);
    KMeansResult<T> r = kmeans_fit(z, k, seed);
    model.params().centroids = r.centroids;
    return r;
}

struct KlRecord {
    std::size_t refresh = 0;
    std::size_t epoch = 0;  // epoch about to start; epochs + 1 marks the closing refresh
    std::size_t step = 0;   // optimizer steps taken so far
    double kl = 0.0;        // mean per-sample KL(P || Q) over the training split
};

struct ClusteringTrainResult {
    std::vector<KlRecord> kl_curve;
    std::size_t reseeded_clusters = 0;
    std::vector<std::string> warnings;
};

/// KL self-training: P is refreshed from a full eval-mode pass on schedule,
/// and each batch minimises KL(P_batch || Q_batch) (+ gamma_seg * BCE).
template <typename T>
ClusteringTrainResult train_clustering(YNet<T>& model, const std::vector<Sample>& train, const TrainConfig& cfg,
                                       const Logger& log = {}) {
    cfg.validate();
    if (!model.has_centroids()) throw ContractError("train_clustering: centroids are not initialized");
    if (train.empty()) throw ValidationError("train_clustering: empty training split");
    const std::size_t n = train.size(), k = model.params().centroids.dim(0);
    const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t interval = cfg.p_update_interval ? cfg.p_update_interval : batches_per_epoch;
    const bool joint = cfg.gamma_seg > 0.0;

    Rng root(cfg.seed);
    Rng shuffle_rng = root.split(0xc5f1);
    Rng no_dropout = root.split(0xcd0);
    AdamState<T> adam(AdamConfig{cfg.learning_rate});
    ClusteringTrainResult result;
    Tensor<T> target;

    auto refresh = [&](std::size_t epoch, std::size_t step) {
        const Tensor<T> z = embed_all(model, train);
        Tensor<T> q = soft_assign(z, model.params().centroids);
        std::vector<double> freq(k, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) freq[j] += q[i * k + j];
        }
        bool reseeded = false;
        for (std::size_t j = 0; j < k; ++j) {
            if (freq[j] >= 1e-6 * static_cast<double>(n)) continue;
            // Farthest point from its nearest centroid becomes the new centroid j.
            const auto labels = hard_assign(q);
            std::size_t far = 0;
            double far_d = -1.0;
            const std::size_t d = z.dim(1);
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t t = 0; t < d; ++t) {
                    const double diff = z[i * d + t] - model.params().centroids[labels[i] * d + t];
                    s += diff * diff;
                }
                if (s > far_d) {
                    far_d = s;
                    far = i;
                }
            }
            std::copy_n(z.begin() + static_cast<std::ptrdiff_t>(far * d), d,
                        model.params().centroids.begin() + static_cast<std::ptrdiff_t>(j * d));
            result.warnings.push_back("cluster " + std::to_string(j) + " emptied; re-seeded to sample " + std::to_string(far));
            if (log) log("warning: " + result.warnings.back());
            ++result.reseeded_clusters;
            reseeded = true;
        }
        if (reseeded) q = soft_assign(z, model.params().centroids);
        target = target_distribution(q);
        const double kl = kl_divergence(target, q) / static_cast<double>(n);
        result.kl_curve.push_back({result.kl_curve.size(), epoch, step, kl});
        if (log) log("refresh " + std::to_string(result.kl_curve.size() - 1) + " kl " + detail::format_double(kl));
    };

    auto trainable = [&](ParamGroup g) {
        return g != ParamGroup::decoder || !cfg.freeze_decoder_in_phase2;
    };

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
        for (std::size_t start = 0, batch = 0; start < n; start += cfg.batch_size, ++batch) {
            if (step % interval == 0) refresh(epoch, step);
            const std::size_t end = std::min(n, start + cfg.batch_size);
            const T scale = static_cast<T>(1.0 / static_cast<double>(end - start));
            ModelParams<T> grads = model.params().zeros();
            double batch_loss = 0.0;
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t i = order[b];
                const Sample& s = train[i];
                // Eval-mode encoder, matching the pass that produced P.
                const auto pass = joint ? model.forward(detail::image_as<T>(s), false, no_dropout)
                                        : model.forward_encoder(detail::image_as<T>(s), false, no_dropout);
                const Tensor<T> z = pass.embedding.reshaped({1, pass.embedding.size()});
                const Tensor<T> p_row({1, k}, std::vector<T>(target.begin() + static_cast<std::ptrdiff_t>(i * k),
                                                             target.begin() + static_cast<std::ptrdiff_t>((i + 1) * k)));
                batch_loss += kl_divergence(p_row, soft_assign(z, model.params().centroids));
                KlGrad<T> g = kl_grad(z, model.params().centroids, p_row);
                for (auto& v : g.z) v *= scale;
                Tensor<T> g_logits;
                if (joint) {
                    const Tensor<T> m = detail::mask_as<T>(s);
                    batch_loss += cfg.gamma_seg * bce_loss(pass.probs, m);
                    g_logits = bce_with_logits_backward(pass.probs, m.reshaped(pass.probs.shape()));
                    for (auto& v : g_logits) v *= static_cast<T>(cfg.gamma_seg) * scale;
                }
                model.backward(pass, g_logits, g.z, grads);
                for (std::size_t t = 0; t < g.centroids.size(); ++t) grads.centroids[t] += scale * g.centroids[t];
            }
            if (!std::isfinite(batch_loss)) {
                throw NumericalError("non-finite clustering loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch) + ": " + detail::format_double(batch_loss));
            }
            auto [p, g] = detail::adam_lists(model.params(), grads, trainable);
            adam_step(p, g, adam);
            ++step;
        }
    }
    refresh(cfg.epochs + 1, step);
    return result;
}

struct ClusteringReport {
    ConfusionMatrix confusion;
    std::vector<std::size_t> label_mapping;
    double cluster_accuracy = 0.0;
    double unmatched_accuracy = 0.0;
    double kl = 0.0;
    std::vector<std::size_t> clusters;
};

/// Hard cluster labels from Q versus severity labels, permutation-matched.
inline ClusteringReport cluster_report(const Tensor<float>& q, const std::vector<Sample>& samples) {
    const std::size_t k = q.dim(1);
    std::vector<std::size_t> truth;
    for (const auto& s : samples) {
        if (!s.severity) throw ValidationError("evaluate_clustering: sample lacks a severity label");
        truth.push_back(static_cast<std::size_t>(*s.severity));
    }
    ClusteringReport r;
    r.clusters = hard_assign(q);
    r.confusion = confusion_matrix(r.clusters, truth, k);
    const auto match = match_clusters(r.confusion);
    r.label_mapping = match.mapping;
    r.cluster_accuracy = match.accuracy;
    r.unmatched_accuracy = unmatched_accuracy(r.confusion);
    r.kl = kl_divergence(target_distribution(q), q) / static_cast<double>(samples.size());
    return r;
}

template <typename T>
ClusteringReport evaluate_clustering(const YNet<T>& model, const std::vector<Sample>& samples) {
    if (!model.has_centroids()) throw ContractError("evaluate_clustering: model has no centroids");
    if (samples.empty()) throw ValidationError("evaluate_clustering: empty split");
    for (const auto& s : samples) {
        if (!s.severity) throw ValidationError("evaluate_clustering: sample lacks a severity label");
    }
    return cluster_report(soft_assign(embed_all(model, samples), model.params().centroids).template cast<float>(), samples);
}

/// Serializable evaluation summary (metrics.json).
struct MetricsReport {
    double iou_mean = 0.0;
    std::vector<EpochStats> per_epoch_losses;
    std::optional<ClusteringReport> clustering;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["iou_mean"] = iou_mean;
        j["per_epoch_losses"] = nlohmann::json::array();
        for (const auto& e : per_epoch_losses) {
            j["per_epoch_losses"].push_back(
                {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_iou", e.val_iou}});
        }
        if (clustering) {
            j["confusion"] = clustering->confusion;
            j["label_mapping"] = clustering->label_mapping;
            j["cluster_accuracy"] = clustering->cluster_accuracy;
            j["kl_final"] = clustering->kl;
        } else {
            j["confusion"] = nullptr;
            j["label_mapping"] = nullptr;
            j["cluster_accuracy"] = nullptr;
            j["kl_final"] = nullptr;
        }
        return j;
    }
};

inline std::string loss_curve_csv(const std::vector<EpochStats>& history) {
    std::string out = "epoch,train_loss,val_loss,val_iou\n";
    char line[160];
    for (const auto& e : history) {
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss, e.val_iou);
        out += line;
    }
    return out;
}

inline std::string kl_curve_csv(const std::vector<KlRecord>& curve) {
    std::string out = "refresh,epoch,step,kl\n";
    char line[160];
    for (const auto& r : curve) {
        std::snprintf(line, sizeof line, "%zu,%zu,%zu,%.9g\n", r.refresh, r.epoch, r.step, r.kl);
        out += line;
    }
    return out;
}

}  // namespace ynet
