#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "layers.hpp"
#include "tensor.hpp"

namespace ynet {

enum class Variant { ynet, unet };

inline const char* to_string(Variant v) { return v == Variant::ynet ? "ynet" : "unet"; }

inline Variant parse_variant(const std::string& s) {
    if (s == "ynet") return Variant::ynet;
    if (s == "unet") return Variant::unet;
    throw ValidationError("model.variant must be \"ynet\" or \"unet\", got \"" + s + "\"");
}

struct ModelConfig {
    std::size_t image_size = 64;
    std::size_t in_channels = 3;
    std::size_t base_channels = 8;
    std::size_t depth = 4;
    std::size_t embed_dim = 4;
    double dropout_rate = 0.5;
    Variant variant = Variant::ynet;

    std::size_t channels(std::size_t level) const { return base_channels << level; }
    std::size_t deepest_size() const { return image_size >> depth; }
    std::size_t flatten_length() const { return channels(depth) * deepest_size() * deepest_size(); }

    void validate() const {
        if (depth < 1) throw ValidationError("model.depth must be >= 1");
        if (base_channels < 1) throw ValidationError("model.base_channels must be >= 1");
        if (in_channels < 1) throw ValidationError("model.in_channels must be >= 1");
        if (embed_dim < 2) throw ValidationError("model.embed_dim must be >= 2");
        if (depth >= 31 || image_size == 0 || image_size % (std::size_t{1} << depth) != 0) {
            throw ValidationError("model.image_size " + std::to_string(image_size) + " is not divisible by 2^depth = 2^" +
                                  std::to_string(depth));
        }
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValidationError("model.dropout_rate must lie in [0,1)");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Parameter groups, used to freeze parts of the network during fine-tuning.
enum class ParamGroup { encoder, embedding, decoder, centroids };

template <typename T>
struct ConvBlock {
    LayerParams<T> conv1;
    LayerParams<T> conv2;
};

template <typename T>
struct UpStage {
    LayerParams<T> up;
    ConvBlock<T> block;
};

/// Every trainable tensor of the network. Gradients use the same structure,
/// so a gradient set is a ModelParams whose tensors hold derivatives.
template <typename T>
struct ModelParams {
    std::vector<ConvBlock<T>> encoder;  // depth + 1 blocks
    std::optional<LayerParams<T>> embed;   // dense(k), Y-Net only
    std::optional<LayerParams<T>> expand;  // dense back to the deepest map
    std::vector<UpStage<T>> decoder;    // stage j restores level depth-1-j
    LayerParams<T> head;
    Tensor<T> centroids;                // [k, k] once clusters are initialized

    /// Visits (name, group, tensor) in the canonical checkpoint order.
    template <typename F>
    void visit(F&& f) {
        visit_impl(*this, f);
    }
    template <typename F>
    void visit(F&& f) const {
        visit_impl(*this, f);
    }

    ModelParams zeros() const {
        ModelParams z = *this;
        z.visit([](const std::string&, ParamGroup, Tensor<T>& t) { t.fill(T{0}); });
        return z;
    }

    /// Element count of all layer weights and biases (centroids excluded).
    std::size_t layer_param_count() const {
        std::size_t n = 0;
        visit([&](const std::string&, ParamGroup g, const Tensor<T>& t) {
            if (g != ParamGroup::centroids) n += t.size();
        });
        return n;
    }

    std::vector<const LayerParams<T>*> layers() const {
        std::vector<const LayerParams<T>*> out;
        for (const auto& b : encoder) out.insert(out.end(), {&b.conv1, &b.conv2});
        if (embed) out.push_back(&*embed);
        if (expand) out.push_back(&*expand);
        for (const auto& s : decoder) out.insert(out.end(), {&s.up, &s.block.conv1, &s.block.conv2});
        out.push_back(&head);
        return out;
    }

private:
    template <typename Self, typename F>
    static void visit_impl(Self& self, F& f) {
        auto layer = [&](const std::string& name, ParamGroup g, auto& l) {
            f(name + ".weight", g, l.weights);
            f(name + ".bias", g, l.bias);
        };
        for (std::size_t i = 0; i < self.encoder.size(); ++i) {
            const std::string p = "enc.block" + std::to_string(i);
            layer(p + ".conv1", ParamGroup::encoder, self.encoder[i].conv1);
            layer(p + ".conv2", ParamGroup::encoder, self.encoder[i].conv2);
        }
        if (self.embed) layer("bottleneck.embed", ParamGroup::embedding, *self.embed);
        if (self.expand) layer("bottleneck.expand", ParamGroup::decoder, *self.expand);
        for (std::size_t j = 0; j < self.decoder.size(); ++j) {
            const std::string p = "dec.stage" + std::to_string(j);
            layer(p + ".up", ParamGroup::decoder, self.decoder[j].up);
            layer(p + ".conv1", ParamGroup::decoder, self.decoder[j].block.conv1);
            layer(p + ".conv2", ParamGroup::decoder, self.decoder[j].block.conv2);
        }
        layer("seg_head.conv", ParamGroup::decoder, self.head);
        if (!self.centroids.empty()) f(std::string("cluster.centroids"), ParamGroup::centroids, self.centroids);
    }
};

template <typename T>
struct BlockCache {
    Tensor<T> input, pre1, act1, pre2, output;
};

/// Activations recorded by one forward invocation; owned by the caller.
template <typename T>
struct ForwardPass {
    Tensor<T> image;
    std::vector<BlockCache<T>> encoder;
    std::vector<std::optional<DropoutMask<T>>> dropout;
    std::vector<PoolResult<T>> pools;
    Tensor<T> flat, embedding, expand_pre, decoder_input;
    std::vector<Tensor<T>> up_input;
    std::vector<BlockCache<T>> decoder;
    Tensor<T> head_input, logits, probs;
    bool has_decoder = false;

    bool valid() const { return !encoder.empty(); }
};

/// Closed-form parameter count of the autoencoder for a configuration.
inline std::size_t analytic_param_count(const ModelConfig& c) {
    c.validate();
    auto conv3 = [](std::size_t in, std::size_t out) { return 9 * in * out + out; };
    std::size_t n = 0;
    for (std::size_t i = 0; i <= c.depth; ++i) {
        const std::size_t in = i == 0 ? c.in_channels : c.channels(i - 1);
        n += conv3(in, c.channels(i)) + conv3(c.channels(i), c.channels(i));
    }
    if (c.variant == Variant::ynet) {
        const std::size_t f = c.flatten_length();
        n += (f * c.embed_dim + c.embed_dim) + (c.embed_dim * f + f);
    }
    for (std::size_t l = 0; l < c.depth; ++l) {
        n += 4 * c.channels(l + 1) * c.channels(l) + c.channels(l);
        n += conv3(2 * c.channels(l), c.channels(l)) + conv3(c.channels(l), c.channels(l));
    }
    return n + c.channels(0) + 1;
}

/// Encoder with channel doubling, optional dense-k bottleneck on the
/// segmentation path, decoder with skip concatenation, 1x1 sigmoid head.
template <typename T>
class YNet {
public:
    YNet() = default;

    YNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
        config_.validate();
        Rng rng = Rng(seed).split(0x1417);
        const auto& c = config_;
        for (std::size_t i = 0; i <= c.depth; ++i) {
            const std::size_t in = i == 0 ? c.in_channels : c.channels(i - 1);
            params_.encoder.push_back({make_layer<T>(LayerKind::conv3x3, in, c.channels(i), rng),
                                       make_layer<T>(LayerKind::conv3x3, c.channels(i), c.channels(i), rng)});
        }
        if (c.variant == Variant::ynet) {
            params_.embed = make_layer<T>(LayerKind::dense, c.flatten_length(), c.embed_dim, rng);
            params_.expand = make_layer<T>(LayerKind::dense, c.embed_dim, c.flatten_length(), rng);
        }
        for (std::size_t j = 0; j < c.depth; ++j) {
            const std::size_t l = c.depth - 1 - j;
            params_.decoder.push_back(
                {make_layer<T>(LayerKind::tconv2x2, c.channels(l + 1), c.channels(l), rng),
                 {make_layer<T>(LayerKind::conv3x3, 2 * c.channels(l), c.channels(l), rng),
                  make_layer<T>(LayerKind::conv3x3, c.channels(l), c.channels(l), rng)}});
        }
        params_.head = make_layer<T>(LayerKind::conv1x1, c.channels(0), 1, rng);
    }

    const ModelConfig& config() const noexcept { return config_; }
    ModelParams<T>& params() noexcept { return params_; }
    const ModelParams<T>& params() const noexcept { return params_; }
    bool has_bottleneck() const noexcept { return params_.embed.has_value(); }
    bool has_centroids() const noexcept { return !params_.centroids.empty(); }
    std::size_t param_count() const { return count_params(params_.layers()); }

    /// Full forward pass; `probs` is [1,S,S] in (0,1).
    ForwardPass<T> forward(const Tensor<T>& image, bool training, Rng& rng) const {
        ForwardPass<T> pass = encode(image, training, rng);
        const auto& c = config_;
        Tensor<T> x;
        if (has_bottleneck()) {
            pass.expand_pre = dense_forward(pass.embedding, *params_.expand);
            pass.decoder_input = relu(pass.expand_pre).reshaped(pass.encoder.back().output.shape());
            x = pass.decoder_input;
        } else {
            x = pass.encoder.back().output;
        }
        for (std::size_t j = 0; j < c.depth; ++j) {
            const std::size_t l = c.depth - 1 - j;
            pass.up_input.push_back(x);
            Tensor<T> up = tconv2x2_forward(x, params_.decoder[j].up);
            auto cat = concat_channels(pass.encoder[l].output, up);
            pass.decoder.push_back(block_forward(std::move(cat), params_.decoder[j].block));
            x = pass.decoder.back().output;
        }
        pass.head_input = x;
        pass.logits = conv2d_forward(x, params_.head);
        pass.probs = sigmoid(pass.logits);
        pass.has_decoder = true;
        return pass;
    }

    Tensor<T> forward_seg(const Tensor<T>& image, bool training, Rng& rng) const {
        return forward(image, training, rng).probs;
    }

    /// Encoder and dense(k) only; `embedding` is the pre-activation output.
    ForwardPass<T> forward_encoder(const Tensor<T>& image, bool training, Rng& rng) const {
        if (!has_bottleneck()) throw ContractError("model has no embedding bottleneck (unet variant)");
        return encode(image, training, rng);
    }

    Tensor<T> forward_embed(const Tensor<T>& image) const {
        Rng unused(0);
        return forward_encoder(image, false, unused).embedding;
    }

    /// Gradient of the mean BCE between `pass.probs` and a binary target.
    ModelParams<T> backward_seg(const ForwardPass<T>& pass, const Tensor<T>& target) const {
        if (!pass.has_decoder) throw ContractError("backward_seg: missing forward cache");
        require_shape(target.size() == pass.probs.size(), "backward_seg: target shape", target.shape(),
                      pass.probs.shape());
        ModelParams<T> grads = params_.zeros();
        backward(pass, bce_with_logits_backward(pass.probs, target.reshaped(pass.probs.shape())), Tensor<T>{}, grads);
        return grads;
    }

    /// Gradient of a loss whose derivative with respect to the embedding is `grad_embedding`.
    ModelParams<T> backward_embed(const ForwardPass<T>& pass, const Tensor<T>& grad_embedding) const {
        ModelParams<T> grads = params_.zeros();
        backward(pass, Tensor<T>{}, grad_embedding, grads);
        return grads;
    }

    /// Accumulates into `grads`; either upstream gradient may be empty.
    void backward(const ForwardPass<T>& pass, const Tensor<T>& grad_logits, const Tensor<T>& grad_embedding,
                  ModelParams<T>& grads) const {
        if (!pass.valid()) throw ContractError("backward: missing forward cache");
        const auto& c = config_;
        const std::size_t L = c.depth;
        std::vector<Tensor<T>> skip_grads(L);
        Tensor<T> g_deep;

        if (!grad_logits.empty()) {
            if (!pass.has_decoder) throw ContractError("backward: segmentation gradient without decoder cache");
            auto gh = conv2d_backward(grad_logits, pass.head_input, params_.head);
            accumulate(grads.head, gh);
            Tensor<T> g = std::move(gh.input);
            for (std::size_t jj = L; jj-- > 0;) {
                const std::size_t l = L - 1 - jj;
                Tensor<T> g_cat = block_backward(g, pass.decoder[jj], params_.decoder[jj].block, grads.decoder[jj].block);
                auto [g_skip, g_up] = split_channels(g_cat, c.channels(l));
                skip_grads[l] = std::move(g_skip);
                auto gu = tconv2x2_backward(g_up, pass.up_input[jj], params_.decoder[jj].up);
                accumulate(grads.decoder[jj].up, gu);
                g = std::move(gu.input);
            }
            if (has_bottleneck()) {
                Tensor<T> g_pre = relu_backward(g.reshaped(pass.expand_pre.shape()), pass.expand_pre);
                auto ge = dense_backward(g_pre, pass.embedding, *params_.expand);
                accumulate(*grads.expand, ge);
                add_into(g_deep, embed_backward(pass, ge.input, grads));
            } else {
                g_deep = std::move(g);
            }
        }
        if (!grad_embedding.empty()) {
            if (!has_bottleneck()) throw ContractError("backward: model has no embedding");
            require_shape(grad_embedding.size() == c.embed_dim, "backward: embedding gradient", grad_embedding.shape(),
                          Shape{c.embed_dim});
            add_into(g_deep, embed_backward(pass, grad_embedding, grads));
        }
        if (g_deep.empty()) return;

        Tensor<T> g = std::move(g_deep);
        for (std::size_t i = L + 1; i-- > 0;) {
            if (i < L) {
                Tensor<T> from_pool = maxpool2_backward(g, pass.pools[i]);
                if (!skip_grads[i].empty()) add_into(from_pool, skip_grads[i]);
                g = std::move(from_pool);
            }
            if (pass.dropout[i]) g = dropout_backward(g, *pass.dropout[i]);
            g = block_backward(g, pass.encoder[i], params_.encoder[i], grads.encoder[i], i > 0);
        }
    }

private:
    static void accumulate(LayerParams<T>& into, const LayerGrads<T>& g) {
        add_into(into.weights, g.weights);
        add_into(into.bias, g.bias);
    }

    static void add_into(Tensor<T>& into, const Tensor<T>& g) {
        if (into.empty()) {
            into = g;
            return;
        }
        for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
    }

    ForwardPass<T> encode(const Tensor<T>& image, bool training, Rng& rng) const {
        const auto& c = config_;
        require_shape(image.shape() == Shape{c.in_channels, c.image_size, c.image_size}, "image shape does not match model",
                      image.shape(), Shape{c.in_channels, c.image_size, c.image_size});
        ForwardPass<T> pass;
        pass.image = image;
        Tensor<T> x = image;
        for (std::size_t i = 0; i <= c.depth; ++i) {
            BlockCache<T> b = block_forward(std::move(x), params_.encoder[i]);
            std::optional<DropoutMask<T>> mask;
            if (i + 2 > c.depth && c.dropout_rate > 0.0) {
                auto [out, m] = dropout_apply(b.output, c.dropout_rate, training, rng);
                b.output = std::move(out);
                mask = std::move(m);
            }
            pass.dropout.push_back(std::move(mask));
            if (i < c.depth) {
                pass.pools.push_back(maxpool2(b.output));
                x = pass.pools.back().output;
            }
            pass.encoder.push_back(std::move(b));
        }
        if (has_bottleneck()) {
            pass.flat = pass.encoder.back().output.reshaped({c.flatten_length()});
            pass.embedding = dense_forward(pass.flat, *params_.embed);
        }
        return pass;
    }

    Tensor<T> embed_backward(const ForwardPass<T>& pass, const Tensor<T>& g_embedding, ModelParams<T>& grads) const {
        auto gz = dense_backward(g_embedding.reshaped({config_.embed_dim}), pass.flat, *params_.embed);
        accumulate(*grads.embed, gz);
        return std::move(gz.input).reshaped(pass.encoder.back().output.shape());
    }

    static BlockCache<T> block_forward(Tensor<T> input, const ConvBlock<T>& p) {
        BlockCache<T> b;
        b.input = std::move(input);
        b.pre1 = conv2d_forward(b.input, p.conv1);
        b.act1 = relu(b.pre1);
        b.pre2 = conv2d_forward(b.act1, p.conv2);
        b.output = relu(b.pre2);
        return b;
    }

    static Tensor<T> block_backward(const Tensor<T>& g_out, const BlockCache<T>& b, const ConvBlock<T>& p,
                                    ConvBlock<T>& grads, bool need_input_grad = true) {
        auto g2 = conv2d_backward(relu_backward(g_out, b.pre2), b.act1, p.conv2);
        accumulate(grads.conv2, g2);
        auto g1 = conv2d_backward(relu_backward(g2.input, b.pre1), b.input, p.conv1, need_input_grad);
        accumulate(grads.conv1, g1);
        return std::move(g1.input);
    }

    ModelConfig config_;
    ModelParams<T> params_;
};

template <typename T>
YNet<T> build_ynet(ModelConfig config, std::uint64_t seed) {
    config.variant = Variant::ynet;
    return YNet<T>(config, seed);
}

template <typename T>
YNet<T> build_unet_baseline(ModelConfig config, std::uint64_t seed) {
    config.variant = Variant::unet;
    return YNet<T>(config, seed);
}

}  // namespace ynet
