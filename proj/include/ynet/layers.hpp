#pragma once

// Layer primitives with explicit forward/backward pairs. Every function is
// pure: callers own the caches (the forward inputs) and pass them back in.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace ynet {

enum class LayerKind { conv3x3, conv1x1, tconv2x2, dense };

inline const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv3x3: return "conv3x3";
        case LayerKind::conv1x1: return "conv1x1";
        case LayerKind::tconv2x2: return "tconv2x2";
        case LayerKind::dense: return "dense";
    }
    return "?";
}

template <typename T>
struct LayerParams {
    LayerKind kind{LayerKind::conv3x3};
    Tensor<T> weights;
    Tensor<T> bias;

    std::size_t out_units() const { return kind == LayerKind::tconv2x2 ? weights.dim(1) : weights.dim(0); }
    std::size_t in_units() const { return kind == LayerKind::tconv2x2 ? weights.dim(0) : weights.dim(1); }
    std::size_t param_count() const { return weights.size() + bias.size(); }
};

template <typename T>
struct LayerGrads {
    Tensor<T> input;
    Tensor<T> weights;
    Tensor<T> bias;
};

/// Zero-bias, He-uniform weights (bound sqrt(6 / fan_in)).
template <typename T>
LayerParams<T> make_layer(LayerKind kind, std::size_t in, std::size_t out, Rng& rng) {
    LayerParams<T> p;
    p.kind = kind;
    std::size_t fan_in = in;
    switch (kind) {
        case LayerKind::conv3x3: p.weights = Tensor<T>({out, in, 3, 3}); fan_in = in * 9; break;
        case LayerKind::conv1x1: p.weights = Tensor<T>({out, in, 1, 1}); break;
        case LayerKind::tconv2x2: p.weights = Tensor<T>({in, out, 2, 2}); break;
        case LayerKind::dense: p.weights = Tensor<T>({out, in}); break;
    }
    p.bias = Tensor<T>({out});
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& w : p.weights) w = static_cast<T>(rng.uniform(-bound, bound));
    return p;
}

namespace detail {

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    std::array<T, 8> acc{};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    }
    T s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline std::size_t kernel_size(LayerKind kind) {
    if (kind == LayerKind::conv3x3) return 3;
    if (kind == LayerKind::conv1x1) return 1;
    throw ContractError(std::string("not a convolution: ") + to_string(kind));
}

// Valid output range [lo, hi) for an output index whose input offset is
// out + k - pad, with input extent n.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t n, std::size_t k, std::size_t pad) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n), static_cast<std::ptrdiff_t>(n) - off);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

template <typename T>
void check_conv(const Tensor<T>& input, const LayerParams<T>& p) {
    if (input.rank() != 3) throw ShapeError("convolution input must be [C,H,W], got " + to_string(input.shape()));
    const std::size_t k = kernel_size(p.kind);
    if (p.weights.rank() != 4 || p.weights.dim(2) != k || p.weights.dim(3) != k) {
        throw ShapeError(std::string("bad ") + to_string(p.kind) + " kernel shape " + to_string(p.weights.shape()));
    }
    require_shape(p.weights.dim(1) == input.dim(0), "convolution input channels do not match kernel in_ch",
                  input.shape(), p.weights.shape());
}

}  // namespace detail

/// Same-padded stride-1 convolution (3x3 or 1x1): [C,H,W] -> [O,H,W].
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const LayerParams<T>& p) {
    detail::check_conv(input, p);
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const std::size_t O = p.weights.dim(0), K = p.weights.dim(2), pad = K / 2;
    Tensor<T> out({O, H, W});
    for (std::size_t o = 0; o < O; ++o) {
        T* out_plane = out.data() + o * H * W;
        std::fill(out_plane, out_plane + H * W, p.bias[o]);
        for (std::size_t c = 0; c < C; ++c) {
            const T* in_plane = input.data() + c * H * W;
            const T* w = p.weights.data() + (o * C + c) * K * K;
            for (std::size_t ky = 0; ky < K; ++ky) {
                const auto [y0, y1] = detail::valid_range(H, ky, pad);
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const T wv = w[ky * K + kx];
                    const auto [x0, x1] = detail::valid_range(W, kx, pad);
                    for (std::size_t y = y0; y < y1; ++y) {
                        const T* in_row = in_plane + (y + ky - pad) * W;
                        T* out_row = out_plane + y * W;
                        for (std::size_t x = x0; x < x1; ++x) out_row[x] += wv * in_row[x + kx - pad];
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
LayerGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& cached_input, const LayerParams<T>& p,
                              bool need_input_grad = true) {
    if (cached_input.empty()) throw ContractError("conv2d_backward: missing forward cache");
    detail::check_conv(cached_input, p);
    const std::size_t C = cached_input.dim(0), H = cached_input.dim(1), W = cached_input.dim(2);
    const std::size_t O = p.weights.dim(0), K = p.weights.dim(2), pad = K / 2;
    require_shape(grad_out.shape() == Shape{O, H, W}, "conv2d_backward: grad_out shape", grad_out.shape(),
                  Shape{O, H, W});
    LayerGrads<T> g{need_input_grad ? Tensor<T>({C, H, W}) : Tensor<T>{}, zeros_like(p.weights), zeros_like(p.bias)};
    for (std::size_t o = 0; o < O; ++o) {
        const T* go_plane = grad_out.data() + o * H * W;
        T s{0};
        for (std::size_t i = 0; i < H * W; ++i) s += go_plane[i];
        g.bias[o] = s;
        for (std::size_t c = 0; c < C; ++c) {
            const T* in_plane = cached_input.data() + c * H * W;
            const T* w = p.weights.data() + (o * C + c) * K * K;
            T* gw = g.weights.data() + (o * C + c) * K * K;
            T* gi_plane = need_input_grad ? g.input.data() + c * H * W : nullptr;
            for (std::size_t ky = 0; ky < K; ++ky) {
                const auto [y0, y1] = detail::valid_range(H, ky, pad);
                for (std::size_t kx = 0; kx < K; ++kx) {
                    const auto [x0, x1] = detail::valid_range(W, kx, pad);
                    const T wv = w[ky * K + kx];
                    T acc{0};
                    for (std::size_t y = y0; y < y1; ++y) {
                        const std::size_t in_off = (y + ky - pad) * W + x0 + kx - pad;
                        const T* go_row = go_plane + y * W + x0;
                        acc += detail::dot(go_row, in_plane + in_off, x1 - x0);
                        if (gi_plane) detail::axpy(wv, go_row, gi_plane + in_off, x1 - x0);
                    }
                    gw[ky * K + kx] = acc;
                }
            }
        }
    }
    return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
    Tensor<T> out = input;
    for (auto& v : out) v = v < T{0} ? T{0} : v;  // NaN passes through
    return out;
}

/// Passes gradient where the forward input was strictly positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& cached_input) {
    require_shape(grad_out.shape() == cached_input.shape(), "relu_backward", grad_out.shape(), cached_input.shape());
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(cached_input[i] > T{0})) g[i] = T{0};
    }
    return g;
}

template <typename T>
struct PoolResult {
    Tensor<T> output;
    std::vector<std::uint32_t> argmax;  // flat input index per output cell
    Shape input_shape;
};

template <typename T>
PoolResult<T> maxpool2(const Tensor<T>& input) {
    if (input.rank() != 3) throw ShapeError("maxpool2 input must be [C,H,W], got " + to_string(input.shape()));
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
    if (H % 2 || W % 2) throw ShapeError("maxpool2 requires even H and W, got " + to_string(input.shape()));
    PoolResult<T> r{Tensor<T>({C, H / 2, W / 2}), {}, input.shape()};
    r.argmax.resize(r.output.size());
    std::size_t k = 0;
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H / 2; ++y) {
            for (std::size_t x = 0; x < W / 2; ++x, ++k) {
                std::size_t best = (c * H + 2 * y) * W + 2 * x;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const std::size_t idx = (c * H + 2 * y + dy) * W + 2 * x + dx;
                        if (input[idx] > input[best]) best = idx;
                    }
                }
                r.output[k] = input[best];
                r.argmax[k] = static_cast<std::uint32_t>(best);
            }
        }
    }
    return r;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& grad_out, const PoolResult<T>& cache) {
    if (cache.argmax.empty()) throw ContractError("maxpool2_backward: missing forward cache");
    require_shape(grad_out.shape() == cache.output.shape(), "maxpool2_backward", grad_out.shape(),
                  cache.output.shape());
    Tensor<T> g(cache.input_shape);
    for (std::size_t k = 0; k < grad_out.size(); ++k) g[cache.argmax[k]] += grad_out[k];
    return g;
}

namespace detail {
template <typename T>
void check_tconv(const Tensor<T>& input, const LayerParams<T>& p) {
    if (input.rank() != 3) throw ShapeError("tconv2x2 input must be [C,H,W], got " + to_string(input.shape()));
    if (input.dim(0) % 2) throw ShapeError("tconv2x2 requires an even channel count, got " + to_string(input.shape()));
    if (p.kind != LayerKind::tconv2x2 || p.weights.rank() != 4 || p.weights.dim(2) != 2 || p.weights.dim(3) != 2) {
        throw ShapeError("bad tconv2x2 kernel shape " + to_string(p.weights.shape()));
    }
    require_shape(p.weights.dim(0) == input.dim(0) && p.weights.dim(1) * 2 == input.dim(0),
                  "tconv2x2 kernel must map C to C/2 channels", input.shape(), p.weights.shape());
}
}  // namespace detail

/// Stride-2 2x2 transposed convolution: [C,H,W] -> [C/2,2H,2W].
template <typename T>
Tensor<T> tconv2x2_forward(const Tensor<T>& input, const LayerParams<T>& p) {
    detail::check_tconv(input, p);
    const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2), O = p.weights.dim(1);
    Tensor<T> out({O, 2 * H, 2 * W});
    std::vector<T> tmp(H * W);
    for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t d = 0; d < 4; ++d) {
            const std::size_t dy = d / 2, dx = d % 2;
            std::fill(tmp.begin(), tmp.end(), p.bias[o]);
            for (std::size_t c = 0; c < C; ++c) {
                detail::axpy(p.weights[((c * O + o) * 2 + dy) * 2 + dx], input.data() + c * H * W, tmp.data(), H * W);
            }
            for (std::size_t y = 0; y < H; ++y) {
                for (std::size_t x = 0; x < W; ++x) out.at(o, 2 * y + dy, 2 * x + dx) = tmp[y * W + x];
            }
        }
    }
    return out;
}

template <typename T>
LayerGrads<T> tconv2x2_backward(const Tensor<T>& grad_out, const Tensor<T>& cached_input, const LayerParams<T>& p) {
    if (cached_input.empty()) throw ContractError("tconv2x2_backward: missing forward cache");
    detail::check_tconv(cached_input, p);
    const std::size_t C = cached_input.dim(0), H = cached_input.dim(1), W = cached_input.dim(2), O = p.weights.dim(1);
    require_shape(grad_out.shape() == Shape{O, 2 * H, 2 * W}, "tconv2x2_backward: grad_out shape", grad_out.shape(),
                  Shape{O, 2 * H, 2 * W});
    LayerGrads<T> g{Tensor<T>(cached_input.shape()), zeros_like(p.weights), zeros_like(p.bias)};
    std::vector<T> tmp(H * W);
    for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t d = 0; d < 4; ++d) {
            const std::size_t dy = d / 2, dx = d % 2;
            for (std::size_t y = 0; y < H; ++y) {
                for (std::size_t x = 0; x < W; ++x) tmp[y * W + x] = grad_out.at(o, 2 * y + dy, 2 * x + dx);
            }
            T s{0};
            for (auto v : tmp) s += v;
            g.bias[o] += s;
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t wi = ((c * O + o) * 2 + dy) * 2 + dx;
                g.weights[wi] = detail::dot(tmp.data(), cached_input.data() + c * H * W, H * W);
                detail::axpy(p.weights[wi], tmp.data(), g.input.data() + c * H * W, H * W);
            }
        }
    }
    return g;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const LayerParams<T>& p) {
    if (p.kind != LayerKind::dense || p.weights.rank() != 2) {
        throw ShapeError("bad dense weight shape " + to_string(p.weights.shape()));
    }
    require_shape(input.size() == p.weights.dim(1), "dense input length does not match in_units", input.shape(),
                  p.weights.shape());
    const std::size_t N = p.weights.dim(0), M = p.weights.dim(1);
    Tensor<T> out({N});
    for (std::size_t i = 0; i < N; ++i) out[i] = p.bias[i] + detail::dot(p.weights.data() + i * M, input.data(), M);
    return out;
}

template <typename T>
LayerGrads<T> dense_backward(const Tensor<T>& grad_out, const Tensor<T>& cached_input, const LayerParams<T>& p) {
    if (cached_input.empty()) throw ContractError("dense_backward: missing forward cache");
    const std::size_t N = p.weights.dim(0), M = p.weights.dim(1);
    require_shape(grad_out.size() == N && cached_input.size() == M, "dense_backward", grad_out.shape(),
                  p.weights.shape());
    LayerGrads<T> g{Tensor<T>(cached_input.shape()), zeros_like(p.weights), grad_out.reshaped({N})};
    for (std::size_t i = 0; i < N; ++i) {
        const T go = grad_out[i];
        detail::axpy(go, cached_input.data(), g.weights.data() + i * M, M);
        detail::axpy(go, p.weights.data() + i * M, g.input.data(), M);
    }
    return g;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
        throw ShapeError("concat_channels spatial mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    std::vector<T> data;
    data.reserve(a.size() + b.size());
    data.insert(data.end(), a.begin(), a.end());
    data.insert(data.end(), b.begin(), b.end());
    return Tensor<T>({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(data));
}

/// Inverse of concat_channels: the first `first_channels` channels, then the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t first_channels) {
    if (t.rank() != 3 || first_channels == 0 || first_channels >= t.dim(0)) {
        throw ShapeError("split_channels: cannot split " + to_string(t.shape()) + " at " +
                         std::to_string(first_channels));
    }
    const std::size_t plane = t.dim(1) * t.dim(2);
    const auto mid = t.begin() + static_cast<std::ptrdiff_t>(first_channels * plane);
    return {Tensor<T>({first_channels, t.dim(1), t.dim(2)}, std::vector<T>(t.begin(), mid)),
            Tensor<T>({t.dim(0) - first_channels, t.dim(1), t.dim(2)}, std::vector<T>(mid, t.end()))};
}

template <typename T>
T sigmoid(T x) {
    if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
    const T e = std::exp(x);
    return e / (T{1} + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
    Tensor<T> out = input;
    for (auto& v : out) v = sigmoid(v);
    return out;
}

inline constexpr double kBceEpsilon = 1e-7;

template <typename T>
void check_binary_target(const Tensor<T>& target) {
    for (auto t : target) {
        if (t != T{0} && t != T{1}) throw ValidationError("bce target must be binary, found " + std::to_string(t));
    }
}

/// Mean binary cross-entropy on probabilities clamped to [eps, 1 - eps].
template <typename T>
double bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    require_shape(pred.size() == target.size(), "bce_loss", pred.shape(), target.shape());
    check_binary_target(target);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = std::clamp(static_cast<double>(pred[i]), kBceEpsilon, 1.0 - kBceEpsilon);
        sum += target[i] != T{0} ? std::log(p) : std::log(1.0 - p);
    }
    return -sum / static_cast<double>(pred.size());
}

/// Gradient of bce_loss(sigmoid(z), t) with respect to the logits z:
/// (p - t) / N where p lies inside the clamp band, zero where the clamp is active.
template <typename T>
Tensor<T> bce_with_logits_backward(const Tensor<T>& pred, const Tensor<T>& target) {
    require_shape(pred.size() == target.size(), "bce_with_logits_backward", pred.shape(), target.shape());
    check_binary_target(target);
    Tensor<T> g(pred.shape());
    const T n = static_cast<T>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i];
        if (p > kBceEpsilon && p < 1.0 - kBceEpsilon) g[i] = (pred[i] - target[i]) / n;
    }
    return g;
}

template <typename T>
struct DropoutMask {
    double rate{0.0};
    Tensor<T> mask;
    bool training{false};
};

template <typename T>
std::pair<Tensor<T>, DropoutMask<T>> dropout_apply(const Tensor<T>& input, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout rate must lie in [0,1), got " + std::to_string(rate));
    DropoutMask<T> m{rate, Tensor<T>(input.shape(), T{1}), training};
    if (!training || rate == 0.0) return {input, std::move(m)};
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> out = input;
    for (std::size_t i = 0; i < out.size(); ++i) {
        m.mask[i] = rng.uniform() < rate ? T{0} : keep_scale;
        out[i] *= m.mask[i];
    }
    return {std::move(out), std::move(m)};
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const DropoutMask<T>& m) {
    if (m.mask.empty()) throw ContractError("dropout_backward: missing forward cache");
    require_shape(grad_out.shape() == m.mask.shape(), "dropout_backward", grad_out.shape(), m.mask.shape());
    Tensor<T> g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= m.mask[i];
    return g;
}

template <typename T>
std::size_t count_params(const std::vector<const LayerParams<T>*>& layers) {
    std::size_t n = 0;
    for (const auto* l : layers) n += l->param_count();
    return n;
}

}  // namespace ynet
