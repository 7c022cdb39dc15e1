#pragma once

#include <algorithm>
#include <cmath>

#include "tensor.hpp"

namespace ynet {

enum class ResizeMode { nearest, bilinear };

/// Resizes [C,H,W] or [H,W] to S x S with half-pixel-centre sampling.
/// Nearest keeps the input alphabet; bilinear stays within [min, max].
template <typename T>
Tensor<T> resize(const Tensor<T>& image, std::size_t size, ResizeMode mode) {
    if (size < 1) throw ValidationError("resize target size must be >= 1");
    if (image.rank() != 2 && image.rank() != 3) throw ShapeError("resize expects [C,H,W] or [H,W], got " + to_string(image.shape()));
    const bool planar = image.rank() == 3;
    const std::size_t C = planar ? image.dim(0) : 1;
    const std::size_t H = image.dim(image.rank() - 2), W = image.dim(image.rank() - 1);
    Tensor<T> out(planar ? Shape{C, size, size} : Shape{size, size});
    const double sy = static_cast<double>(H) / static_cast<double>(size);
    const double sx = static_cast<double>(W) / static_cast<double>(size);

    auto src = [](std::size_t dst, double scale, std::size_t n) {
        return std::clamp((static_cast<double>(dst) + 0.5) * scale - 0.5, 0.0, static_cast<double>(n - 1));
    };
    for (std::size_t c = 0; c < C; ++c) {
        const T* in = image.data() + c * H * W;
        T* o = out.data() + c * size * size;
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                if (mode == ResizeMode::nearest) {
                    const auto iy = std::min(H - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) * sy));
                    const auto ix = std::min(W - 1, static_cast<std::size_t>((static_cast<double>(x) + 0.5) * sx));
                    o[y * size + x] = in[iy * W + ix];
                    continue;
                }
                const double fy = src(y, sy, H), fx = src(x, sx, W);
                const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
                const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                const double wy = fy - static_cast<double>(y0), wx = fx - static_cast<double>(x0);
                const double top = (1 - wx) * in[y0 * W + x0] + wx * in[y0 * W + x1];
                const double bot = (1 - wx) * in[y1 * W + x0] + wx * in[y1 * W + x1];
                const double lo = std::min({in[y0 * W + x0], in[y0 * W + x1], in[y1 * W + x0], in[y1 * W + x1]});
                const double hi = std::max({in[y0 * W + x0], in[y0 * W + x1], in[y1 * W + x0], in[y1 * W + x1]});
                o[y * size + x] = static_cast<T>(std::clamp((1 - wy) * top + wy * bot, lo, hi));
            }
        }
    }
    return out;
}

}  // namespace ynet
