#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "ynet/layers.hpp"

using namespace ynet;
using ynet::testing::check_gradient;
using ynet::testing::project;
using ynet::testing::random_tensor;

namespace {

LayerParams<float> conv_params(std::size_t out, std::size_t in, std::vector<float> w, std::vector<float> b) {
    return {LayerKind::conv3x3, Tensor<float>({out, in, 3, 3}, std::move(w)), Tensor<float>({out}, std::move(b))};
}

Tensor<float> grid3() { return Tensor<float>({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}); }

std::vector<float> identity_kernel() { return {0, 0, 0, 0, 1, 0, 0, 0, 0}; }

}  // namespace

TEST(Conv2d, ZeroInputGivesBias) {
    Rng rng(3);
    auto p = make_layer<float>(LayerKind::conv3x3, 1, 2, rng);
    p.bias = Tensor<float>({2}, {0.5f, -1.5f});
    auto out = conv2d_forward(Tensor<float>({1, 3, 3}), p);
    for (std::size_t i = 0; i < 9; ++i) {
        EXPECT_EQ(out[i], 0.5f);
        EXPECT_EQ(out[9 + i], -1.5f);
    }
}

TEST(Conv2d, IdentityKernel) {
    auto p = conv_params(1, 1, identity_kernel(), {0});
    EXPECT_EQ(conv2d_forward(grid3(), p), grid3());
}

TEST(Conv2d, AllOnesKernelHandSums) {
    auto p = conv_params(1, 1, std::vector<float>(9, 1.0f), {0});
    auto out = conv2d_forward(grid3(), p);
    EXPECT_FLOAT_EQ(out.at(0, 1, 1), 45.0f);
    EXPECT_FLOAT_EQ(out.at(0, 0, 0), 12.0f);
    EXPECT_FLOAT_EQ(out.at(0, 2, 2), 5 + 6 + 8 + 9);
}

TEST(Conv2d, ChannelMismatchNamesBothShapes) {
    Rng rng(1);
    auto p = make_layer<float>(LayerKind::conv3x3, 3, 4, rng);
    try {
        conv2d_forward(Tensor<float>({2, 4, 4}), p);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 4, 4]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4, 3, 3, 3]"), std::string::npos) << msg;
    }
}

TEST(Conv2d, BackwardZeroUpstream) {
    Rng rng(2);
    auto p = make_layer<float>(LayerKind::conv3x3, 2, 3, rng);
    auto x = random_tensor<float>({2, 4, 4}, rng);
    auto g = conv2d_backward(Tensor<float>({3, 4, 4}), x, p);
    for (auto v : g.input) EXPECT_EQ(v, 0.0f);
    for (auto v : g.weights) EXPECT_EQ(v, 0.0f);
    for (auto v : g.bias) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2d, BackwardIdentityKernelPassesGradient) {
    auto p = conv_params(1, 1, identity_kernel(), {0});
    Rng rng(4);
    auto go = random_tensor<float>({1, 3, 3}, rng);
    EXPECT_EQ(conv2d_backward(go, grid3(), p).input, go);
}

TEST(Conv2d, BackwardMissingCache) {
    Rng rng(2);
    auto p = make_layer<float>(LayerKind::conv3x3, 1, 1, rng);
    EXPECT_THROW(conv2d_backward(Tensor<float>({1, 2, 2}), Tensor<float>{}, p), ContractError);
}

template <typename T>
class GradientCheck : public ::testing::Test {
protected:
    // 32-bit: step 1e-3, tolerance 1e-2; 64-bit check mode: step 1e-6, tolerance 1e-5.
    static constexpr bool wide = std::is_same_v<T, double>;
    static constexpr double step = wide ? 1e-6 : 1e-3;
    static constexpr double tol = wide ? 1e-5 : 1e-2;
    static constexpr double floor = wide ? 1e-6 : 1e-2;
};
using Scalars = ::testing::Types<float, double>;
TYPED_TEST_SUITE(GradientCheck, Scalars);

TYPED_TEST(GradientCheck, Conv3x3) {
    using T = TypeParam;
    Rng rng(11);
    auto x = random_tensor<T>({2, 4, 4}, rng);
    auto p = make_layer<T>(LayerKind::conv3x3, 2, 3, rng);
    for (auto& b : p.bias) b = static_cast<T>(rng.uniform(-1, 1));
    auto r = random_tensor<T>({3, 4, 4}, rng);
    auto g = conv2d_backward(r, x, p);
    auto f = [&] { return project(conv2d_forward(x, p), r); };
    for (auto rep : {check_gradient(x, g.input, f, this->step, this->floor, "input"),
                     check_gradient(p.weights, g.weights, f, this->step, this->floor, "weights"),
                     check_gradient(p.bias, g.bias, f, this->step, this->floor, "bias")}) {
        EXPECT_LT(rep.max_rel_error, this->tol) << rep.worst;
    }
}

TYPED_TEST(GradientCheck, Conv1x1) {
    using T = TypeParam;
    Rng rng(12);
    auto x = random_tensor<T>({3, 4, 4}, rng);
    auto p = make_layer<T>(LayerKind::conv1x1, 3, 2, rng);
    auto r = random_tensor<T>({2, 4, 4}, rng);
    auto g = conv2d_backward(r, x, p);
    auto f = [&] { return project(conv2d_forward(x, p), r); };
    EXPECT_LT(check_gradient(x, g.input, f, this->step, this->floor, "input").max_rel_error, this->tol);
    EXPECT_LT(check_gradient(p.weights, g.weights, f, this->step, this->floor, "w").max_rel_error, this->tol);
}

TYPED_TEST(GradientCheck, Relu) {
    using T = TypeParam;
    Rng rng(13);
    auto x = random_tensor<T>({2, 3, 3}, rng);
    for (auto& v : x) {
        if (std::abs(v) < 0.05) v = static_cast<T>(0.3);  // stay away from the kink
    }
    auto r = random_tensor<T>({2, 3, 3}, rng);
    auto g = relu_backward(r, x);
    auto rep = check_gradient(x, g, [&] { return project(relu(x), r); }, this->step, this->floor, "x");
    EXPECT_LT(rep.max_rel_error, this->tol) << rep.worst;
}

TYPED_TEST(GradientCheck, MaxPool) {
    using T = TypeParam;
    Rng rng(14);
    auto x = random_tensor<T>({2, 4, 4}, rng);
    auto r = random_tensor<T>({2, 2, 2}, rng);
    auto g = maxpool2_backward(r, maxpool2(x));
    auto rep = check_gradient(x, g, [&] { return project(maxpool2(x).output, r); }, this->step, this->floor, "x");
    EXPECT_LT(rep.max_rel_error, this->tol) << rep.worst;
}

TYPED_TEST(GradientCheck, TransposedConv) {
    using T = TypeParam;
    Rng rng(15);
    auto x = random_tensor<T>({4, 3, 3}, rng);
    auto p = make_layer<T>(LayerKind::tconv2x2, 4, 2, rng);
    for (auto& b : p.bias) b = static_cast<T>(rng.uniform(-1, 1));
    auto r = random_tensor<T>({2, 6, 6}, rng);
    auto g = tconv2x2_backward(r, x, p);
    auto f = [&] { return project(tconv2x2_forward(x, p), r); };
    for (auto rep : {check_gradient(x, g.input, f, this->step, this->floor, "input"),
                     check_gradient(p.weights, g.weights, f, this->step, this->floor, "weights"),
                     check_gradient(p.bias, g.bias, f, this->step, this->floor, "bias")}) {
        EXPECT_LT(rep.max_rel_error, this->tol) << rep.worst;
    }
}

TYPED_TEST(GradientCheck, Dense) {
    using T = TypeParam;
    Rng rng(16);
    auto x = random_tensor<T>({5}, rng);
    auto p = make_layer<T>(LayerKind::dense, 5, 3, rng);
    auto r = random_tensor<T>({3}, rng);
    auto g = dense_backward(r, x, p);
    auto f = [&] { return project(dense_forward(x, p), r); };
    for (auto rep : {check_gradient(x, g.input, f, this->step, this->floor, "input"),
                     check_gradient(p.weights, g.weights, f, this->step, this->floor, "weights"),
                     check_gradient(p.bias, g.bias, f, this->step, this->floor, "bias")}) {
        EXPECT_LT(rep.max_rel_error, this->tol) << rep.worst;
    }
    // grad_W is the outer product grad_out x input.
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(g.weights[i * 5 + j], r[i] * x[j]);
    }
}

TYPED_TEST(GradientCheck, SigmoidBce) {
    using T = TypeParam;
    Rng rng(17);
    auto z = random_tensor<T>({1, 3, 3}, rng, -2, 2);
    Tensor<T> t({1, 3, 3});
    for (auto& v : t) v = rng.bernoulli(0.5) ? T{1} : T{0};
    auto g = bce_with_logits_backward(sigmoid(z), t);
    auto rep = check_gradient(z, g, [&] { return bce_loss(sigmoid(z), t); }, this->step, this->wide ? 1e-6 : 1e-3, "z");
    EXPECT_LT(rep.max_rel_error, this->tol) << rep.worst;
}

TEST(Relu, Definition) {
    auto y = relu(Tensor<float>({3}, {-1, 0, 2}));
    EXPECT_EQ(y, Tensor<float>({3}, {0, 0, 2}));
    auto g = relu_backward(Tensor<float>({3}, {5, 5, 5}), Tensor<float>({3}, {-1, 0, 2}));
    EXPECT_EQ(g, Tensor<float>({3}, {0, 0, 5}));
}

TEST(Relu, PositiveInputIsIdentity) {
    Tensor<float> x({4}, {0.1f, 1, 2, 3});
    EXPECT_EQ(relu(x), x);
    EXPECT_EQ(relu_backward(x, x), x);
}

TEST(Relu, NanPropagates) {
    auto y = relu(Tensor<float>({2}, {std::numeric_limits<float>::quiet_NaN(), -1}));
    EXPECT_TRUE(std::isnan(y[0]));
    EXPECT_EQ(y[1], 0.0f);
}

TEST(MaxPool, SingleWindow) {
    auto r = maxpool2(Tensor<float>({1, 2, 2}, {1, 2, 3, 4}));
    EXPECT_EQ(r.output[0], 4.0f);
    EXPECT_EQ(r.argmax[0], 3u);  // position (1,1)
}

TEST(MaxPool, ConstantInputTieBreaksToFirst) {
    auto r = maxpool2(Tensor<float>({1, 4, 4}, 2.5f));
    for (auto v : r.output) EXPECT_EQ(v, 2.5f);
    auto g = maxpool2_backward(Tensor<float>({1, 2, 2}, {1, 2, 3, 4}), r);
    EXPECT_EQ(g, Tensor<float>({1, 4, 4}, {1, 0, 2, 0, 0, 0, 0, 0, 3, 0, 4, 0, 0, 0, 0, 0}));
}

TEST(MaxPool, Ramp) {
    Tensor<float> x({1, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
    EXPECT_EQ(maxpool2(x).output, Tensor<float>({1, 2, 2}, {5, 7, 13, 15}));
}

TEST(MaxPool, OddSizeRejected) {
    EXPECT_THROW(maxpool2(Tensor<float>({1, 3, 4})), ShapeError);
    EXPECT_THROW(maxpool2(Tensor<float>({1, 4, 5})), ShapeError);
}

TEST(TransposedConv, ZeroInputGivesBias) {
    Rng rng(5);
    auto p = make_layer<float>(LayerKind::tconv2x2, 4, 2, rng);
    p.bias = Tensor<float>({2}, {0.25f, -2.0f});
    auto y = tconv2x2_forward(Tensor<float>({4, 2, 2}), p);
    ASSERT_EQ(y.shape(), (Shape{2, 4, 4}));
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_EQ(y[i], 0.25f);
        EXPECT_EQ(y[16 + i], -2.0f);
    }
}

TEST(TransposedConv, OnesKernelSumsChannels) {
    LayerParams<float> p{LayerKind::tconv2x2, Tensor<float>({2, 1, 2, 2}, 1.0f), Tensor<float>({1})};
    auto y = tconv2x2_forward(Tensor<float>({2, 1, 1}, {1.5f, 2.0f}), p);
    EXPECT_EQ(y, Tensor<float>({1, 2, 2}, 3.5f));
}

TEST(TransposedConv, OddChannelsRejected) {
    LayerParams<float> p{LayerKind::tconv2x2, Tensor<float>({3, 1, 2, 2}), Tensor<float>({1})};
    EXPECT_THROW(tconv2x2_forward(Tensor<float>({3, 2, 2}), p), ShapeError);
}

TEST(Dense, IdentityAndHandProduct) {
    LayerParams<float> id{LayerKind::dense, Tensor<float>({2, 2}, {1, 0, 0, 1}), Tensor<float>({2})};
    Tensor<float> x({2}, {1, 2});
    EXPECT_EQ(dense_forward(x, id), x);
    LayerParams<float> p{LayerKind::dense, Tensor<float>({2, 2}, {1, 1, 0, 1}), Tensor<float>({2}, {0, 1})};
    EXPECT_EQ(dense_forward(x, p), Tensor<float>({2}, {3, 3}));
    EXPECT_THROW(dense_forward(Tensor<float>({3}), p), ShapeError);
}

TEST(Concat, ShapesAndSplit) {
    Rng rng(6);
    auto a = random_tensor<float>({2, 4, 4}, rng);
    auto b = random_tensor<float>({3, 4, 4}, rng);
    auto c = concat_channels(a, b);
    EXPECT_EQ(c.shape(), (Shape{5, 4, 4}));
    auto [a2, b2] = split_channels(c, 2);
    EXPECT_EQ(a2, a);
    EXPECT_EQ(b2, b);
    auto [ga, gb] = split_channels(Tensor<float>({5, 4, 4}, 1.0f), 2);
    EXPECT_EQ(ga, Tensor<float>({2, 4, 4}, 1.0f));
    EXPECT_EQ(gb, Tensor<float>({3, 4, 4}, 1.0f));
    EXPECT_THROW(concat_channels(a, Tensor<float>({1, 4, 2})), ShapeError);
}

TEST(SigmoidBce, PerfectPredictionAtClampFloor) {
    Tensor<float> t({4}, {0, 1, 1, 0});
    EXPECT_LE(bce_loss(t, t), -std::log(1.0 - kBceEpsilon) + 1e-12);
}

TEST(SigmoidBce, HalfProbabilityIsLn2) {
    Tensor<float> p({4}, 0.5f);
    Tensor<float> t({4}, {0, 1, 0, 0});
    EXPECT_NEAR(bce_loss(p, t), std::log(2.0), 1e-7);
}

TEST(SigmoidBce, HandEvaluation) {
    Tensor<float> p({2}, {0.9f, 0.2f});
    Tensor<float> t({2}, {1, 0});
    EXPECT_NEAR(bce_loss(p, t), -(std::log(0.9) + std::log(0.8)) / 2, 1e-6);
    EXPECT_NEAR(bce_loss(p, t), 0.1643, 1e-4);
}

TEST(SigmoidBce, NonBinaryTargetRejected) {
    EXPECT_THROW(bce_loss(Tensor<float>({2}, 0.5f), Tensor<float>({2}, {0.0f, 0.5f})), ValidationError);
}

TEST(SigmoidBce, SigmoidRangeAndMonotone) {
    Tensor<double> z({7}, {-800, -20, -1, 0, 1, 20, 800});
    auto s = sigmoid(z);
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_GE(s[i], 0.0);
        EXPECT_LE(s[i], 1.0);
        if (i) {
            EXPECT_GE(s[i], s[i - 1]);
        }
    }
    Tensor<float> zf({3}, {-5, 0, 5});
    for (auto v : sigmoid(zf)) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
}

TEST(Dropout, RateZeroAndEvalAreIdentity) {
    Rng rng(7);
    auto x = random_tensor<float>({100}, rng);
    EXPECT_EQ(dropout_apply(x, 0.0, true, rng).first, x);
    auto [y, m] = dropout_apply(x, 0.5, false, rng);
    EXPECT_EQ(y, x);
    for (auto v : m.mask) EXPECT_EQ(v, 1.0f);
}

TEST(Dropout, PreservesExpectation) {
    Rng rng(8);
    Tensor<float> x({100000}, 1.0f);
    auto [y, m] = dropout_apply(x, 0.5, true, rng);
    double mean = 0.0;
    for (auto v : y) mean += v;
    mean /= static_cast<double>(y.size());
    EXPECT_NEAR(mean, 1.0, 0.02);
    for (auto v : m.mask) EXPECT_TRUE(v == 0.0f || v == 2.0f);
}

TEST(Dropout, InvalidRate) {
    Rng rng(9);
    EXPECT_THROW(dropout_apply(Tensor<float>({2}), 1.0, true, rng), ValidationError);
    EXPECT_THROW(dropout_apply(Tensor<float>({2}), -0.1, true, rng), ValidationError);
}

TEST(Dropout, DeterministicForSeed) {
    Rng a(42), b(42);
    Tensor<float> x({64}, 1.0f);
    EXPECT_EQ(dropout_apply(x, 0.5, true, a).first, dropout_apply(x, 0.5, true, b).first);
}

TEST(CountParams, Formulas) {
    Rng rng(10);
    auto conv = make_layer<float>(LayerKind::conv3x3, 3, 16, rng);
    auto dense = make_layer<float>(LayerKind::dense, 8, 4, rng);
    EXPECT_EQ(count_params<float>({&conv}), 448u);
    EXPECT_EQ(count_params<float>({&dense}), 36u);
    EXPECT_EQ(count_params<float>({}), 0u);
}

TEST(Shapes, SamePaddingPoolAndUpsampleRoundTrip) {
    Rng rng(11);
    Tensor<float> x = random_tensor<float>({2, 16, 16}, rng);
    auto h = conv2d_forward(x, make_layer<float>(LayerKind::conv3x3, 2, 8, rng));
    EXPECT_EQ(h.shape(), (Shape{8, 16, 16}));
    for (int level = 0; level < 3; ++level) h = maxpool2(h).output;
    EXPECT_EQ(h.shape(), (Shape{8, 2, 2}));
    for (std::size_t c = 8; c > 1; c /= 2) h = tconv2x2_forward(h, make_layer<float>(LayerKind::tconv2x2, c, c / 2, rng));
    EXPECT_EQ(h.shape(), (Shape{1, 16, 16}));
}
