#include <gtest/gtest.h>

#include <cmath>

#include "needlestack/nn/gradcheck.hpp"
#include "needlestack/nn/model.hpp"

using namespace needlestack;
using namespace needlestack::nn;

namespace {

ModelConfig tiny(std::size_t vocab = 128) {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 16;
    c.d_ff = 32;
    c.vocab_size = vocab;
    c.max_positions = 32;
    c.seed = 3;
    return c;
}

}  // namespace

TEST(Model, LogitShape) {
    ModelConfig c = tiny();
    c.d_model = 64;
    c.d_ff = 128;
    LanguageModel<float> m(c);
    auto p = m.bind(false);
    const std::vector<int> ids{1, 2, 3, 4, 5, 6, 7, 8};
    auto logits = forward_lm(m, p, std::span<const int>(ids));
    EXPECT_EQ(logits.shape(), (Shape{8, 128}));
}

TEST(Model, ZeroWeightsGiveUniformLoss) {
    LanguageModel<double> m(tiny());
    for (auto& e : m.params().entries()) std::fill(e.values.begin(), e.values.end(), 0.0);
    auto p = m.bind(false);
    const std::vector<int> ids{5, 9, 1};
    const std::vector<int> targets{2, 3, 4};
    const std::vector<std::uint8_t> mask{1, 1, 1};
    auto loss = loss_lm(forward_lm(m, p, std::span<const int>(ids)), targets, mask);
    EXPECT_NEAR(loss.item(), std::log(128.0), 1e-9);
}

TEST(Model, CausalPrefixUnaffectedBySuffix) {
    LanguageModel<double> m(tiny());
    auto p = m.bind(false);
    std::vector<int> a{3, 1, 4, 1, 5, 9, 2, 6};
    std::vector<int> b = a;
    b[5] = 77;
    b[7] = 12;
    auto la = forward_lm(m, p, std::span<const int>(a));
    auto lb = forward_lm(m, p, std::span<const int>(b));
    for (std::size_t r = 0; r <= 4; ++r)
        for (std::size_t v = 0; v < 128; ++v) EXPECT_EQ(la.at(r, v), lb.at(r, v));
}

TEST(Model, LengthAndIdErrors) {
    LanguageModel<float> m(tiny());
    auto p = m.bind(false);
    std::vector<int> too_long(33, 1);
    EXPECT_THROW(forward_lm(m, p, std::span<const int>(too_long)), ShapeError);
    std::vector<int> bad{1, 128};
    EXPECT_THROW(forward_lm(m, p, std::span<const int>(bad)), ShapeError);
}

TEST(Model, ParameterCountIsClosedForm) {
    const auto c = tiny();
    LanguageModel<float> m(c);
    EXPECT_EQ(m.params().count(), LanguageModel<float>::parameter_count(c));
}

TEST(Model, ConfigValidation) {
    auto c = tiny();
    c.n_heads = 3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.n_layers = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

// Oracle: log-sum-exp recomputed by hand from the logits.
TEST(Model, LossMatchesLogSumExpOracle) {
    Rng rng(12);
    std::vector<double> v(4 * 6);
    for (auto& x : v) x = rng.normal(0, 2);
    auto logits = Tensor<double>::from({4, 6}, v);
    const std::vector<int> targets{1, 0, 5, 3};
    const std::vector<std::uint8_t> mask{1, 0, 1, 1};
    double total = 0;
    int count = 0;
    for (std::size_t r = 0; r < 4; ++r) {
        if (!mask[r]) continue;
        double mx = -1e300;
        for (std::size_t c = 0; c < 6; ++c) mx = std::max(mx, v[r * 6 + c]);
        double z = 0;
        for (std::size_t c = 0; c < 6; ++c) z += std::exp(v[r * 6 + c] - mx);
        total += mx + std::log(z) - v[r * 6 + static_cast<std::size_t>(targets[r])];
        ++count;
    }
    EXPECT_NEAR(loss_lm(logits, targets, mask).item(), total / count, 1e-12);
    const std::vector<std::uint8_t> none(4, 0);
    EXPECT_THROW(loss_lm(logits, targets, none), Error);
}

TEST(Model, SumAndDotGradients) {
    auto x = Tensor<double>::from({4}, {1.0, -2.0, 3.0, 0.5}, true);
    backward(sum(x));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
    auto y = Tensor<double>::from({3}, {1.0, -2.0, 3.0}, true);
    backward(dot(y, y));
    EXPECT_EQ(y.grad(), (std::vector<double>{2.0, -4.0, 6.0}));
}

TEST(Model, UnreachedParametersGetZeroGradient) {
    LanguageModel<double> m(tiny());
    auto p = m.bind();
    const std::vector<int> ids{1, 2};
    auto logits = forward_lm(m, p, std::span<const int>(ids));
    const std::vector<int> targets{0, 0};
    const std::vector<std::uint8_t> mask{1, 1};
    auto grads = backward_params(loss_lm(logits, targets, mask), p);
    const auto& wpe = grads.at("wpe");
    for (std::size_t i = 2 * 16; i < wpe.size(); ++i) ASSERT_EQ(wpe[i], 0.0);
}

TEST(Model, EndToEndGradientMatchesFiniteDifferences) {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.vocab_size = 11;
    c.max_positions = 8;
    EXPECT_LT(model_grad_check(c, 5), 1e-3);
}

TEST(Model, DeterministicLogits) {
    LanguageModel<float> a(tiny()), b(tiny());
    auto pa = a.bind(false);
    auto pb = b.bind(false);
    const std::vector<int> ids{7, 8, 9};
    EXPECT_EQ(forward_lm(a, pa, std::span<const int>(ids)).to_vector(), forward_lm(b, pb, std::span<const int>(ids)).to_vector());
}
