#include <gtest/gtest.h>

#include <cmath>

#include "needlestack/nn/gradcheck.hpp"
#include "needlestack/nn/ops.hpp"

using namespace needlestack;
using namespace needlestack::nn;

TEST(Tensor, FromRejectsWrongSize) {
    EXPECT_THROW(Tensor<double>::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST(Tensor, MatmulShapeMismatchNamesShapes) {
    auto a = Tensor<double>::zeros({2, 3});
    auto b = Tensor<double>::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("(2,3)"), std::string::npos) << msg;
    }
}

TEST(Tensor, MatmulMatchesNaiveLoop) {
    Rng rng(3);
    std::vector<double> av(4 * 5), bv(5 * 3);
    for (auto& v : av) v = rng.normal();
    for (auto& v : bv) v = rng.normal();
    auto c = matmul(Tensor<double>::from({4, 5}, av), Tensor<double>::from({5, 3}, bv));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double ref = 0;
            for (std::size_t k = 0; k < 5; ++k) ref += av[i * 5 + k] * bv[k * 3 + j];
            EXPECT_NEAR(c.at(i, j), ref, 1e-12);
        }
}

TEST(Tensor, SoftmaxRowsSumToOne) {
    auto x = Tensor<double>::from({2, 3}, {1.0, 2.0, 3.0, -1000.0, 0.0, 1000.0});
    auto y = softmax(x);
    for (std::size_t r = 0; r < 2; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 3; ++c) s += y.at(r, c);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    EXPECT_TRUE(y.all_finite());
}

TEST(Tensor, BackwardTwiceThrows) {
    auto x = Tensor<double>::from({3}, {1.0, 2.0, 3.0}, true);
    auto loss = sum(mul(x, x));
    backward(loss);
    EXPECT_NEAR(x.grad()[1], 4.0, 1e-12);
    EXPECT_THROW(backward(loss), Error);
}

TEST(Tensor, NonFiniteLossRaises) {
    auto x = Tensor<double>::from({1}, {std::nan("")}, true);
    auto loss = sum(x);
    EXPECT_THROW(backward(loss), NonFiniteError);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
    auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
    NoGradGuard guard;
    auto y = sum(mul(x, x));
    EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, EveryRegisteredOpPasses) {
    for (const auto& name : registered_ops()) {
        const double err = grad_check(name, default_shapes(name), 7);
        EXPECT_LT(err, 1e-6) << name;
    }
}

TEST(GradCheck, UnknownOpThrows) { EXPECT_THROW(grad_check("nope", {}, 1), Error); }
