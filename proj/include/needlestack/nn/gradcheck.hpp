#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "needlestack/nn/model.hpp"
#include "needlestack/nn/ops.hpp"
#include "needlestack/random.hpp"

namespace needlestack::nn {

/// |analytic − numeric| / max(|analytic|, |numeric|, floor). The floor keeps
/// near-zero components from dominating the ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences over every element of `leaves`. `f` is re-evaluated
/// after each perturbation and must read the leaves' current values.
inline double finite_difference_check(const std::function<Tensor<double>()>& f,
                                      const std::vector<Tensor<double>>& leaves, double eps = 1e-5) {
    for (auto leaf : leaves) leaf.zero_grad();
    backward(f());
    std::vector<std::vector<double>> analytic;
    for (const auto& leaf : leaves) analytic.push_back(leaf.grad());

    double worst = 0.0;
    NoGradGuard no_grad;
    for (std::size_t l = 0; l < leaves.size(); ++l) {
        double* values = leaves[l].node().mutable_data();
        for (std::size_t i = 0; i < leaves[l].size(); ++i) {
            const double saved = values[i];
            values[i] = saved + eps;
            const double up = f().item();
            values[i] = saved - eps;
            const double down = f().item();
            values[i] = saved;
            worst = std::max(worst, relative_error(analytic[l][i], (up - down) / (2 * eps)));
        }
    }
    return worst;
}

namespace detail {

inline Tensor<double> random_leaf(const Shape& shape, Rng& rng, double scale = 1.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.normal(0.0, scale);
    return Tensor<double>::from(shape, std::move(v), true);
}

inline Tensor<double> random_const(const Shape& shape, Rng& rng) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.normal();
    return Tensor<double>::from(shape, std::move(v), false);
}

/// Scalar probe: weighted sum of an op's output with fixed random weights.
inline Tensor<double> project(const Tensor<double>& out, const Tensor<double>& weights) {
    return sum(mul(out, weights));
}

struct OpCase {
    std::vector<Tensor<double>> leaves;
    std::function<Tensor<double>()> scalar;
};

using OpFactory = std::function<OpCase(const std::vector<Shape>&, Rng&)>;

inline void expect_shapes(const std::string& op, const std::vector<Shape>& shapes, std::size_t n) {
    if (shapes.size() != n) {
        throw ShapeError("grad_check(" + op + "): expected " + std::to_string(n) + " shape(s), got " +
                         std::to_string(shapes.size()));
    }
}

inline OpCase unary_case(const std::vector<Shape>& shapes, Rng& rng, const std::string& name,
                         std::function<Tensor<double>(const Tensor<double>&)> op) {
    expect_shapes(name, shapes, 1);
    auto x = random_leaf(shapes[0], rng);
    auto probe = random_const(op(x).shape(), rng);
    return {{x}, [=] { return project(op(x), probe); }};
}

inline const std::map<std::string, OpFactory>& op_registry() {
    static const std::map<std::string, OpFactory> registry = {
        {"identity", [](const auto& s, Rng& r) { return unary_case(s, r, "identity", [](const auto& x) { return identity(x); }); }},
        {"softmax", [](const auto& s, Rng& r) { return unary_case(s, r, "softmax", [](const auto& x) { return softmax(x); }); }},
        {"gelu", [](const auto& s, Rng& r) { return unary_case(s, r, "gelu", [](const auto& x) { return gelu(x); }); }},
        {"transpose", [](const auto& s, Rng& r) { return unary_case(s, r, "transpose", [](const auto& x) { return transpose(x); }); }},
        {"matmul", [](const std::vector<Shape>& s, Rng& r) {
             expect_shapes("matmul", s, 2);
             auto a = random_leaf(s[0], r), b = random_leaf(s[1], r);
             auto probe = random_const(matmul(a, b).shape(), r);
             return OpCase{{a, b}, [=] { return project(matmul(a, b), probe); }};
         }},
        {"add", [](const std::vector<Shape>& s, Rng& r) {
             expect_shapes("add", s, 2);
             auto a = random_leaf(s[0], r), b = random_leaf(s[1], r);
             auto probe = random_const(a.shape(), r);
             return OpCase{{a, b}, [=] { return project(add(a, b), probe); }};
         }},
        {"mul", [](const std::vector<Shape>& s, Rng& r) {
             expect_shapes("mul", s, 2);
             auto a = random_leaf(s[0], r), b = random_leaf(s[1], r);
             auto probe = random_const(a.shape(), r);
             return OpCase{{a, b}, [=] { return project(mul(a, b), probe); }};
         }},
        {"layer_norm", [](const std::vector<Shape>& s, Rng& r) {
             if (s.empty() || s.size() > 3) expect_shapes("layer_norm", s, 1);
             auto x = random_leaf(s[0], r);
             const Shape affine{x.cols()};
             auto g = random_leaf(s.size() > 1 ? s[1] : affine, r);
             auto b = random_leaf(s.size() > 2 ? s[2] : affine, r);
             auto probe = random_const(x.shape(), r);
             return OpCase{{x, g, b}, [=] { return project(layer_norm(x, g, b), probe); }};
         }},
        {"embed", [](const std::vector<Shape>& s, Rng& r) {
             expect_shapes("embed", s, 1);
             auto table = random_leaf(s[0], r);
             std::vector<int> ids(s[0][0] + 2);
             for (auto& id : ids) id = static_cast<int>(r.uniform_index(s[0][0]));
             auto probe = random_const({ids.size(), table.cols()}, r);
             return OpCase{{table}, [=] { return project(embed(table, ids), probe); }};
         }},
        {"concat", [](const std::vector<Shape>& s, Rng& r) {
             if (s.empty()) expect_shapes("concat", s, 2);
             std::vector<Tensor<double>> parts;
             for (const auto& shape : s) parts.push_back(random_leaf(shape, r));
             auto probe = random_const(concat(parts).shape(), r);
             return OpCase{parts, [=] { return project(concat(parts), probe); }};
         }},
        {"slice", [](const std::vector<Shape>& s, Rng& r) {
             expect_shapes("slice", s, 1);
             auto x = random_leaf(s[0], r);
             const std::size_t rows = s[0][0];
             const std::size_t begin = rows > 1 ? 1 : 0;
             auto probe = random_const(slice(x, begin, rows).shape(), r);
             return OpCase{{x}, [=] { return project(slice(x, begin, rows), probe); }};
         }},
        {"cross_entropy", [](const std::vector<Shape>& s, Rng& r) {
             expect_shapes("cross_entropy", s, 1);
             auto logits = random_leaf(s[0], r);
             const std::size_t rows = logits.rows(), vocab = logits.cols();
             std::vector<int> targets(rows);
             std::vector<std::uint8_t> mask(rows);
             for (std::size_t i = 0; i < rows; ++i) {
                 targets[i] = static_cast<int>(r.uniform_index(vocab));
                 mask[i] = (i % 2 == 0) ? 1 : 0;
             }
             return OpCase{{logits}, [=] { return cross_entropy(logits, targets, mask); }};
         }},
        {"attention", [](const std::vector<Shape>& s, Rng& r) {
             expect_shapes("attention", s, 1);
             auto qkv = random_leaf(s[0], r);
             const std::size_t d = s[0][1] / 3;
             const std::size_t heads = d % 2 == 0 ? 2 : 1;
             auto probe = random_const({s[0][0], d}, r);
             return OpCase{{qkv}, [=] { return project(self_attention(qkv, heads), probe); }};
         }},
        {"scale", [](const auto& s, Rng& r) { return unary_case(s, r, "scale", [](const auto& x) { return scale(x, 0.37); }); }},
    };
    return registry;
}

}  // namespace detail

inline std::vector<std::string> registered_ops() {
    std::vector<std::string> names;
    for (const auto& [name, _] : detail::op_registry()) names.push_back(name);
    return names;
}

/// Small representative input shapes for each registered op.
inline std::vector<Shape> default_shapes(const std::string& op_name) {
    if (op_name == "matmul") return {{3, 4}, {4, 5}};
    if (op_name == "add") return {{3, 4}, {4}};
    if (op_name == "mul") return {{3, 4}, {3, 4}};
    if (op_name == "embed") return {{6, 4}};
    if (op_name == "concat") return {{2, 4}, {3, 4}};
    if (op_name == "slice") return {{5, 3}};
    if (op_name == "cross_entropy") return {{4, 7}};
    if (op_name == "attention") return {{5, 12}};
    return {{3, 5}};
}

/// Maximum relative error between analytic and central-difference
/// gradients for a registered op on random inputs of the given shapes.
inline double grad_check(const std::string& op_name, const std::vector<Shape>& shapes, std::uint64_t seed) {
    const auto& registry = detail::op_registry();
    auto it = registry.find(op_name);
    if (it == registry.end()) {
        throw Error("grad_check: unknown op '" + op_name + "'");
    }
    Rng rng(seed);
    auto c = it->second(shapes, rng);
    return finite_difference_check(c.scalar, c.leaves);
}

/// End-to-end check of every parameter of a small language model against
/// central differences of the masked next-token loss. Weights are jittered
/// away from their init so norms and GELU are exercised off their flat spots.
inline double model_grad_check(const ModelConfig& config, std::uint64_t seed, double eps = 1e-5) {
    LanguageModel<double> model(config);
    Rng rng(seed);
    for (auto& e : model.params().entries()) {
        for (auto& v : e.values) v += rng.normal(0.0, 0.2);
    }
    const std::size_t seq = std::min<std::size_t>(config.max_positions, 6);
    std::vector<int> ids(seq), targets(seq);
    std::vector<std::uint8_t> mask(seq);
    for (std::size_t i = 0; i < seq; ++i) {
        ids[i] = static_cast<int>(rng.uniform_index(config.vocab_size));
        targets[i] = static_cast<int>(rng.uniform_index(config.vocab_size));
        mask[i] = i % 2 == 1 ? 1 : 0;
    }
    auto loss_value = [&](bool record) {
        auto binding = model.bind(record);
        auto loss = loss_lm(forward_lm(model, binding, std::span<const int>(ids)), targets, mask);
        return std::make_pair(loss, std::move(binding));
    };
    auto [loss, binding] = loss_value(true);
    const auto analytic = backward_params(loss, binding);

    double worst = 0.0;
    NoGradGuard no_grad;
    for (auto& e : model.params().entries()) {
        const auto& g = analytic.at(e.name);
        for (std::size_t i = 0; i < e.values.size(); ++i) {
            const double saved = e.values[i];
            e.values[i] = saved + eps;
            const double up = loss_value(false).first.item();
            e.values[i] = saved - eps;
            const double down = loss_value(false).first.item();
            e.values[i] = saved;
            worst = std::max(worst, relative_error(g[i], (up - down) / (2 * eps)));
        }
    }
    return worst;
}

}  // namespace needlestack::nn
