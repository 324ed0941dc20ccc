#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "needlestack/error.hpp"
#include "needlestack/nn/model.hpp"

namespace needlestack::train {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// First and second moments per parameter name, plus the step counter.
template <class T>
struct OptimState {
    std::uint64_t step = 0;
    std::map<std::string, std::vector<T>> m;
    std::map<std::string, std::vector<T>> v;

    bool operator==(const OptimState&) const = default;
};

using GradMap = std::map<std::string, std::vector<float>>;

template <class T>
void check_finite_grads(const std::map<std::string, std::vector<T>>& grads) {
    for (const auto& [name, g] : grads) {
        for (T x : g) {
            if (!std::isfinite(x)) throw NonFiniteError("non-finite gradient in '" + name + "'");
        }
    }
}

/// Decoupled weight decay (p ← p·(1 − lr·λ)) followed by the bias-corrected
/// Adam update. Aborts before touching anything if a gradient is non-finite.
template <class T>
void adamw_step(const std::vector<nn::ParameterStore<T>*>& stores, const std::map<std::string, std::vector<T>>& grads,
                OptimState<T>& state, const AdamWConfig& h, double lr) {
    check_finite_grads(grads);
    for (auto* store : stores) {
        for (const auto& e : store->entries()) {
            auto it = grads.find(e.name);
            if (it != grads.end() && it->second.size() != e.values.size()) {
                throw ShapeError("adamw: gradient for '" + e.name + "' has the wrong size");
            }
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - lr * h.weight_decay;
    for (auto* store : stores) {
        for (auto& e : store->entries()) {
            auto it = grads.find(e.name);
            auto& m = state.m[e.name];
            auto& v = state.v[e.name];
            if (m.empty()) {
                m.assign(e.values.size(), T(0));
                v.assign(e.values.size(), T(0));
            }
            for (std::size_t i = 0; i < e.values.size(); ++i) {
                const double g = it == grads.end() ? 0.0 : static_cast<double>(it->second[i]);
                double p = static_cast<double>(e.values[i]) * decay;
                const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * g;
                const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                p -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + h.eps);
                e.values[i] = static_cast<T>(p);
            }
        }
    }
}

/// Linear warmup from 0 to `base`, then linear decay to 0 at `total`.
inline double lr_schedule(std::size_t step, std::size_t warmup, std::size_t total, double base) {
    if (step >= total) return 0.0;
    if (step < warmup) return base * static_cast<double>(step) / static_cast<double>(warmup);
    if (total == warmup) return base;
    return base * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping. `max_norm` ≤ 0 disables clipping.
template <class T>
double clip_grad_norm(std::map<std::string, std::vector<T>>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [_, g] : grads)
        for (T x : g) sq += static_cast<double>(x) * static_cast<double>(x);
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& [_, g] : grads)
            for (T& x : g) x = static_cast<T>(x * s);
    }
    return norm;
}

}  // namespace needlestack::train
