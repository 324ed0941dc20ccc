#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "needlestack/nn/ops.hpp"
#include "needlestack/random.hpp"

namespace needlestack::nn {

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t d_model = 64;
    std::size_t d_ff = 256;
    std::size_t vocab_size = 512;
    std::size_t max_positions = 128;
    std::uint64_t seed = 1;

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || vocab_size < 1 || max_positions < 1) {
            throw ConfigError("model: all counts must be >= 1");
        }
        if (d_model % n_heads != 0) {
            throw ConfigError("model: d_model (" + std::to_string(d_model) + ") not divisible by n_heads (" +
                              std::to_string(n_heads) + ")");
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Named parameter buffers in insertion order.
template <class T>
class ParameterStore {
public:
    struct Entry {
        std::string name;
        Shape shape;
        std::vector<T> values;
    };

    Entry& add(const std::string& name, Shape shape, std::vector<T> values) {
        if (index_.contains(name)) {
            throw Error("parameter '" + name + "' already exists");
        }
        if (numel(shape) != values.size()) {
            throw ShapeError("parameter '" + name + "': values do not match shape " + shape_str(shape));
        }
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(shape), std::move(values)});
        return entries_.back();
    }

    Entry& add_normal(const std::string& name, Shape shape, Rng& rng, double stddev) {
        std::vector<T> v(numel(shape));
        for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
        return add(name, std::move(shape), std::move(v));
    }

    Entry& add_constant(const std::string& name, Shape shape, T value) {
        std::vector<T> v(numel(shape), value);
        return add(name, std::move(shape), std::move(v));
    }

    bool contains(const std::string& name) const { return index_.contains(name); }
    Entry& at(const std::string& name) { return entries_.at(find(name)); }
    const Entry& at(const std::string& name) const { return entries_.at(find(name)); }
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.values.size();
        return n;
    }

private:
    std::size_t find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw Error("unknown parameter '" + name + "'");
        }
        return it->second;
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Graph leaves for one forward/backward pass. Each worker thread binds its
/// own leaves so gradients never race; values stay shared and read-only.
template <class T>
class Binding {
public:
    explicit Binding(std::vector<const ParameterStore<T>*> stores, bool trainable = true)
        : stores_(std::move(stores)), trainable_(trainable) {}

    const Tensor<T>& operator()(const std::string& name) {
        auto it = leaves_.find(name);
        if (it != leaves_.end()) {
            return it->second;
        }
        for (const auto* store : stores_) {
            if (store->contains(name)) {
                const auto& e = store->at(name);
                return leaves_.emplace(name, Tensor<T>::view(e.shape, e.values.data(), trainable_)).first->second;
            }
        }
        throw Error("unknown parameter '" + name + "'");
    }

    /// Gradient for every parameter of the bound stores; zeros where the
    /// loss never reached.
    std::map<std::string, std::vector<T>> gradients() const {
        std::map<std::string, std::vector<T>> out;
        for (const auto* store : stores_) {
            for (const auto& e : store->entries()) {
                auto it = leaves_.find(e.name);
                out[e.name] = it == leaves_.end() ? std::vector<T>(e.values.size(), T(0)) : it->second.grad();
            }
        }
        return out;
    }

private:
    std::vector<const ParameterStore<T>*> stores_;
    bool trainable_;
    std::unordered_map<std::string, Tensor<T>> leaves_;
};

/// Decoder-only transformer: learned absolute positions, pre-norm blocks,
/// GELU MLP, tied input/output embeddings.
template <class T>
class LanguageModel {
public:
    LanguageModel() = default;
    explicit LanguageModel(const ModelConfig& config) : config_(config) {
        config_.validate();
        Rng rng(derive_seed(config_.seed, 0x6c6d));
        const std::size_t d = config_.d_model, f = config_.d_ff;
        params_.add_normal("wte", {config_.vocab_size, d}, rng, 0.02);
        params_.add_normal("wpe", {config_.max_positions, d}, rng, 0.02);
        for (std::size_t l = 0; l < config_.n_layers; ++l) {
            const std::string p = layer_prefix(l);
            params_.add_constant(p + "ln1.g", {d}, T(1));
            params_.add_constant(p + "ln1.b", {d}, T(0));
            params_.add_normal(p + "attn.w_qkv", {d, 3 * d}, rng, 0.02);
            params_.add_constant(p + "attn.b_qkv", {3 * d}, T(0));
            params_.add_normal(p + "attn.w_o", {d, d}, rng, 0.02);
            params_.add_constant(p + "attn.b_o", {d}, T(0));
            params_.add_constant(p + "ln2.g", {d}, T(1));
            params_.add_constant(p + "ln2.b", {d}, T(0));
            params_.add_normal(p + "mlp.w_fc", {d, f}, rng, 0.02);
            params_.add_constant(p + "mlp.b_fc", {f}, T(0));
            params_.add_normal(p + "mlp.w_proj", {f, d}, rng, 0.02);
            params_.add_constant(p + "mlp.b_proj", {d}, T(0));
        }
        params_.add_constant("ln_f.g", {d}, T(1));
        params_.add_constant("ln_f.b", {d}, T(0));
    }

    static std::string layer_prefix(std::size_t layer) { return "h" + std::to_string(layer) + "."; }

    /// Closed-form parameter count for a config.
    static std::size_t parameter_count(const ModelConfig& c) {
        const std::size_t d = c.d_model, f = c.d_ff;
        const std::size_t per_layer = 4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * f + f) + (f * d + d);
        return c.vocab_size * d + c.max_positions * d + c.n_layers * per_layer + 2 * d;
    }

    const ModelConfig& config() const { return config_; }
    ParameterStore<T>& params() { return params_; }
    const ParameterStore<T>& params() const { return params_; }

    Binding<T> bind(bool trainable = true) const { return Binding<T>({&params_}, trainable); }

private:
    ModelConfig config_;
    ParameterStore<T> params_;
};

/// Per-layer attention probabilities from one forward pass.
struct ForwardCapture {
    std::vector<AttentionCapture> layers;
};

namespace detail {
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add(matmul(x, w), b);
}
}  // namespace detail

/// Runs the transformer stack on pre-built token embeddings, adding the
/// positional embeddings at `positions`. Returns final-norm hidden states.
template <class T>
Tensor<T> forward_hidden(const LanguageModel<T>& model, Binding<T>& p, const Tensor<T>& embeddings,
                         std::span<const int> positions, bool causal = true, ForwardCapture* capture = nullptr) {
    const auto& c = model.config();
    if (embeddings.dim() != 2 || embeddings.cols() != c.d_model) {
        throw ShapeError("forward: embeddings must be [seq, " + std::to_string(c.d_model) + "], got " +
                         shape_str(embeddings.shape()));
    }
    if (positions.size() != embeddings.rows()) {
        throw ShapeError("forward: positions/embeddings length mismatch");
    }
    if (embeddings.rows() > c.max_positions) {
        throw ShapeError("forward: sequence length " + std::to_string(embeddings.rows()) + " exceeds max_positions " +
                         std::to_string(c.max_positions));
    }
    for (int pos : positions) {
        if (pos < 0 || static_cast<std::size_t>(pos) >= c.max_positions) {
            throw ShapeError("forward: position " + std::to_string(pos) + " out of range");
        }
    }
    if (capture) {
        capture->layers.assign(c.n_layers, {});
    }
    Tensor<T> x = add(embeddings, embed(p("wpe"), positions));
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::string pre = LanguageModel<T>::layer_prefix(l);
        auto h = layer_norm(x, p(pre + "ln1.g"), p(pre + "ln1.b"));
        auto qkv = detail::linear(h, p(pre + "attn.w_qkv"), p(pre + "attn.b_qkv"));
        auto att = self_attention(qkv, c.n_heads, causal, capture ? &capture->layers[l] : nullptr);
        x = add(x, detail::linear(att, p(pre + "attn.w_o"), p(pre + "attn.b_o")));
        h = layer_norm(x, p(pre + "ln2.g"), p(pre + "ln2.b"));
        h = gelu(detail::linear(h, p(pre + "mlp.w_fc"), p(pre + "mlp.b_fc")));
        x = add(x, detail::linear(h, p(pre + "mlp.w_proj"), p(pre + "mlp.b_proj")));
    }
    return layer_norm(x, p("ln_f.g"), p("ln_f.b"));
}

/// Tied output head: hidden · wteᵀ.
template <class T>
Tensor<T> lm_head(Binding<T>& p, const Tensor<T>& hidden) {
    return matmul(hidden, transpose(p("wte")));
}

template <class T>
Tensor<T> embed_tokens(const LanguageModel<T>& model, Binding<T>& p, std::span<const int> ids) {
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= model.config().vocab_size) {
            throw ShapeError("token id " + std::to_string(id) + " out of range for vocab " +
                             std::to_string(model.config().vocab_size));
        }
    }
    return embed(p("wte"), ids);
}

inline std::vector<int> iota_positions(std::size_t n, int start = 0) {
    std::vector<int> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = start + static_cast<int>(i);
    return pos;
}

/// Logits [seq, vocab] for a pre-built embedding sequence at positions 0..seq-1.
template <class T>
Tensor<T> forward_lm(const LanguageModel<T>& model, Binding<T>& p, const Tensor<T>& embeddings, bool causal = true) {
    const auto pos = iota_positions(embeddings.rows());
    return lm_head(p, forward_hidden(model, p, embeddings, pos, causal));
}

/// Logits [seq, vocab] for a token-id sequence.
template <class T>
Tensor<T> forward_lm(const LanguageModel<T>& model, Binding<T>& p, std::span<const int> ids, bool causal = true) {
    if (ids.size() > model.config().max_positions) {
        throw ShapeError("forward: sequence length " + std::to_string(ids.size()) + " exceeds max_positions " +
                         std::to_string(model.config().max_positions));
    }
    return forward_lm(model, p, embed_tokens(model, p, ids), causal);
}

/// Mean masked next-token cross-entropy.
template <class T>
Tensor<T> loss_lm(const Tensor<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
    return cross_entropy(logits, targets, mask);
}

/// Runs backward from `loss` and returns the gradient of every bound
/// parameter (zeros for unreachable ones). Non-finite gradients abort.
template <class T>
std::map<std::string, std::vector<T>> backward_params(const Tensor<T>& loss, const Binding<T>& p) {
    backward(loss);
    auto grads = p.gradients();
    for (const auto& [name, g] : grads) {
        for (T v : g) {
            if (!std::isfinite(v)) {
                throw NonFiniteError("non-finite gradient in parameter '" + name + "'");
            }
        }
    }
    return grads;
}

}  // namespace needlestack::nn
