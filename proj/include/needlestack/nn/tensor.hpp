#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "needlestack/error.hpp"

namespace needlestack::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << ')';
    return out.str();
}

/// One vertex of the autodiff graph. Interior nodes own their values;
/// parameter leaves borrow the parameter store's buffer so a forward pass
/// never copies weights.
template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    const T* borrowed = nullptr;
    std::vector<T> grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;
    bool consumed = false;

    std::size_t size() const { return borrowed ? numel(shape) : value.size(); }
    const T* data() const { return borrowed ? borrowed : value.data(); }
    T* mutable_data() {
        if (borrowed) {
            throw Error("attempt to mutate a borrowed parameter view");
        }
        return value.data();
    }
    T* grad_data() {
        if (grad.empty()) {
            grad.assign(size(), T(0));
        }
        return grad.data();
    }
};

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major array with reverse-mode gradient support. Copies share
/// the underlying node.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<Node<T>>();
        n->value.assign(numel(shape), T(0));
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (numel(shape) != values.size()) {
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
        }
        for (std::size_t extent : shape) {
            if (extent == 0) {
                throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
            }
        }
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    /// Trainable leaf viewing external storage (a parameter buffer).
    static Tensor view(Shape shape, const T* data, bool requires_grad = true) {
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->borrowed = data;
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim() const { return node_->shape.size(); }
    std::size_t size() const { return node_->size(); }
    /// Leading extent product; a 1-D tensor is a single row.
    std::size_t rows() const { return dim() <= 1 ? 1 : size() / node_->shape.back(); }
    std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }

    const T* data() const { return node_->data(); }
    std::span<const T> values() const { return {node_->data(), node_->size()}; }
    std::vector<T> to_vector() const { return {data(), data() + size()}; }
    T operator[](std::size_t i) const { return node_->data()[i]; }
    T at(std::size_t r, std::size_t c) const { return node_->data()[r * cols() + c]; }
    T item() const {
        if (size() != 1) {
            throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        }
        return data()[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient values; all zeros when nothing reached this tensor.
    std::vector<T> grad() const {
        if (node_->grad.empty()) {
            return std::vector<T>(size(), T(0));
        }
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    Node<T>& node() const { return *node_; }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

    bool all_finite() const {
        return std::all_of(data(), data() + size(), [](T v) { return std::isfinite(v); });
    }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Builds an op output. Records inputs and the backward closure only when
/// recording is enabled and some input is trainable.
template <class T, class Backward>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::vector<Tensor<T>> inputs, Backward&& backward) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& in : inputs) {
            any = any || in.requires_grad();
        }
        if (any) {
            n->requires_grad = true;
            n->inputs.reserve(inputs.size());
            for (auto& in : inputs) {
                n->inputs.push_back(in.node_ptr());
            }
            n->backward_fn = std::forward<Backward>(backward);
        }
    }
    return Tensor<T>(std::move(n));
}

template <class T>
void check_finite(const Tensor<T>& t, const std::string& what) {
    if (!t.all_finite()) {
        throw NonFiniteError("non-finite value in " + what);
    }
}

/// Reverse-mode sweep from a scalar. Leaves keep their accumulated
/// gradients; interior closures are released and the graph is marked
/// consumed, so a second call on the same graph is an error.
template <class T>
void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ShapeError("backward: loss must be a scalar");
    }
    Node<T>* root = &loss.node();
    if (root->consumed) {
        throw Error("backward: graph already consumed");
    }
    if (!root->requires_grad) {
        throw Error("backward: loss does not depend on any trainable tensor");
    }
    check_finite(loss, "loss");

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) {
                if (child->consumed) {
                    throw Error("backward: graph already consumed");
                }
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_data()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && !node->grad.empty()) {
            node->backward_fn(*node);
        }
    }
    for (Node<T>* node : order) {
        if (node->backward_fn) {
            node->backward_fn = nullptr;
            node->inputs.clear();
            node->consumed = true;
        }
    }
    root->consumed = true;
}

}  // namespace needlestack::nn
