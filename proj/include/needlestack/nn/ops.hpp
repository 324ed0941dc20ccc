#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "needlestack/nn/tensor.hpp"

namespace needlestack::nn {

namespace kernels {

/// c[m×n] (+)= a[m×k] · b[k×n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        if (!accumulate) {
            std::fill(crow, crow + n, T(0));
        }
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// c[k×n] += aᵀ · g where a is [m×k] and g is [m×n]
template <class T>
void gemm_tn_acc(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * grow[j];
            }
        }
    }
}

template <class T>
std::vector<T> transposed(const T* a, std::size_t rows, std::size_t cols) {
    std::vector<T> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    return out;
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T s = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        s += a[i] * b[i];
    }
    return s;
}

}  // namespace kernels

namespace detail {
template <class T>
void require_2d(const Tensor<T>& t, const char* op) {
    if (t.dim() != 2) {
        throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
    }
}
}  // namespace detail

template <class T>
Tensor<T> identity(const Tensor<T>& a) {
    return make_result<T>(a.shape(), a.to_vector(), {a}, [](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

/// Elementwise sum of equal shapes, or row-broadcast of a 1-D `b` over the
/// last axis of `a` (bias addition).
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    const bool same = a.shape() == b.shape();
    const bool bias = !same && b.dim() == 1 && b.size() == a.cols();
    if (!same && !bias) {
        throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    std::vector<T> out(a.size());
    const T* pa = a.data();
    const T* pb = b.data();
    const std::size_t n = b.size();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = pa[i] + pb[same ? i : i % n];
    }
    return make_result<T>(a.shape(), std::move(out), {a, b}, [same, n](Node<T>& self) {
        const T* g = self.grad.data();
        auto& in_a = *self.inputs[0];
        auto& in_b = *self.inputs[1];
        if (in_a.requires_grad) {
            T* ga = in_a.grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i];
        }
        if (in_b.requires_grad) {
            T* gb = in_b.grad_data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[same ? i : i % n] += g[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
        auto& in_a = *self.inputs[0];
        auto& in_b = *self.inputs[1];
        const T* g = self.grad.data();
        if (in_a.requires_grad) {
            T* ga = in_a.grad_data();
            const T* vb = in_b.data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i] * vb[i];
        }
        if (in_b.requires_grad) {
            T* gb = in_b.grad_data();
            const T* va = in_a.data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += g[i] * va[i];
        }
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    return make_result<T>(a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_2d(a, "matmul");
    detail::require_2d(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<T> out(m * n);
    kernels::gemm_nn(a.data(), b.data(), out.data(), m, k, n, false);
    return make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
        auto& in_a = *self.inputs[0];
        auto& in_b = *self.inputs[1];
        const T* g = self.grad.data();
        if (in_a.requires_grad) {
            const auto bt = kernels::transposed(in_b.data(), k, n);
            kernels::gemm_nn(g, bt.data(), in_a.grad_data(), m, n, k, true);
        }
        if (in_b.requires_grad) {
            kernels::gemm_tn_acc(in_a.data(), g, in_b.grad_data(), m, k, n);
        }
    });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_2d(a, "transpose");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    return make_result<T>({c, r}, kernels::transposed(a.data(), r, c), {a}, [r, c](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_data();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

/// Softmax over the last axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& a) {
    const std::size_t rows = a.rows(), cols = a.cols();
    std::vector<T> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = a.data() + r * cols;
        T* y = out.data() + r * cols;
        const T mx = *std::max_element(x, x + cols);
        T sum = T(0);
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] = std::exp(x[c] - mx);
            sum += y[c];
        }
        for (std::size_t c = 0; c < cols; ++c) y[c] /= sum;
    }
    return make_result<T>(a.shape(), std::move(out), {a}, [rows, cols](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_data();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.value.data() + r * cols;
            const T* dy = self.grad.data() + r * cols;
            const T s = kernels::dot(y, dy, cols);
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - s);
        }
    });
}

/// Layer normalization over the last axis with affine gain and offset.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& offset, T eps = T(1e-5)) {
    const std::size_t rows = x.rows(), cols = x.cols();
    if (gain.size() != cols || offset.size() != cols) {
        throw ShapeError("layer_norm: affine parameters must have " + std::to_string(cols) + " entries");
    }
    std::vector<T> out(x.size()), xhat(x.size()), rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = x.data() + r * cols;
        T mean = T(0);
        for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
        mean /= T(cols);
        T var = T(0);
        for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
        var /= T(cols);
        rstd[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < cols; ++c) {
            const T h = (xr[c] - mean) * rstd[r];
            xhat[r * cols + c] = h;
            out[r * cols + c] = h * gain[c] + offset[c];
        }
    }
    return make_result<T>(x.shape(), std::move(out), {x, gain, offset},
                          [rows, cols, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        auto& in_x = *self.inputs[0];
        auto& in_g = *self.inputs[1];
        auto& in_b = *self.inputs[2];
        const T* dy = self.grad.data();
        const T* g = in_g.data();
        if (in_g.requires_grad) {
            T* gg = in_g.grad_data();
            for (std::size_t i = 0; i < rows * cols; ++i) gg[i % cols] += dy[i] * xhat[i];
        }
        if (in_b.requires_grad) {
            T* gb = in_b.grad_data();
            for (std::size_t i = 0; i < rows * cols; ++i) gb[i % cols] += dy[i];
        }
        if (in_x.requires_grad) {
            T* gx = in_x.grad_data();
            for (std::size_t r = 0; r < rows; ++r) {
                T mean_d = T(0), mean_dx = T(0);
                for (std::size_t c = 0; c < cols; ++c) {
                    const T d = dy[r * cols + c] * g[c];
                    mean_d += d;
                    mean_dx += d * xhat[r * cols + c];
                }
                mean_d /= T(cols);
                mean_dx /= T(cols);
                for (std::size_t c = 0; c < cols; ++c) {
                    const T d = dy[r * cols + c] * g[c];
                    gx[r * cols + c] += rstd[r] * (d - mean_d - xhat[r * cols + c] * mean_dx);
                }
            }
        }
    });
}

/// GELU, tanh approximation.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k = T(0.044715);
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = a[i];
        out[i] = T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x)));
    }
    return make_result<T>(a.shape(), std::move(out), {a}, [](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_data();
        const T* xs = in.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T x = xs[i];
            const T t = std::tanh(c * (x + k * x * x * x));
            const T d = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
            g[i] += self.grad[i] * d;
        }
    });
}

/// Row gather: out[i] = table[ids[i]].
template <class T>
Tensor<T> embed(const Tensor<T>& table, std::span<const int> ids) {
    detail::require_2d(table, "embed");
    const std::size_t vocab = table.shape()[0], d = table.shape()[1];
    if (ids.empty()) {
        throw ShapeError("embed: empty id list");
    }
    std::vector<T> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw ShapeError("embed: id " + std::to_string(ids[i]) + " out of range [0," + std::to_string(vocab) + ")");
        }
        std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
    }
    return make_result<T>({ids.size(), d}, std::move(out), {table},
                          [d, idx = std::vector<int>(ids.begin(), ids.end())](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_data();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            T* row = g + static_cast<std::size_t>(idx[i]) * d;
            const T* src = self.grad.data() + i * d;
            for (std::size_t c = 0; c < d; ++c) row[c] += src[c];
        }
    });
}

/// Stacks tensors along rows. 1-D parts count as a single row.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat: no inputs");
    }
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != cols) {
            throw ShapeError("concat: column mismatch " + shape_str(p.shape()) + " vs " + std::to_string(cols));
        }
        rows += p.rows();
    }
    std::vector<T> out;
    out.reserve(rows * cols);
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(out.size());
        out.insert(out.end(), p.data(), p.data() + p.size());
    }
    return make_result<T>({rows, cols}, std::move(out), parts, [offsets = std::move(offsets)](Node<T>& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            auto& in = *self.inputs[k];
            if (!in.requires_grad) continue;
            T* g = in.grad_data();
            const T* src = self.grad.data() + offsets[k];
            for (std::size_t i = 0; i < in.size(); ++i) g[i] += src[i];
        }
    });
}

/// Rows [begin, end) of a 2-D tensor.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t begin, std::size_t end) {
    detail::require_2d(a, "slice");
    if (begin >= end || end > a.shape()[0]) {
        throw ShapeError("slice: invalid row range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + shape_str(a.shape()));
    }
    const std::size_t cols = a.cols();
    std::vector<T> out(a.data() + begin * cols, a.data() + end * cols);
    return make_result<T>({end - begin, cols}, std::move(out), {a}, [begin, cols](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_data() + begin * cols;
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    T s = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
    return make_result<T>({1}, {s}, {a}, [](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_data();
        for (std::size_t i = 0; i < in.size(); ++i) g[i] += self.grad[0];
    });
}

template <class T>
Tensor<T> dot(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: size mismatch");
    }
    return make_result<T>({1}, {kernels::dot(a.data(), b.data(), a.size())}, {a, b}, [](Node<T>& self) {
        auto& in_a = *self.inputs[0];
        auto& in_b = *self.inputs[1];
        const T g = self.grad[0];
        // Read both values first: a and b may be the same node.
        const T* va = in_a.data();
        const T* vb = in_b.data();
        if (in_a.requires_grad) {
            T* ga = in_a.grad_data();
            for (std::size_t i = 0; i < in_a.size(); ++i) ga[i] += g * vb[i];
        }
        if (in_b.requires_grad) {
            T* gb = in_b.grad_data();
            for (std::size_t i = 0; i < in_b.size(); ++i) gb[i] += g * va[i];
        }
    });
}

/// Mean cross-entropy over rows where mask is set.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
    const std::size_t rows = logits.rows(), vocab = logits.cols();
    if (targets.size() != rows || mask.size() != rows) {
        throw ShapeError("cross_entropy: targets/mask length " + std::to_string(targets.size()) + "/" +
                         std::to_string(mask.size()) + " vs " + std::to_string(rows) + " rows");
    }
    std::size_t count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (count == 0) {
        throw ShapeError("cross_entropy: empty mask");
    }
    std::vector<T> probs(logits.size(), T(0));
    T total = T(0);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
            throw ShapeError("cross_entropy: target id out of range");
        }
        const T* x = logits.data() + r * vocab;
        const T mx = *std::max_element(x, x + vocab);
        T s = T(0);
        for (std::size_t c = 0; c < vocab; ++c) s += std::exp(x[c] - mx);
        const T lse = mx + std::log(s);
        total += lse - x[targets[r]];
        for (std::size_t c = 0; c < vocab; ++c) probs[r * vocab + c] = std::exp(x[c] - lse);
    }
    const T inv = T(1) / T(count);
    return make_result<T>({1}, {total * inv}, {logits},
                          [vocab, inv, probs = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end()),
                           mk = std::vector<std::uint8_t>(mask.begin(), mask.end())](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_data();
        const T scale_ = self.grad[0] * inv;
        for (std::size_t r = 0; r < mk.size(); ++r) {
            if (!mk[r]) continue;
            for (std::size_t c = 0; c < vocab; ++c) g[r * vocab + c] += scale_ * probs[r * vocab + c];
            g[r * vocab + static_cast<std::size_t>(tg[r])] -= scale_;
        }
    });
}

/// Per-head attention probabilities captured during a forward pass;
/// heads[h] is a row-major S×S matrix.
struct AttentionCapture {
    std::size_t seq_len = 0;
    std::vector<std::vector<double>> heads;
};

/// Fused multi-head self-attention over a packed [S, 3d] projection
/// (queries, keys, values side by side). Returns [S, d].
template <class T>
Tensor<T> self_attention(const Tensor<T>& qkv, std::size_t n_heads, bool causal = true,
                         AttentionCapture* capture = nullptr) {
    detail::require_2d(qkv, "self_attention");
    const std::size_t seq = qkv.shape()[0];
    if (qkv.shape()[1] % 3 != 0 || (qkv.shape()[1] / 3) % n_heads != 0) {
        throw ShapeError("self_attention: width " + std::to_string(qkv.shape()[1]) + " incompatible with " +
                         std::to_string(n_heads) + " heads");
    }
    const std::size_t d = qkv.shape()[1] / 3, dh = d / n_heads, stride = 3 * d;
    const T inv_sqrt = T(1) / std::sqrt(T(dh));
    const T* x = qkv.data();
    std::vector<T> probs(n_heads * seq * seq, T(0));
    std::vector<T> out(seq * d, T(0));
    for (std::size_t h = 0; h < n_heads; ++h) {
        for (std::size_t i = 0; i < seq; ++i) {
            const T* q = x + i * stride + h * dh;
            T* p = probs.data() + (h * seq + i) * seq;
            const std::size_t lim = causal ? i + 1 : seq;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < lim; ++j) {
                p[j] = kernels::dot(q, x + j * stride + d + h * dh, dh) * inv_sqrt;
                mx = std::max(mx, p[j]);
            }
            T s = T(0);
            for (std::size_t j = 0; j < lim; ++j) {
                p[j] = std::exp(p[j] - mx);
                s += p[j];
            }
            T* o = out.data() + i * d + h * dh;
            for (std::size_t j = 0; j < lim; ++j) {
                p[j] /= s;
                const T* v = x + j * stride + 2 * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) o[c] += p[j] * v[c];
            }
        }
    }
    if (capture) {
        capture->seq_len = seq;
        capture->heads.assign(n_heads, {});
        for (std::size_t h = 0; h < n_heads; ++h) {
            capture->heads[h].assign(probs.begin() + h * seq * seq, probs.begin() + (h + 1) * seq * seq);
        }
    }
    return make_result<T>({seq, d}, std::move(out), {qkv},
                          [=, probs = std::move(probs)](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        const T* xv = in.data();
        T* g = in.grad_data();
        const T* dout = self.grad.data();
        std::vector<T> dp(seq);
        for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t i = 0; i < seq; ++i) {
                const T* p = probs.data() + (h * seq + i) * seq;
                const T* doi = dout + i * d + h * dh;
                const std::size_t lim = causal ? i + 1 : seq;
                T s = T(0);
                for (std::size_t j = 0; j < lim; ++j) {
                    dp[j] = kernels::dot(doi, xv + j * stride + 2 * d + h * dh, dh);
                    s += p[j] * dp[j];
                }
                const T* q = xv + i * stride + h * dh;
                T* gq = g + i * stride + h * dh;
                for (std::size_t j = 0; j < lim; ++j) {
                    const T ds = p[j] * (dp[j] - s) * inv_sqrt;
                    const T* k = xv + j * stride + d + h * dh;
                    T* gk = g + j * stride + d + h * dh;
                    T* gv = g + j * stride + 2 * d + h * dh;
                    for (std::size_t c = 0; c < dh; ++c) {
                        gq[c] += ds * k[c];
                        gk[c] += ds * q[c];
                        gv[c] += p[j] * doi[c];
                    }
                }
            }
        }
    });
}

}  // namespace needlestack::nn
