#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mapunetr {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // same length as data once touched
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void()> backward_fn;  // adds into inputs' grads

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

}  // namespace detail

// Dense row-major tensor. A cheap handle around a shared node; ops on
// tensors with requires_grad build a reverse-mode graph as a side effect.
template <typename T>
class Tensor {
public:
    using Node = detail::Node<T>;

    Tensor() : node_(std::make_shared<Node>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<Node>()) {
        node_->shape = std::move(shape);
        node_->data.assign(shape_numel(node_->shape), fill);
    }

    static Tensor from(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        return t;
    }

    static Tensor scalar(T v) { return from({1}, {v}); }

    const Shape& shape() const { return node_->shape; }
    size_t numel() const { return node_->data.size(); }
    size_t dim(size_t i) const { return node_->shape.at(i); }
    size_t ndim() const { return node_->shape.size(); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }
    std::vector<T>& grad() { return node_->grad; }
    const std::vector<T>& grad() const { return node_->grad; }

    T item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

    std::shared_ptr<Node> node() const { return node_; }

    // Value copy with no graph linkage.
    Tensor detached() const { return from(shape(), data()); }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

// Builds the result tensor and registers the backward rule when any input
// participates in a gradient computation.
template <typename T>
Tensor<T> op(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
             std::function<void(Node<T>&)> backward) {
    Tensor<T> res = Tensor<T>::from(std::move(shape), std::move(data));
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (needs) {
        res.set_requires_grad(true);
        for (const auto& in : inputs) res.node()->inputs.push_back(in.node());
        Node<T>* self = res.node().get();
        res.node()->backward_fn = [self, fn = std::move(backward)]() { fn(*self); };
    }
    return res;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward pass

// Reverse-topological traversal from a scalar loss. Gradients accumulate
// additively into every reachable tensor with requires_grad; the caller is
// responsible for zeroing between steps.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));

    using Node = detail::Node<T>;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->inputs.size()) {
            Node* child = n->inputs[i++].get();
            if (seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn();
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise ops

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    return detail::op<T>(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    return detail::op<T>(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
        }
    });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("div: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
    auto an = a.node(), bn = b.node();
    return detail::op<T>(a.shape(), std::move(out), {a, b}, [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] / bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                T d = bn->data[i];
                bn->grad[i] -= self.grad[i] * an->data[i] / (d * d);
            }
        }
    });
}

// a*k + c, elementwise with scalar constants.
template <typename T>
Tensor<T> affine(const Tensor<T>& a, T k, T c) {
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * k + c;
    auto an = a.node();
    return detail::op<T>(a.shape(), std::move(out), {a}, [an, k](detail::Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * k;
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T k) {
    return affine(a, k, T(0));
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, scale(b, T(-1)));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
    auto an = a.node();
    return detail::op<T>(a.shape(), std::move(out), {a}, [an](detail::Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (an->data[i] > T(0)) an->grad[i] += self.grad[i];
    });
}

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    const T inv_sqrt2 = T(0.7071067811865475244);
    const T inv_sqrt2pi = T(0.3989422804014326779);
    std::vector<T> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) {
        T x = a.data()[i];
        out[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
    }
    auto an = a.node();
    return detail::op<T>(a.shape(), std::move(out), {a}, [an, inv_sqrt2, inv_sqrt2pi](detail::Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            T x = an->data[i];
            T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
            an->grad[i] += self.grad[i] * (cdf + x * pdf);
        }
    });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = T(0);
    for (T v : a.data()) s += v;
    auto an = a.node();
    return detail::op<T>({1}, {s}, {a}, [an](detail::Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0];
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    auto an = a.node();
    return detail::op<T>(std::move(shape), a.data(), {a}, [an](detail::Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// matrix ops (2-D)

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    const T* A = a.data().data();
    const T* B = b.data().data();
    for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
            T av = A[i * k + p];
            const T* brow = B + p * n;
            T* orow = out.data() + i * n;
            for (size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    auto an = a.node(), bn = b.node();
    return detail::op<T>({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::Node<T>& self) {
        const T* G = self.grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            // grad_a = g . b^T
            for (size_t i = 0; i < m; ++i)
                for (size_t p = 0; p < k; ++p) {
                    T s = T(0);
                    const T* grow = G + i * n;
                    const T* brow = bn->data.data() + p * n;
                    for (size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                    an->grad[i * k + p] += s;
                }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            // grad_b = a^T . g
            for (size_t p = 0; p < k; ++p)
                for (size_t i = 0; i < m; ++i) {
                    T av = an->data[i * k + p];
                    const T* grow = G + i * n;
                    T* brow = bn->grad.data() + p * n;
                    for (size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    if (a.ndim() != 2) throw ShapeError("transpose2d: need 2-D tensor, got " + shape_str(a.shape()));
    const size_t m = a.dim(0), n = a.dim(1);
    std::vector<T> out(m * n);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
    auto an = a.node();
    return detail::op<T>({n, m}, std::move(out), {a}, [an, m, n](detail::Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) an->grad[i * n + j] += self.grad[j * m + i];
    });
}

// rows: x [N x D] + bias [D]
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.ndim() != 2 || bias.numel() != x.dim(1))
        throw ShapeError("add_row_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
    const size_t n = x.dim(0), d = x.dim(1);
    std::vector<T> out(x.data());
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) out[i * d + j] += bias.data()[j];
    auto xn = x.node(), bn = bias.node();
    return detail::op<T>(x.shape(), std::move(out), {x, bias}, [xn, bn, n, d](detail::Node<T>& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < d; ++j) bn->grad[j] += self.grad[i * d + j];
        }
    });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, size_t start, size_t len) {
    if (x.ndim() != 2 || start + len > x.dim(1))
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of " + shape_str(x.shape()));
    const size_t n = x.dim(0), d = x.dim(1);
    std::vector<T> out(n * len);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < len; ++j) out[i * len + j] = x.data()[i * d + start + j];
    auto xn = x.node();
    return detail::op<T>({n, len}, std::move(out), {x}, [xn, start, len, n, d](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < len; ++j) xn->grad[i * d + start + j] += self.grad[i * len + j];
    });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input list");
    const size_t n = parts[0].dim(0);
    size_t dtot = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != n)
            throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
        dtot += p.dim(1);
    }
    std::vector<T> out(n * dtot);
    size_t off = 0;
    for (const auto& p : parts) {
        const size_t d = p.dim(1);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < d; ++j) out[i * dtot + off + j] = p.data()[i * d + j];
        off += d;
    }
    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    std::vector<size_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.dim(1));
    }
    return detail::op<T>({n, dtot}, std::move(out), parts, [nodes, widths, n, dtot](detail::Node<T>& self) {
        size_t off = 0;
        for (size_t k = 0; k < nodes.size(); ++k) {
            const size_t d = widths[k];
            if (nodes[k]->requires_grad) {
                nodes[k]->ensure_grad();
                for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < d; ++j)
                        nodes[k]->grad[i * d + j] += self.grad[i * dtot + off + j];
            }
            off += d;
        }
    });
}

// ---------------------------------------------------------------------------
// softmax along an arbitrary axis, with max subtraction

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, size_t axis) {
    if (axis >= x.ndim())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    const size_t len = x.dim(axis);
    size_t outer = 1, inner = 1;
    for (size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);

    std::vector<T> out(x.numel());
    for (size_t o = 0; o < outer; ++o)
        for (size_t in = 0; in < inner; ++in) {
            const size_t base = o * len * inner + in;
            T mx = x.data()[base];
            for (size_t a = 1; a < len; ++a) mx = std::max(mx, x.data()[base + a * inner]);
            T sum = T(0);
            for (size_t a = 0; a < len; ++a) {
                T e = std::exp(x.data()[base + a * inner] - mx);
                out[base + a * inner] = e;
                sum += e;
            }
            for (size_t a = 0; a < len; ++a) out[base + a * inner] /= sum;
        }
    auto xn = x.node();
    return detail::op<T>(x.shape(), std::move(out), {x},
                         [xn, outer, inner, len](detail::Node<T>& self) {
                             if (!xn->requires_grad) return;
                             xn->ensure_grad();
                             for (size_t o = 0; o < outer; ++o)
                                 for (size_t in = 0; in < inner; ++in) {
                                     const size_t base = o * len * inner + in;
                                     T dot = T(0);
                                     for (size_t a = 0; a < len; ++a)
                                         dot += self.grad[base + a * inner] * self.data[base + a * inner];
                                     for (size_t a = 0; a < len; ++a) {
                                         const size_t idx = base + a * inner;
                                         xn->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                                     }
                                 }
                         });
}

// ---------------------------------------------------------------------------
// layer norm over the last axis of a 2-D tensor

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    if (x.ndim() != 2 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1))
        throw ShapeError("layer_norm: " + shape_str(x.shape()) + " with affine " +
                         shape_str(gamma.shape()));
    const size_t n = x.dim(0), d = x.dim(1);
    std::vector<T> out(n * d), xhat(n * d), inv_std(n);
    for (size_t i = 0; i < n; ++i) {
        T mean = T(0);
        for (size_t j = 0; j < d; ++j) mean += x.data()[i * d + j];
        mean /= T(d);
        T var = T(0);
        for (size_t j = 0; j < d; ++j) {
            T c = x.data()[i * d + j] - mean;
            var += c * c;
        }
        var /= T(d);
        T is = T(1) / std::sqrt(var + eps);
        inv_std[i] = is;
        for (size_t j = 0; j < d; ++j) {
            T h = (x.data()[i * d + j] - mean) * is;
            xhat[i * d + j] = h;
            out[i * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return detail::op<T>(
        x.shape(), std::move(out), {x, gamma, beta},
        [xn, gn, bn, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
            for (size_t i = 0; i < n; ++i) {
                if (gn->requires_grad || bn->requires_grad) {
                    gn->ensure_grad();
                    bn->ensure_grad();
                    for (size_t j = 0; j < d; ++j) {
                        gn->grad[j] += self.grad[i * d + j] * xhat[i * d + j];
                        bn->grad[j] += self.grad[i * d + j];
                    }
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    // dL/dx = inv_std/d * (d*gy - sum(gy) - xhat*sum(gy*xhat)),
                    // gy = g * gamma
                    T sum_gy = T(0), sum_gyx = T(0);
                    for (size_t j = 0; j < d; ++j) {
                        T gy = self.grad[i * d + j] * gn->data[j];
                        sum_gy += gy;
                        sum_gyx += gy * xhat[i * d + j];
                    }
                    for (size_t j = 0; j < d; ++j) {
                        T gy = self.grad[i * d + j] * gn->data[j];
                        xn->grad[i * d + j] +=
                            inv_std[i] * (gy - (sum_gy + xhat[i * d + j] * sum_gyx) / T(d));
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// convolution (cross-correlation) on [B x C x H x W]

inline size_t conv_out_extent(size_t in, size_t k, size_t stride, size_t pad) {
    size_t padded = in + 2 * pad;
    if (padded < k || (padded - k) % stride != 0)
        throw ShapeError("conv2d: non-integral output extent for input " + std::to_string(in) +
                         ", kernel " + std::to_string(k) + ", stride " + std::to_string(stride) +
                         ", padding " + std::to_string(pad));
    return (padded - k) / stride + 1;
}

// x: [B,Cin,H,W], kernel: [Cout,Cin,kh,kw]
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, size_t stride = 1, size_t pad = 0) {
    if (x.ndim() != 4 || kernel.ndim() != 4)
        throw ShapeError("conv2d: need 4-D input and kernel, got " + shape_str(x.shape()) + " and " +
                         shape_str(kernel.shape()));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    const size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t Co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != Ci)
        throw ShapeError("conv2d: channel mismatch, input " + shape_str(x.shape()) + " vs kernel " +
                         shape_str(kernel.shape()));
    const size_t Ho = conv_out_extent(H, kh, stride, pad);
    const size_t Wo = conv_out_extent(W, kw, stride, pad);

    std::vector<T> out(B * Co * Ho * Wo, T(0));
    const T* X = x.data().data();
    const T* K = kernel.data().data();
    for (size_t b = 0; b < B; ++b)
        for (size_t co = 0; co < Co; ++co) {
            T* oplane = out.data() + (b * Co + co) * Ho * Wo;
            for (size_t ci = 0; ci < Ci; ++ci) {
                const T* xplane = X + (b * Ci + ci) * H * W;
                const T* kplane = K + (co * Ci + ci) * kh * kw;
                for (size_t r = 0; r < kh; ++r)
                    for (size_t c = 0; c < kw; ++c) {
                        T kv = kplane[r * kw + c];
                        for (size_t oh = 0; oh < Ho; ++oh) {
                            long ih = static_cast<long>(oh * stride + r) - static_cast<long>(pad);
                            if (ih < 0 || ih >= static_cast<long>(H)) continue;
                            const T* xrow = xplane + ih * W;
                            T* orow = oplane + oh * Wo;
                            for (size_t ow = 0; ow < Wo; ++ow) {
                                long iw = static_cast<long>(ow * stride + c) - static_cast<long>(pad);
                                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                orow[ow] += kv * xrow[iw];
                            }
                        }
                    }
            }
        }

    auto xn = x.node(), kn = kernel.node();
    return detail::op<T>(
        {B, Co, Ho, Wo}, std::move(out), {x, kernel},
        [xn, kn, B, Ci, Co, H, W, Ho, Wo, kh, kw, stride, pad](detail::Node<T>& self) {
            const T* G = self.grad.data();
            if (xn->requires_grad) xn->ensure_grad();
            if (kn->requires_grad) kn->ensure_grad();
            for (size_t b = 0; b < B; ++b)
                for (size_t co = 0; co < Co; ++co) {
                    const T* gplane = G + (b * Co + co) * Ho * Wo;
                    for (size_t ci = 0; ci < Ci; ++ci) {
                        const T* xplane = xn->data.data() + (b * Ci + ci) * H * W;
                        T* gxplane = xn->requires_grad ? xn->grad.data() + (b * Ci + ci) * H * W : nullptr;
                        const T* kplane = kn->data.data() + (co * Ci + ci) * kh * kw;
                        T* gkplane = kn->requires_grad ? kn->grad.data() + (co * Ci + ci) * kh * kw : nullptr;
                        for (size_t r = 0; r < kh; ++r)
                            for (size_t c = 0; c < kw; ++c) {
                                T kv = kplane[r * kw + c];
                                T gk = T(0);
                                for (size_t oh = 0; oh < Ho; ++oh) {
                                    long ih = static_cast<long>(oh * stride + r) - static_cast<long>(pad);
                                    if (ih < 0 || ih >= static_cast<long>(H)) continue;
                                    const T* grow = gplane + oh * Wo;
                                    for (size_t ow = 0; ow < Wo; ++ow) {
                                        long iw = static_cast<long>(ow * stride + c) - static_cast<long>(pad);
                                        if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                        if (gxplane) gxplane[ih * W + iw] += kv * grow[ow];
                                        gk += grow[ow] * xplane[ih * W + iw];
                                    }
                                }
                                if (gkplane) gkplane[r * kw + c] += gk;
                            }
                    }
                }
        });
}

// x: [B,Cin,H,W], kernel: [Cin,Cout,kh,kw]; output extent (H-1)*stride + kh
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernel, size_t stride = 1) {
    if (x.ndim() != 4 || kernel.ndim() != 4)
        throw ShapeError("conv_transpose2d: need 4-D input and kernel, got " + shape_str(x.shape()) +
                         " and " + shape_str(kernel.shape()));
    if (stride < 1) throw ConfigError("conv_transpose2d: stride must be >= 1");
    const size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const size_t Co = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(0) != Ci)
        throw ShapeError("conv_transpose2d: channel mismatch, input " + shape_str(x.shape()) +
                         " vs kernel " + shape_str(kernel.shape()));
    const size_t Ho = (H - 1) * stride + kh;
    const size_t Wo = (W - 1) * stride + kw;

    std::vector<T> out(B * Co * Ho * Wo, T(0));
    const T* X = x.data().data();
    const T* K = kernel.data().data();
    for (size_t b = 0; b < B; ++b)
        for (size_t ci = 0; ci < Ci; ++ci) {
            const T* xplane = X + (b * Ci + ci) * H * W;
            for (size_t co = 0; co < Co; ++co) {
                T* oplane = out.data() + (b * Co + co) * Ho * Wo;
                const T* kplane = K + (ci * Co + co) * kh * kw;
                for (size_t ih = 0; ih < H; ++ih)
                    for (size_t iw = 0; iw < W; ++iw) {
                        T xv = xplane[ih * W + iw];
                        for (size_t r = 0; r < kh; ++r) {
                            T* orow = oplane + (ih * stride + r) * Wo + iw * stride;
                            const T* krow = kplane + r * kw;
                            for (size_t c = 0; c < kw; ++c) orow[c] += xv * krow[c];
                        }
                    }
            }
        }

    auto xn = x.node(), kn = kernel.node();
    return detail::op<T>(
        {B, Co, Ho, Wo}, std::move(out), {x, kernel},
        [xn, kn, B, Ci, Co, H, W, Ho, Wo, kh, kw, stride](detail::Node<T>& self) {
            const T* G = self.grad.data();
            if (xn->requires_grad) xn->ensure_grad();
            if (kn->requires_grad) kn->ensure_grad();
            for (size_t b = 0; b < B; ++b)
                for (size_t ci = 0; ci < Ci; ++ci) {
                    const T* xplane = xn->data.data() + (b * Ci + ci) * H * W;
                    T* gxplane = xn->requires_grad ? xn->grad.data() + (b * Ci + ci) * H * W : nullptr;
                    for (size_t co = 0; co < Co; ++co) {
                        const T* gplane = G + (b * Co + co) * Ho * Wo;
                        const T* kplane = kn->data.data() + (ci * Co + co) * kh * kw;
                        T* gkplane = kn->requires_grad ? kn->grad.data() + (ci * Co + co) * kh * kw : nullptr;
                        for (size_t ih = 0; ih < H; ++ih)
                            for (size_t iw = 0; iw < W; ++iw) {
                                T xv = xplane[ih * W + iw];
                                T gx = T(0);
                                for (size_t r = 0; r < kh; ++r) {
                                    const T* grow = gplane + (ih * stride + r) * Wo + iw * stride;
                                    const T* krow = kplane + r * kw;
                                    T* gkrow = gkplane ? gkplane + r * kw : nullptr;
                                    for (size_t c = 0; c < kw; ++c) {
                                        gx += grow[c] * krow[c];
                                        if (gkrow) gkrow[c] += grow[c] * xv;
                                    }
                                }
                                if (gxplane) gxplane[ih * W + iw] += gx;
                            }
                    }
                }
        });
}

// x: [B,C,H,W] + bias [C]
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.ndim() != 4 || bias.numel() != x.dim(1))
        throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
    const size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<T> out(x.data());
    for (size_t b = 0; b < B; ++b)
        for (size_t c = 0; c < C; ++c) {
            T bv = bias.data()[c];
            T* plane = out.data() + (b * C + c) * HW;
            for (size_t i = 0; i < HW; ++i) plane[i] += bv;
        }
    auto xn = x.node(), bn = bias.node();
    return detail::op<T>(x.shape(), std::move(out), {x, bias}, [xn, bn, B, C, HW](detail::Node<T>& self) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (size_t b = 0; b < B; ++b)
                for (size_t c = 0; c < C; ++c) {
                    const T* plane = self.grad.data() + (b * C + c) * HW;
                    T s = T(0);
                    for (size_t i = 0; i < HW; ++i) s += plane[i];
                    bn->grad[c] += s;
                }
        }
    });
}

// channel concat of [B,C,H,W] maps
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: empty input list");
    const size_t B = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
    size_t Ctot = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 4 || p.dim(0) != B || p.dim(2) != H || p.dim(3) != W)
            throw ShapeError("concat_channels: extent mismatch " + shape_str(p.shape()));
        Ctot += p.dim(1);
    }
    const size_t HW = H * W;
    std::vector<T> out(B * Ctot * HW);
    size_t coff = 0;
    for (const auto& p : parts) {
        const size_t C = p.dim(1);
        for (size_t b = 0; b < B; ++b)
            std::copy(p.data().begin() + b * C * HW, p.data().begin() + (b + 1) * C * HW,
                      out.begin() + (b * Ctot + coff) * HW);
        coff += C;
    }
    std::vector<std::shared_ptr<detail::Node<T>>> nodes;
    std::vector<size_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.dim(1));
    }
    return detail::op<T>({B, Ctot, H, W}, std::move(out), parts,
                         [nodes, widths, B, Ctot, HW](detail::Node<T>& self) {
                             size_t coff = 0;
                             for (size_t k = 0; k < nodes.size(); ++k) {
                                 const size_t C = widths[k];
                                 if (nodes[k]->requires_grad) {
                                     nodes[k]->ensure_grad();
                                     for (size_t b = 0; b < B; ++b) {
                                         const T* src = self.grad.data() + (b * Ctot + coff) * HW;
                                         T* dst = nodes[k]->grad.data() + b * C * HW;
                                         for (size_t i = 0; i < C * HW; ++i) dst[i] += src[i];
                                     }
                                 }
                                 coff += C;
                             }
                         });
}

// tokens [N x D] -> feature map [1 x D x rows x cols], token t at cell
// (t / cols, t % cols)
template <typename T>
Tensor<T> tokens_to_grid(const Tensor<T>& tokens, size_t rows, size_t cols) {
    if (tokens.ndim() != 2 || tokens.dim(0) != rows * cols)
        throw ShapeError("tokens_to_grid: " + shape_str(tokens.shape()) + " cannot fill a " +
                         std::to_string(rows) + "x" + std::to_string(cols) + " grid");
    const size_t N = tokens.dim(0), D = tokens.dim(1);
    std::vector<T> out(D * N);
    for (size_t t = 0; t < N; ++t)
        for (size_t d = 0; d < D; ++d) out[d * N + t] = tokens.data()[t * D + d];
    auto tn = tokens.node();
    return detail::op<T>({1, D, rows, cols}, std::move(out), {tokens}, [tn, N, D](detail::Node<T>& self) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (size_t t = 0; t < N; ++t)
            for (size_t d = 0; d < D; ++d) tn->grad[t * D + d] += self.grad[d * N + t];
    });
}

// ---------------------------------------------------------------------------
// batch normalization on [B,C,H,W]

enum class BnMode { kTrain, kInfer };

// Running stats are updated in place in train mode (value buffers only,
// never part of the graph). gamma/beta are the trainable affine pair.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, BnMode mode,
                     T momentum_bn = T(0.1), T eps = T(1e-5)) {
    if (eps <= T(0)) throw ConfigError("batch_norm: eps must be positive");
    if (x.ndim() != 4) throw ShapeError("batch_norm: need [BxCxHxW], got " + shape_str(x.shape()));
    const size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C || running_var.numel() != C)
        throw ShapeError("batch_norm: affine/stat extents must equal channel count " + std::to_string(C));

    const size_t n = B * HW;
    std::vector<T> mean(C), var(C);
    if (mode == BnMode::kTrain) {
        for (size_t c = 0; c < C; ++c) {
            T m = T(0);
            for (size_t b = 0; b < B; ++b) {
                const T* plane = x.data().data() + (b * C + c) * HW;
                for (size_t i = 0; i < HW; ++i) m += plane[i];
            }
            m /= T(n);
            T v = T(0);
            for (size_t b = 0; b < B; ++b) {
                const T* plane = x.data().data() + (b * C + c) * HW;
                for (size_t i = 0; i < HW; ++i) {
                    T d = plane[i] - m;
                    v += d * d;
                }
            }
            v /= T(n);
            mean[c] = m;
            var[c] = v;
            running_mean.data()[c] = (T(1) - momentum_bn) * running_mean.data()[c] + momentum_bn * m;
            running_var.data()[c] = (T(1) - momentum_bn) * running_var.data()[c] + momentum_bn * v;
        }
    } else {
        mean = running_mean.data();
        var = running_var.data();
    }

    std::vector<T> out(x.numel()), inv_std(C);
    for (size_t c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + eps);
    for (size_t b = 0; b < B; ++b)
        for (size_t c = 0; c < C; ++c) {
            const T* xp = x.data().data() + (b * C + c) * HW;
            T* op = out.data() + (b * C + c) * HW;
            T g = gamma.data()[c], bt = beta.data()[c], m = mean[c], is = inv_std[c];
            for (size_t i = 0; i < HW; ++i) op[i] = (xp[i] - m) * is * g + bt;
        }

    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    const bool train = (mode == BnMode::kTrain);
    return detail::op<T>(
        x.shape(), std::move(out), {x, gamma, beta},
        [xn, gn, bn, B, C, HW, n, train, mean = std::move(mean),
         inv_std = std::move(inv_std)](detail::Node<T>& self) {
            for (size_t c = 0; c < C; ++c) {
                T m = mean[c], is = inv_std[c], g = gn->data[c];
                T sum_g = T(0), sum_gx = T(0);
                for (size_t b = 0; b < B; ++b) {
                    const T* gp = self.grad.data() + (b * C + c) * HW;
                    const T* xp = xn->data.data() + (b * C + c) * HW;
                    for (size_t i = 0; i < HW; ++i) {
                        sum_g += gp[i];
                        sum_gx += gp[i] * (xp[i] - m) * is;
                    }
                }
                if (gn->requires_grad) {
                    gn->ensure_grad();
                    gn->grad[c] += sum_gx;
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    bn->grad[c] += sum_g;
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    for (size_t b = 0; b < B; ++b) {
                        const T* gp = self.grad.data() + (b * C + c) * HW;
                        const T* xp = xn->data.data() + (b * C + c) * HW;
                        T* gxp = xn->grad.data() + (b * C + c) * HW;
                        if (train) {
                            for (size_t i = 0; i < HW; ++i) {
                                T xh = (xp[i] - m) * is;
                                gxp[i] += g * is * (gp[i] - (sum_g + xh * sum_gx) / T(n));
                            }
                        } else {
                            for (size_t i = 0; i < HW; ++i) gxp[i] += g * is * gp[i];
                        }
                    }
                }
            }
        });
}

}  // namespace mapunetr
