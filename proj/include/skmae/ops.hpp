#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include "skmae/tensor.hpp"

namespace skmae {

namespace detail {

template <typename T>
Tensor<T> make_result(std::string_view op, Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(TensorNode<T>&)> backward_fn) {
    for (const T& v : data) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + " produced a non-finite value");
        }
    }
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    if (grad_enabled()) {
        bool any = false;
        for (const Tensor<T>* in : inputs) any = any || in->requires_grad();
        if (any) {
            node->requires_grad = true;
            for (const Tensor<T>* in : inputs) node->inputs.push_back(in->node());
            node->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor<T>(std::move(node));
}

// Right-aligned broadcast; each axis must match or be 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// For every flat index of `out`, the flat index of `in` it reads from.
inline std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
    const std::size_t n = numel_of(out);
    std::vector<std::size_t> map(n);
    const std::size_t in_n = numel_of(in);
    if (in == out) {
        std::iota(map.begin(), map.end(), std::size_t{0});
        return map;
    }
    if (in_n == 1) return map;
    const std::size_t r = out.size();
    const std::size_t off = r - in.size();
    // Trailing suffix: plain modulo.
    if (std::equal(in.begin(), in.end(), out.begin() + static_cast<std::ptrdiff_t>(off))) {
        for (std::size_t i = 0; i < n; ++i) map[i] = i % in_n;
        return map;
    }
    std::vector<std::size_t> in_strides(r, 0);
    std::size_t stride = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        in_strides[i + off] = in[i] == 1 ? 0 : stride;
        stride *= in[i];
    }
    std::vector<std::size_t> idx(r, 0);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        map[i] = pos;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            pos += in_strides[ax];
            if (idx[ax] < out[ax]) break;
            pos -= in_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    return map;
}

// outer × axis × inner decomposition around one axis.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

template <typename T, typename F, typename GA, typename GB>
Tensor<T> binary(std::string_view op, const Tensor<T>& a, const Tensor<T>& b, F f, GA da, GB db) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const std::size_t n = numel_of(out_shape);
    auto ma = std::make_shared<std::vector<std::size_t>>(broadcast_map(a.shape(), out_shape));
    auto mb = std::make_shared<std::vector<std::size_t>>(broadcast_map(b.shape(), out_shape));
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[(*ma)[i]], bv[(*mb)[i]]);
    return make_result<T>(op, std::move(out_shape), std::move(out), {&a, &b},
                          [ma, mb, da, db](TensorNode<T>& self) {
                              auto& A = *self.inputs[0];
                              auto& B = *self.inputs[1];
                              const std::size_t n = self.data.size();
                              if (A.requires_grad) {
                                  auto& g = A.ensure_grad();
                                  for (std::size_t i = 0; i < n; ++i) {
                                      const T x = A.data[(*ma)[i]], y = B.data[(*mb)[i]];
                                      g[(*ma)[i]] += da(x, y, self.data[i]) * self.grad[i];
                                  }
                              }
                              if (B.requires_grad) {
                                  auto& g = B.ensure_grad();
                                  for (std::size_t i = 0; i < n; ++i) {
                                      const T x = A.data[(*ma)[i]], y = B.data[(*mb)[i]];
                                      g[(*mb)[i]] += db(x, y, self.data[i]) * self.grad[i];
                                  }
                              }
                          });
}

template <typename T, typename F, typename G>
Tensor<T> unary(std::string_view op, const Tensor<T>& x, F f, G df) {
    const auto xv = x.data();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return make_result<T>(op, x.shape(), std::move(out), {&x}, [df](TensorNode<T>& self) {
        auto& X = *self.inputs[0];
        auto& g = X.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += df(X.data[i], self.data[i]) * self.grad[i];
        }
    });
}

// c[M×N] += a[M×K] · b[K×N]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[M×K] += g[M×N] · b[K×N]ᵀ
template <typename T>
void gemm_nt_acc(const T* g, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            T s = 0;
            const T* grow = g + i * n;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            c[i * k + p] += s;
        }
    }
}

// c[K×N] += a[M×K]ᵀ · g[M×N]
template <typename T>
void gemm_tn_acc(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av == T(0)) continue;
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (right-aligned broadcasting).

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary<T>(
        "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
        [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary<T>(
        "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T x, T y, T) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    return detail::unary<T>(
        "add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
    return detail::unary<T>(
        "mul_scalar", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
    return mul_scalar(x, T(-1));
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
    return detail::unary<T>(
        "pow", x, [p](T v) { return std::pow(v, p); },
        [p](T v, T) { return p == T(1) ? T(1) : p * std::pow(v, p - T(1)); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    return detail::unary<T>(
        "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
    return detail::unary<T>(
        "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

// PReLU with a single learnable slope (shape [1] or scalar).
template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope) {
    if (slope.numel() != 1) throw ShapeError("prelu slope must hold one value, got " + shape_str(slope.shape()));
    const T a = slope.item();
    const auto xv = x.data();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : a * xv[i];
    return detail::make_result<T>("prelu", x.shape(), std::move(out), {&x, &slope}, [](TensorNode<T>& self) {
        auto& X = *self.inputs[0];
        auto& A = *self.inputs[1];
        const T a = A.data[0];
        if (X.requires_grad) {
            auto& g = X.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += (X.data[i] > T(0) ? T(1) : a) * self.grad[i];
        }
        if (A.requires_grad) {
            T s = 0;
            for (std::size_t i = 0; i < X.data.size(); ++i) {
                if (X.data[i] <= T(0)) s += X.data[i] * self.grad[i];
            }
            A.ensure_grad()[0] += s;
        }
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation.

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return detail::make_result<T>("reshape", std::move(shape), std::move(out), {&x}, [](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, Shape shape) {
    if (detail::broadcast_shape(x.shape(), shape) != shape) {
        throw ShapeError("cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    auto map = std::make_shared<std::vector<std::size_t>>(detail::broadcast_map(x.shape(), shape));
    const auto xv = x.data();
    std::vector<T> out(map->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*map)[i]];
    return detail::make_result<T>("broadcast_to", std::move(shape), std::move(out), {&x},
                                  [map](TensorNode<T>& self) {
                                      auto& g = self.inputs[0]->ensure_grad();
                                      for (std::size_t i = 0; i < map->size(); ++i) g[(*map)[i]] += self.grad[i];
                                  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const std::size_t ax = parts[0].normalize_axis(axis);
    Shape out_shape = parts[0].shape();
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != out_shape.size()) {
            throw ShapeError("concat rank mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(s));
        }
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != ax && s[i] != parts[0].shape()[i]) {
                throw ShapeError("concat shape mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(s));
            }
        }
        out_shape[ax] += s[ax];
    }
    const auto split = detail::split_at(out_shape, ax);
    std::vector<T> out(numel_of(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t ext = p.shape()[ax];
        const auto pv = p.data();
        for (std::size_t o = 0; o < split.outer; ++o) {
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * ext * split.inner), ext * split.inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * split.extent + off) * split.inner));
        }
        off += ext;
    }
    std::vector<std::size_t> extents;
    for (const auto& p : parts) extents.push_back(p.shape()[ax]);
    auto result = detail::make_result<T>("concat", out_shape, std::move(out), {}, {});
    if (grad_enabled() && std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); })) {
        auto& node = *result.node();
        node.requires_grad = true;
        for (const auto& p : parts) node.inputs.push_back(p.node());
        node.backward_fn = [split, offsets, extents](TensorNode<T>& self) {
            for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                auto& in = *self.inputs[k];
                if (!in.requires_grad) continue;
                auto& g = in.ensure_grad();
                const std::size_t span = extents[k] * split.inner;
                for (std::size_t o = 0; o < split.outer; ++o) {
                    for (std::size_t e = 0; e < span; ++e) {
                        g[o * span + e] += self.grad[(o * split.extent + offsets[k]) * split.inner + e];
                    }
                }
            }
        };
    }
    return result;
}

// Selects entries along `axis` by index (repeats allowed).
template <typename T>
Tensor<T> index_select(const Tensor<T>& x, int axis, std::vector<std::size_t> indices) {
    const std::size_t ax = x.normalize_axis(axis);
    const auto split = detail::split_at(x.shape(), ax);
    for (auto i : indices) {
        if (i >= split.extent) {
            throw ShapeError("index " + std::to_string(i) + " out of range for axis of extent " +
                             std::to_string(split.extent));
        }
    }
    if (indices.empty()) throw ShapeError("index_select with empty index list");
    Shape out_shape = x.shape();
    out_shape[ax] = indices.size();
    const std::size_t k = indices.size();
    const auto xv = x.data();
    std::vector<T> out(split.outer * k * split.inner);
    for (std::size_t o = 0; o < split.outer; ++o) {
        for (std::size_t j = 0; j < k; ++j) {
            std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * split.extent + indices[j]) * split.inner),
                        split.inner, out.begin() + static_cast<std::ptrdiff_t>((o * k + j) * split.inner));
        }
    }
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(indices));
    return detail::make_result<T>("index_select", std::move(out_shape), std::move(out), {&x},
                                  [split, idx](TensorNode<T>& self) {
                                      auto& g = self.inputs[0]->ensure_grad();
                                      const std::size_t k = idx->size();
                                      for (std::size_t o = 0; o < split.outer; ++o) {
                                          for (std::size_t j = 0; j < k; ++j) {
                                              for (std::size_t e = 0; e < split.inner; ++e) {
                                                  g[(o * split.extent + (*idx)[j]) * split.inner + e] +=
                                                      self.grad[(o * k + j) * split.inner + e];
                                              }
                                          }
                                      }
                                  });
}

// Copy of x with the entries at `indices` along `axis` replaced by src
// (src has extent indices.size() along that axis). Indices must be distinct.
template <typename T>
Tensor<T> index_put(const Tensor<T>& x, int axis, std::vector<std::size_t> indices, const Tensor<T>& src) {
    const std::size_t ax = x.normalize_axis(axis);
    const auto split = detail::split_at(x.shape(), ax);
    Shape expect = x.shape();
    expect[ax] = indices.size();
    if (src.shape() != expect) {
        throw ShapeError("index_put source shape " + shape_str(src.shape()) + " does not match " +
                         shape_str(expect));
    }
    std::vector<char> hit(split.extent, 0);
    for (auto i : indices) {
        if (i >= split.extent) {
            throw ShapeError("index " + std::to_string(i) + " out of range for axis of extent " +
                             std::to_string(split.extent));
        }
        if (hit[i]) throw ShapeError("index_put with duplicate index " + std::to_string(i));
        hit[i] = 1;
    }
    const std::size_t k = indices.size();
    std::vector<T> out(x.data().begin(), x.data().end());
    const auto sv = src.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
        for (std::size_t j = 0; j < k; ++j) {
            std::copy_n(sv.begin() + static_cast<std::ptrdiff_t>((o * k + j) * split.inner), split.inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * split.extent + indices[j]) * split.inner));
        }
    }
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(indices));
    auto hits = std::make_shared<std::vector<char>>(std::move(hit));
    return detail::make_result<T>(
        "index_put", x.shape(), std::move(out), {&x, &src}, [split, idx, hits](TensorNode<T>& self) {
            auto& X = *self.inputs[0];
            auto& S = *self.inputs[1];
            const std::size_t k = idx->size();
            if (X.requires_grad) {
                auto& g = X.ensure_grad();
                for (std::size_t o = 0; o < split.outer; ++o) {
                    for (std::size_t e = 0; e < split.extent; ++e) {
                        if ((*hits)[e]) continue;
                        for (std::size_t i = 0; i < split.inner; ++i) {
                            const std::size_t p = (o * split.extent + e) * split.inner + i;
                            g[p] += self.grad[p];
                        }
                    }
                }
            }
            if (S.requires_grad) {
                auto& g = S.ensure_grad();
                for (std::size_t o = 0; o < split.outer; ++o) {
                    for (std::size_t j = 0; j < k; ++j) {
                        for (std::size_t i = 0; i < split.inner; ++i) {
                            g[(o * k + j) * split.inner + i] +=
                                self.grad[(o * split.extent + (*idx)[j]) * split.inner + i];
                        }
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = 0;
    for (const T& v : x.data()) s += v;
    return detail::make_result<T>("sum", {}, {s}, {&x}, [](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return mul_scalar(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Sum over one axis; the axis is dropped unless keepdim.
template <typename T>
Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim = false) {
    const std::size_t ax = x.normalize_axis(axis);
    const auto split = detail::split_at(x.shape(), ax);
    Shape out_shape = x.shape();
    if (keepdim) {
        out_shape[ax] = 1;
    } else {
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
    }
    const auto xv = x.data();
    std::vector<T> out(split.outer * split.inner, T(0));
    for (std::size_t o = 0; o < split.outer; ++o) {
        for (std::size_t e = 0; e < split.extent; ++e) {
            for (std::size_t i = 0; i < split.inner; ++i) {
                out[o * split.inner + i] += xv[(o * split.extent + e) * split.inner + i];
            }
        }
    }
    return detail::make_result<T>("sum_axis", std::move(out_shape), std::move(out), {&x},
                                  [split](TensorNode<T>& self) {
                                      auto& g = self.inputs[0]->ensure_grad();
                                      for (std::size_t o = 0; o < split.outer; ++o) {
                                          for (std::size_t e = 0; e < split.extent; ++e) {
                                              for (std::size_t i = 0; i < split.inner; ++i) {
                                                  g[(o * split.extent + e) * split.inner + i] +=
                                                      self.grad[o * split.inner + i];
                                              }
                                          }
                                      }
                                  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim = false) {
    const std::size_t ext = x.size(axis);
    return mul_scalar(sum(x, axis, keepdim), T(1) / static_cast<T>(ext));
}

// Euclidean norm over the last axis (dropped).
template <typename T>
Tensor<T> l2norm(const Tensor<T>& x) {
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    const auto xv = x.data();
    std::vector<T> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T s = 0;
        for (std::size_t j = 0; j < d; ++j) s += xv[r * d + j] * xv[r * d + j];
        out[r] = std::sqrt(s);
    }
    return detail::make_result<T>("l2norm", std::move(out_shape), std::move(out), {&x}, [d](TensorNode<T>& self) {
        auto& X = *self.inputs[0];
        auto& g = X.ensure_grad();
        for (std::size_t r = 0; r < self.data.size(); ++r) {
            const T n = self.data[r];
            if (n == T(0)) continue;
            for (std::size_t j = 0; j < d; ++j) g[r * d + j] += X.data[r * d + j] / n * self.grad[r];
        }
    });
}

// ---------------------------------------------------------------------------
// Softmax family over the last axis.

namespace detail {

// mask (may be empty) has length = last-two-axes product; zero entries are excluded.
template <typename T>
Tensor<T> softmax_impl(std::string_view op, const Tensor<T>& x, std::shared_ptr<const std::vector<std::uint8_t>> mask) {
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    const std::size_t mask_rows = mask ? mask->size() / d : 0;
    const auto xv = x.data();
    std::vector<T> out(xv.size(), T(0));
    for (std::size_t r = 0; r < rows; ++r) {
        const std::uint8_t* m = mask ? mask->data() + (r % mask_rows) * d : nullptr;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < d; ++j) {
            if (!m || m[j]) mx = std::max(mx, xv[r * d + j]);
        }
        if (mx == -std::numeric_limits<T>::infinity()) {
            throw ShapeError(std::string(op) + ": row with no admissible entries");
        }
        T s = 0;
        for (std::size_t j = 0; j < d; ++j) {
            if (!m || m[j]) {
                out[r * d + j] = std::exp(xv[r * d + j] - mx);
                s += out[r * d + j];
            }
        }
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= s;
    }
    return make_result<T>(op, x.shape(), std::move(out), {&x}, [d](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        const std::size_t rows = self.data.size() / d;
        for (std::size_t r = 0; r < rows; ++r) {
            T dot = 0;
            for (std::size_t j = 0; j < d; ++j) dot += self.grad[r * d + j] * self.data[r * d + j];
            for (std::size_t j = 0; j < d; ++j) {
                g[r * d + j] += self.data[r * d + j] * (self.grad[r * d + j] - dot);
            }
        }
    });
}

}  // namespace detail

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    return detail::softmax_impl<T>("softmax", x, nullptr);
}

// Softmax restricted to entries where mask != 0; excluded entries are exactly 0.
// mask has shape equal to the trailing axes it covers (typically [N, N]).
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::shared_ptr<const std::vector<std::uint8_t>> mask) {
    const std::size_t d = x.shape().back();
    if (!mask || mask->empty() || mask->size() % d != 0 || x.numel() % mask->size() != 0) {
        throw ShapeError("masked_softmax mask does not tile input of shape " + shape_str(x.shape()));
    }
    return detail::softmax_impl<T>("masked_softmax", x, std::move(mask));
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.numel() / d;
    const auto xv = x.data();
    std::vector<T> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        T mx = xv[r * d];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, xv[r * d + j]);
        T s = 0;
        for (std::size_t j = 0; j < d; ++j) s += std::exp(xv[r * d + j] - mx);
        const T lse = mx + std::log(s);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] - lse;
    }
    return detail::make_result<T>("log_softmax", x.shape(), std::move(out), {&x}, [d](TensorNode<T>& self) {
        auto& g = self.inputs[0]->ensure_grad();
        const std::size_t rows = self.data.size() / d;
        for (std::size_t r = 0; r < rows; ++r) {
            T gs = 0;
            for (std::size_t j = 0; j < d; ++j) gs += self.grad[r * d + j];
            for (std::size_t j = 0; j < d; ++j) {
                g[r * d + j] += self.grad[r * d + j] - std::exp(self.data[r * d + j]) * gs;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Matrix multiply over the last two axes. Leading (batch) axes must either
// match, or one operand is a plain matrix shared across the other's batch.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.shape()[a.rank() - 2], k = a.shape().back();
    const std::size_t k2 = b.shape()[b.rank() - 2], n = b.shape().back();
    const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    if (k != k2 || !(a_batch == b_batch || a_batch.empty() || b_batch.empty())) {
        throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const Shape& batch = a_batch.empty() ? b_batch : a_batch;
    const std::size_t nb = numel_of(batch);
    const bool a_shared = a_batch.empty() && nb > 1;
    const bool b_shared = b_batch.empty() && nb > 1;
    Shape out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<T> out(nb * m * n, T(0));
    const T* av = a.data().data();
    const T* bv = b.data().data();
    if (b_shared) {
        // Rows of all batches are contiguous in a: one big product.
        detail::gemm_acc(av, bv, out.data(), nb * m, k, n);
    } else {
        for (std::size_t i = 0; i < nb; ++i) {
            detail::gemm_acc(av + (a_shared ? 0 : i * m * k), bv + i * k * n, out.data() + i * m * n, m, k, n);
        }
    }
    return detail::make_result<T>(
        "matmul", std::move(out_shape), std::move(out), {&a, &b},
        [m, k, n, nb, a_shared, b_shared](TensorNode<T>& self) {
            auto& A = *self.inputs[0];
            auto& B = *self.inputs[1];
            const T* g = self.grad.data();
            if (A.requires_grad) {
                T* ga = A.ensure_grad().data();
                if (b_shared) {
                    detail::gemm_nt_acc(g, B.data.data(), ga, nb * m, k, n);
                } else {
                    for (std::size_t i = 0; i < nb; ++i) {
                        detail::gemm_nt_acc(g + i * m * n, B.data.data() + i * k * n, ga + (a_shared ? 0 : i * m * k),
                                            m, k, n);
                    }
                }
            }
            if (B.requires_grad) {
                T* gb = B.ensure_grad().data();
                if (b_shared) {
                    detail::gemm_tn_acc(A.data.data(), g, gb, nb * m, k, n);
                } else {
                    for (std::size_t i = 0; i < nb; ++i) {
                        detail::gemm_tn_acc(A.data.data() + (a_shared ? 0 : i * m * k), g + i * m * n,
                                            gb + i * k * n, m, k, n);
                    }
                }
            }
        });
}

}  // namespace skmae
