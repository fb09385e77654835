#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "hpun/common.hpp"
#include "hpun/random.hpp"

namespace hpun {

template <class T>
struct Tensor;

// One reverse-mode tape entry. `backward` reads the node's output gradient
// and accumulates into the input gradients; inputs are held by value so
// their buffers stay alive for the lifetime of the tape.
template <class T>
struct TapeNode {
    const char* op = "";
    std::vector<Tensor<T>> inputs;
    std::shared_ptr<std::vector<T>> out_grad;
    std::function<void(TapeNode<T>&, const std::vector<T>&)> backward;
};

// Rank-4 tensor in BCHW layout. Data and gradient buffers are shared, so
// copies are cheap views onto the same storage.
template <class T>
struct Tensor {
    Shape4 shape;
    std::shared_ptr<std::vector<T>> data;
    std::shared_ptr<std::vector<T>> grad;
    bool requires_grad = false;
    std::shared_ptr<TapeNode<T>> node;

    Tensor() = default;

    int64_t numel() const { return shape.numel(); }
    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    std::vector<T>& vec() { return *data; }
    const std::vector<T>& vec() const { return *data; }

    T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return (*data)[((n * shape.c + c) * shape.h + h) * shape.w + w];
    }
    T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return (*data)[((n * shape.c + c) * shape.h + h) * shape.w + w];
    }

    void ensure_grad() {
        if (!grad) grad = std::make_shared<std::vector<T>>(numel(), T(0));
    }
    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), T(0));
    }
    Tensor<T> detached() const {
        Tensor<T> t;
        t.shape = shape;
        t.data = data;
        return t;
    }
};

template <class T>
Tensor<T> zeros(Shape4 s) {
    check_shape(s.n >= 1 && s.c >= 1 && s.h >= 1 && s.w >= 1,
                "zeros: all dims must be >= 1, got " + s.str());
    Tensor<T> t;
    t.shape = s;
    t.data = std::make_shared<std::vector<T>>(s.numel(), T(0));
    return t;
}

template <class T>
Tensor<T> full(Shape4 s, T v) {
    Tensor<T> t = zeros<T>(s);
    std::fill(t.data->begin(), t.data->end(), v);
    return t;
}

template <class T>
Tensor<T> zeros_like(const Tensor<T>& x) {
    return zeros<T>(x.shape);
}

template <class T>
Tensor<T> from_vector(Shape4 s, const std::vector<T>& v) {
    check_shape(static_cast<int64_t>(v.size()) == s.numel(),
                "from_vector: data length does not match dims " + s.str());
    Tensor<T> t = zeros<T>(s);
    *t.data = v;
    return t;
}

template <class T>
Tensor<T> randn(Shape4 s, Rng& rng) {
    Tensor<T> t = zeros<T>(s);
    for (auto& v : *t.data) v = static_cast<T>(rng.normal());
    return t;
}

template <class T>
Tensor<T> randn(Shape4 s, uint64_t seed) {
    Rng rng(seed);
    return randn<T>(s, rng);
}

// Marks a leaf parameter for gradient tracking. The grad buffer is
// allocated up front so every view shares it.
template <class T>
Tensor<T>& set_requires_grad(Tensor<T>& t, bool flag = true) {
    t.requires_grad = flag;
    if (flag) t.ensure_grad();
    return t;
}

namespace detail {

template <class T>
inline bool any_requires(const std::vector<Tensor<T>>& ts) {
    for (const auto& t : ts)
        if (t.requires_grad) return true;
    return false;
}

// Attaches a tape node to `out` when any input participates in autodiff.
template <class T>
inline void attach(Tensor<T>& out, const char* op, std::vector<Tensor<T>> inputs,
                   std::function<void(TapeNode<T>&, const std::vector<T>&)> backward) {
    if (!any_requires(inputs)) return;
    out.requires_grad = true;
    out.ensure_grad();
    out.node = std::make_shared<TapeNode<T>>();
    out.node->op = op;
    out.node->inputs = std::move(inputs);
    out.node->out_grad = out.grad;
    out.node->backward = std::move(backward);
}

template <class T>
inline void accumulate(Tensor<T>& t, const std::vector<T>& g) {
    if (!t.requires_grad) return;
    t.ensure_grad();
    auto& dst = *t.grad;
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_shape(a.shape == b.shape,
                "add: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
    Tensor<T> out = zeros<T>(a.shape);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
    detail::attach<T>(out, "add", {a, b}, [](TapeNode<T>& node, const std::vector<T>& g) {
        detail::accumulate(node.inputs[0], g);
        detail::accumulate(node.inputs[1], g);
    });
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_shape(a.shape == b.shape,
                "sub: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
    Tensor<T> out = zeros<T>(a.shape);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
    detail::attach<T>(out, "sub", {a, b}, [](TapeNode<T>& node, const std::vector<T>& g) {
        detail::accumulate(node.inputs[0], g);
        if (node.inputs[1].requires_grad) {
            std::vector<T> neg(g.size());
            for (size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
            detail::accumulate(node.inputs[1], neg);
        }
    });
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_shape(a.shape == b.shape,
                "mul: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
    Tensor<T> out = zeros<T>(a.shape);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
    detail::attach<T>(out, "mul", {a, b}, [](TapeNode<T>& node, const std::vector<T>& g) {
        if (node.inputs[0].requires_grad) {
            std::vector<T> ga(g.size());
            const auto& bv = *node.inputs[1].data;
            for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv[i];
            detail::accumulate(node.inputs[0], ga);
        }
        if (node.inputs[1].requires_grad) {
            std::vector<T> gb(g.size());
            const auto& av = *node.inputs[0].data;
            for (size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av[i];
            detail::accumulate(node.inputs[1], gb);
        }
    });
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> out = zeros<T>(a.shape);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) (*out.data)[i] = (*a.data)[i] * s;
    detail::attach<T>(out, "scale", {a}, [s](TapeNode<T>& node, const std::vector<T>& g) {
        std::vector<T> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * s;
        detail::accumulate(node.inputs[0], ga);
    });
    return out;
}

// Reduces to a (1,1,1,1) scalar tensor.
template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
    Tensor<T> out = zeros<T>({1, 1, 1, 1});
    T acc = 0;
    for (const T v : *a.data) acc += v;
    (*out.data)[0] = acc;
    detail::attach<T>(out, "sum", {a}, [](TapeNode<T>& node, const std::vector<T>& g) {
        std::vector<T> ga(node.inputs[0].numel(), g[0]);
        detail::accumulate(node.inputs[0], ga);
    });
    return out;
}

// Mean absolute value, the L1 training loss. Subgradient at 0 is 0.
template <class T>
Tensor<T> mean_abs(const Tensor<T>& a) {
    Tensor<T> out = zeros<T>({1, 1, 1, 1});
    T acc = 0;
    for (const T v : *a.data) acc += std::abs(v);
    const T inv_n = T(1) / static_cast<T>(a.numel());
    (*out.data)[0] = acc * inv_n;
    detail::attach<T>(out, "mean_abs", {a},
                      [inv_n](TapeNode<T>& node, const std::vector<T>& g) {
                          const auto& av = *node.inputs[0].data;
                          std::vector<T> ga(av.size());
                          for (size_t i = 0; i < av.size(); ++i) {
                              T s = av[i] > 0 ? T(1) : (av[i] < 0 ? T(-1) : T(0));
                              ga[i] = g[0] * inv_n * s;
                          }
                          detail::accumulate(node.inputs[0], ga);
                      });
    return out;
}

template <class T>
Tensor<T> mean_sq(const Tensor<T>& a) {
    Tensor<T> out = zeros<T>({1, 1, 1, 1});
    T acc = 0;
    for (const T v : *a.data) acc += v * v;
    const T inv_n = T(1) / static_cast<T>(a.numel());
    (*out.data)[0] = acc * inv_n;
    detail::attach<T>(out, "mean_sq", {a},
                      [inv_n](TapeNode<T>& node, const std::vector<T>& g) {
                          const auto& av = *node.inputs[0].data;
                          std::vector<T> ga(av.size());
                          for (size_t i = 0; i < av.size(); ++i)
                              ga[i] = g[0] * inv_n * T(2) * av[i];
                          detail::accumulate(node.inputs[0], ga);
                      });
    return out;
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// requires_grad tensor reachable from `loss`; call zero_grad between steps.
// The tape is single-use and is released before returning.
template <class T>
void backward(Tensor<T>& loss) {
    check_shape(loss.shape == Shape4{1, 1, 1, 1},
                "backward: loss must be scalar-shaped (1,1,1,1), got " + loss.shape.str());
    if (!loss.node)
        throw Error("backward: loss is detached from the tape");

    // Post-order DFS gives a topological order of the DAG; each node's
    // backward runs exactly once, after all of its consumers.
    std::vector<TapeNode<T>*> order;
    std::unordered_set<TapeNode<T>*> seen;
    std::vector<std::pair<TapeNode<T>*, size_t>> dfs;
    dfs.emplace_back(loss.node.get(), 0);
    seen.insert(loss.node.get());
    while (!dfs.empty()) {
        auto& [n, idx] = dfs.back();
        if (idx < n->inputs.size()) {
            TapeNode<T>* child = n->inputs[idx].node.get();
            ++idx;
            if (child && !seen.count(child)) {
                seen.insert(child);
                dfs.emplace_back(child, 0);
            }
        } else {
            order.push_back(n);
            dfs.pop_back();
        }
    }

    (*loss.grad)[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TapeNode<T>* n = *it;
        n->backward(*n, *n->out_grad);
    }
    for (auto* n : order) {
        n->backward = nullptr;
        n->inputs.clear();
        n->out_grad.reset();
    }
    loss.node.reset();
}

}  // namespace hpun
