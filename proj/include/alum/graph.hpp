// SPDX-License-Identifier: Apache-2.0
//
// Tape-style reverse-mode differentiation over dense tensors.
//
// A Graph is built fresh for every forward pass. Nodes are appended in
// evaluation order, so creation order is already a topological order and the
// backward sweep simply walks the tape in reverse. Ops whose inputs all have
// requires_grad == false record no backward closure at all; this is what lets
// the inner ascent differentiate only with respect to the perturbation.
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "alum/tensor.hpp"

namespace alum {

class Graph;

/// Handle to a node on a Graph. Cheap to copy; only valid while the graph lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    Graph& graph() const { return *graph_; }
    std::uint32_t id() const noexcept { return id_; }
    bool valid() const noexcept { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    std::uint32_t id_ = 0;
};

class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
    /// calls; interior gradients are reset at the start of every sweep.
    void backward(const Var& loss);

    /// Gradient of a node; zeros when nothing flowed into it.
    Tensor grad(const Var& v) const;
    void zero_grad();

    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t backward_calls() const noexcept { return backward_calls_; }

    // --- op-author interface -------------------------------------------------
    /// Appends an op result. `fn` is dropped when no input needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
    const Tensor& value_of(std::uint32_t id) const { return nodes_[id].value; }
    bool requires_grad_of(std::uint32_t id) const { return nodes_[id].requires_grad; }
    /// Mutable, lazily zeroed gradient buffer for accumulation.
    Tensor& grad_slot(const Var& v);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        bool is_leaf = false;
        BackwardFn backward;
    };

    std::deque<Node> nodes_;
    std::size_t backward_calls_ = 0;
};

// --- forward ops -------------------------------------------------------------
// Every op validates operand shapes and throws Error(shape_mismatch) naming the
// op and the offending shapes.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real factor);
/// a[..., n] + bias[n]
Var add_bias(const Var& a, const Var& bias);
/// a[..., k] x w[k, n] -> [..., n]
Var matmul(const Var& a, const Var& w);
/// Batched a[B, m, k] x b[B, k, n], or x b[B, n, k]^T when transpose_b.
Var bmm(const Var& a, const Var& b, bool transpose_b);
Var reshape(const Var& a, Shape shape);
/// [A, B, C, D] -> [A, C, B, D]
Var swap_axes12(const Var& a);
Var softmax(const Var& a);
Var log_softmax(const Var& a);
/// Softmax over the last axis of scores[batch*heads, T, T] where key
/// positions with key_mask[b, t] == 0 receive exactly zero probability.
Var attention_softmax(const Var& scores, std::span<const std::uint8_t> key_mask, std::size_t heads);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps);
Var gelu(const Var& a);
Var tanh(const Var& a);
/// Row lookup: table[V, d], ids -> [ids.size(), d].
Var embedding(const Var& table, std::span<const std::int32_t> ids);
/// Selects rows of x viewed as [N, last-dim].
Var gather_rows(const Var& x, std::span<const std::size_t> rows);
/// Mean over rows of -log softmax(logits)[target].
Var cross_entropy(const Var& logits, std::span<const std::int32_t> targets);
/// Mean over rows of KL(softmax(p_logits) || softmax(q_logits)).
Var kl_divergence(const Var& p_logits, const Var& q_logits);
Var sum(const Var& a);
Var mean(const Var& a);
Var square(const Var& a);
/// Same value, no gradient path.
Var detach(const Var& a);

} // namespace alum
