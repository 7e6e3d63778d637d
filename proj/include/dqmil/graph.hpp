#pragma once

#include "dqmil/parameters.hpp"
#include "dqmil/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dqmil {

/// Handle to a node of a Graph. Only valid for the forward pass that made it.
struct Var {
    std::uint32_t index = 0;
    std::uint32_t generation = 0;
};

template <typename T>
class Graph;

/// Gradients of the `input` leaves, returned by Graph::backward.
template <typename T>
class GradientMap {
public:
    const Tensor<T>& operator[](Var v) const;
    bool contains(Var v) const;

private:
    friend class Graph<T>;
    std::uint32_t generation_ = 0;
    std::map<std::uint32_t, Tensor<T>> grads_;
};

/// Reverse-mode tape.
///
/// Nodes are appended in execution order, which is a topological order, and
/// backward walks them in reverse. A graph serves exactly one backward pass:
/// afterwards it is cleared and every outstanding Var becomes stale. Recording
/// a new node starts the next forward pass.
template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_value, const Tensor<T>& out_grad)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    /// Leaf without gradient.
    Var constant(Tensor<T> value);
    /// Leaf whose gradient is reported in the GradientMap.
    Var input(Tensor<T> value);
    /// Trainable leaf; backward accumulates into `p.grad`.
    Var parameter(Parameter<T>& p);
    /// Read-only view of a frozen parameter.
    Var parameter(const Parameter<T>& p);
    /// Copy of `v` cut off from the gradient flow.
    Var detach(Var v);

    const Tensor<T>& value(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t node_count() const noexcept { return nodes_.size(); }

    /// Backpropagates from a scalar loss, fills parameter gradient slots and
    /// clears the graph.
    GradientMap<T> backward(Var loss);

    /// Drops the recorded pass without running backward.
    void clear();

    /// Appends an op output. `backward` may be empty when no input needs a gradient.
    Var record(const char* op, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(const char* op, Tensor<T> value, std::span<const Var> inputs, BackwardFn backward);

    /// Gradient accumulator of `v`, zero-initialised on first use.
    Tensor<T>& grad_slot(Var v);

private:
    enum class Kind : std::uint8_t { Constant, Input, Parameter, Op };

    struct Node {
        Kind kind = Kind::Constant;
        Tensor<T> owned;
        const Tensor<T>* borrowed = nullptr;
        Parameter<T>* param = nullptr;
        Tensor<T> grad;
        bool has_grad = false;
        bool requires_grad = false;
        BackwardFn backward;

        const Tensor<T>& value() const { return borrowed != nullptr ? *borrowed : owned; }
    };

    Var push(Node node);
    const Node& node(Var v) const;
    Node& node(Var v);
    void begin_pass();

    std::vector<Node> nodes_;
    std::uint32_t generation_ = 1;
    bool consumed_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;
extern template class GradientMap<float>;
extern template class GradientMap<double>;

// Differentiable ops. All take and return Vars of one graph.

/// a[m x k] * b[k x n].
template <typename T>
Var matmul(Graph<T>& g, Var a, Var b);
/// a[m x k] * b[n x k]^T.
template <typename T>
Var matmul_nt(Graph<T>& g, Var a, Var b);
template <typename T>
Var add(Graph<T>& g, Var a, Var b);
template <typename T>
Var sub(Graph<T>& g, Var a, Var b);
/// Elementwise product.
template <typename T>
Var mul(Graph<T>& g, Var a, Var b);
template <typename T>
Var scale(Graph<T>& g, Var a, double factor);
/// Adds a row vector of width n to every row of a[m x n].
template <typename T>
Var add_bias(Graph<T>& g, Var a, Var bias);
/// Exact GELU, x * Phi(x).
template <typename T>
Var gelu(Graph<T>& g, Var x);
/// Softmax over the last axis of x / temperature, max-subtracted.
template <typename T>
Var softmax(Graph<T>& g, Var x, double temperature);
/// Per-row normalisation followed by gain * x_hat + bias.
template <typename T>
Var layer_norm(Graph<T>& g, Var x, Var gain, Var bias, double eps = 1e-5);
/// Mean over axis 0 (rows, result 1 x n) or axis 1 (columns, result m x 1) of a matrix.
template <typename T>
Var mean_axis(Graph<T>& g, Var x, std::size_t axis);
/// Sum of squares, scalar result.
template <typename T>
Var l2_norm_sq(Graph<T>& g, Var x);
template <typename T>
Var sum(Graph<T>& g, Var x);
/// Columns [begin, begin + count) of a matrix.
template <typename T>
Var slice_cols(Graph<T>& g, Var x, std::size_t begin, std::size_t count);
/// Concatenation along the column axis; all parts share the row count.
template <typename T>
Var concat_cols(Graph<T>& g, std::span<const Var> parts);
/// Scalar at flat index.
template <typename T>
Var select(Graph<T>& g, Var x, std::size_t index);
/// log(max(x, floor)); zero gradient below the floor.
template <typename T>
Var log_floor(Graph<T>& g, Var x, double floor);
template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape);

} // namespace dqmil
