#pragma once

#include "dqmil/graph.hpp"
#include "dqmil/parameters.hpp"

#include <cstddef>
#include <optional>
#include <string>

namespace dqmil {

/// Binds parameters of a set into one forward pass.
///
/// Constructed from a mutable set, parameters become trainable leaves;
/// from a const set, they are read-only views and no gradient is tracked.
template <typename T>
class ForwardContext {
public:
    ForwardContext(Graph<T>& graph, ParameterSet<T>& params) : graph_(&graph), mutable_(&params), params_(&params) {}
    ForwardContext(Graph<T>& graph, const ParameterSet<T>& params) : graph_(&graph), params_(&params) {}

    Graph<T>& graph() const noexcept { return *graph_; }
    const ParameterSet<T>& params() const noexcept { return *params_; }
    bool trainable() const noexcept { return mutable_ != nullptr; }

    Var param(std::size_t index) const
    {
        return mutable_ != nullptr ? graph_->parameter((*mutable_)[index]) : graph_->parameter((*params_)[index]);
    }

private:
    Graph<T>* graph_;
    ParameterSet<T>* mutable_ = nullptr;
    const ParameterSet<T>* params_;
};

/// y = x W + b with W stored as [in x out].
struct Linear {
    std::size_t weight = 0;
    std::optional<std::size_t> bias;
    std::size_t in = 0;
    std::size_t out = 0;
};

struct LayerNorm {
    std::size_t gain = 0;
    std::size_t bias = 0;
    std::size_t width = 0;
};

/// Two linear layers with a GELU in between.
struct Mlp {
    Linear hidden;
    Linear output;
};

/// Registers a linear layer with fan-in uniform initialisation.
template <typename T>
Linear make_linear(ParameterSet<T>& set, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                   bool with_bias = true);
template <typename T>
LayerNorm make_layer_norm(ParameterSet<T>& set, const std::string& name, std::size_t width);
template <typename T>
Mlp make_mlp(ParameterSet<T>& set, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
             Rng& rng);

template <typename T>
Var apply(const ForwardContext<T>& ctx, const Linear& layer, Var x);
template <typename T>
Var apply(const ForwardContext<T>& ctx, const LayerNorm& norm, Var x);
template <typename T>
Var apply(const ForwardContext<T>& ctx, const Mlp& mlp, Var x);

/// Layer-norm epsilon used throughout the model.
inline constexpr double kLayerNormEps = 1e-5;

} // namespace dqmil
