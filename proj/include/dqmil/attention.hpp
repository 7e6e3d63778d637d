#pragma once

#include "dqmil/layers.hpp"

#include <cmath>
#include <cstddef>
#include <string>

namespace dqmil {

struct AttentionConfig {
    /// Query/key width (summed over heads).
    std::size_t d_k = 64;
    std::size_t heads = 1;
    /// Logit divisor; non-positive means sqrt(d_k / heads).
    double temperature = 0.0;

    double resolved_temperature() const
    {
        return temperature > 0.0 ? temperature : std::sqrt(static_cast<double>(d_k / (heads == 0 ? 1 : heads)));
    }
};

struct AttentionResult {
    /// Attended values, one row per query.
    Var output;
    /// Row-stochastic weights, queries x keys. Averaged over heads for multi-head.
    Var weights;
    /// Q K^T before the temperature; only set for single-head attention.
    Var logits;
};

/// softmax(Q K^T / temperature) V for Q[m x d], K[n x d], V[n x d_v].
template <typename T>
AttentionResult scaled_dot_attention(Graph<T>& g, Var q, Var k, Var v, double temperature);

/// Splits projected Q/K/V column-wise into `heads` groups, attends per head
/// and concatenates the head outputs.
template <typename T>
AttentionResult split_head_attention(Graph<T>& g, Var q, Var k, Var v, std::size_t heads, double temperature);

/// Multi-head attention with its own projections.
struct MultiHeadAttention {
    Linear query;
    Linear key;
    Linear value;
    Linear output;
    AttentionConfig config;
};

/// `query_in` and `context_in` are the widths of the query and context rows;
/// the value width and output width are both `model_width`.
template <typename T>
MultiHeadAttention make_multi_head_attention(ParameterSet<T>& set, const std::string& name, std::size_t query_in,
                                             std::size_t context_in, std::size_t model_width,
                                             const AttentionConfig& config, Rng& rng);

template <typename T>
AttentionResult multi_head_attention(const ForwardContext<T>& ctx, const MultiHeadAttention& mha, Var queries,
                                     Var context);

/// Pre-norm block: x + MHA(LN(x)), then + MLP(LN(.)) with hidden width 2 * width.
struct TransformerBlock {
    LayerNorm attention_norm;
    MultiHeadAttention attention;
    LayerNorm mlp_norm;
    Mlp mlp;
};

template <typename T>
TransformerBlock make_transformer_block(ParameterSet<T>& set, const std::string& name, std::size_t width,
                                        std::size_t heads, Rng& rng);

template <typename T>
Var transformer_block(const ForwardContext<T>& ctx, const TransformerBlock& block, Var latent);

} // namespace dqmil
