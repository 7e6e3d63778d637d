#include "dqmil/attention.hpp"

#include "dqmil/errors.hpp"

#include <vector>

namespace dqmil {

template <typename T>
AttentionResult scaled_dot_attention(Graph<T>& g, Var q, Var k, Var v, double temperature)
{
    const auto& kv = g.value(k);
    const auto& vv = g.value(v);
    if (kv.rank() != 2 || kv.shape()[0] == 0) {
        throw EmptyInputError("attention over an empty key set");
    }
    if (vv.rank() != 2 || vv.shape()[0] != kv.shape()[0]) {
        throw DimensionError("attention: keys " + shape_string(kv.shape()) + " and values " +
                             shape_string(vv.shape()) + " disagree on row count");
    }
    Var logits = matmul_nt(g, q, k);
    Var weights = softmax(g, logits, temperature);
    return {matmul(g, weights, v), weights, logits};
}

template <typename T>
AttentionResult split_head_attention(Graph<T>& g, Var q, Var k, Var v, std::size_t heads, double temperature)
{
    if (heads == 1) {
        return scaled_dot_attention(g, q, k, v, temperature);
    }
    const std::size_t qk_width = g.value(q).cols();
    const std::size_t v_width = g.value(v).cols();
    if (heads == 0 || qk_width % heads != 0 || v_width % heads != 0) {
        throw ConfigError("attention widths " + std::to_string(qk_width) + "/" + std::to_string(v_width) +
                          " are not divisible by " + std::to_string(heads) + " heads");
    }
    const std::size_t dq = qk_width / heads;
    const std::size_t dv = v_width / heads;
    std::vector<Var> outputs;
    Var weight_sum{};
    for (std::size_t h = 0; h < heads; ++h) {
        auto head = scaled_dot_attention(g, slice_cols(g, q, h * dq, dq), slice_cols(g, k, h * dq, dq),
                                         slice_cols(g, v, h * dv, dv), temperature);
        outputs.push_back(head.output);
        weight_sum = h == 0 ? head.weights : add(g, weight_sum, head.weights);
    }
    return {concat_cols<T>(g, outputs), scale(g, weight_sum, 1.0 / static_cast<double>(heads)), Var{}};
}

template <typename T>
MultiHeadAttention make_multi_head_attention(ParameterSet<T>& set, const std::string& name, std::size_t query_in,
                                             std::size_t context_in, std::size_t model_width,
                                             const AttentionConfig& config, Rng& rng)
{
    if (config.heads == 0 || config.d_k % config.heads != 0 || model_width % config.heads != 0) {
        throw ConfigError(name + ": widths d_k=" + std::to_string(config.d_k) + ", D=" + std::to_string(model_width) +
                          " are not divisible by heads=" + std::to_string(config.heads));
    }
    MultiHeadAttention mha;
    mha.config = config;
    mha.query = make_linear(set, name + ".query", query_in, config.d_k, rng, false);
    mha.key = make_linear(set, name + ".key", context_in, config.d_k, rng, false);
    mha.value = make_linear(set, name + ".value", context_in, model_width, rng, false);
    mha.output = make_linear(set, name + ".output", model_width, model_width, rng, true);
    return mha;
}

template <typename T>
AttentionResult multi_head_attention(const ForwardContext<T>& ctx, const MultiHeadAttention& mha, Var queries,
                                     Var context)
{
    auto& g = ctx.graph();
    Var q = apply(ctx, mha.query, queries);
    Var k = apply(ctx, mha.key, context);
    Var v = apply(ctx, mha.value, context);
    auto attended = split_head_attention(g, q, k, v, mha.config.heads, mha.config.resolved_temperature());
    return {apply(ctx, mha.output, attended.output), attended.weights, attended.logits};
}

template <typename T>
TransformerBlock make_transformer_block(ParameterSet<T>& set, const std::string& name, std::size_t width,
                                        std::size_t heads, Rng& rng)
{
    TransformerBlock block;
    block.attention_norm = make_layer_norm(set, name + ".attention_norm", width);
    block.attention =
        make_multi_head_attention(set, name + ".attention", width, width, width, AttentionConfig{width, heads, 0.0}, rng);
    block.mlp_norm = make_layer_norm(set, name + ".mlp_norm", width);
    block.mlp = make_mlp(set, name + ".mlp", width, 2 * width, width, rng);
    return block;
}

template <typename T>
Var transformer_block(const ForwardContext<T>& ctx, const TransformerBlock& block, Var latent)
{
    auto& g = ctx.graph();
    if (g.value(latent).rank() != 2 || g.value(latent).shape()[0] == 0) {
        throw DimensionError("transformer block needs a non-empty latent matrix");
    }
    Var normed = apply(ctx, block.attention_norm, latent);
    Var x = add(g, latent, multi_head_attention(ctx, block.attention, normed, normed).output);
    return add(g, x, apply(ctx, block.mlp, apply(ctx, block.mlp_norm, x)));
}

#define DQMIL_INSTANTIATE_ATTENTION(T)                                                                                 \
    template AttentionResult scaled_dot_attention<T>(Graph<T>&, Var, Var, Var, double);                                \
    template AttentionResult split_head_attention<T>(Graph<T>&, Var, Var, Var, std::size_t, double);                   \
    template MultiHeadAttention make_multi_head_attention<T>(ParameterSet<T>&, const std::string&, std::size_t,        \
                                                             std::size_t, std::size_t, const AttentionConfig&, Rng&);  \
    template AttentionResult multi_head_attention<T>(const ForwardContext<T>&, const MultiHeadAttention&, Var, Var);   \
    template TransformerBlock make_transformer_block<T>(ParameterSet<T>&, const std::string&, std::size_t,             \
                                                        std::size_t, Rng&);                                            \
    template Var transformer_block<T>(const ForwardContext<T>&, const TransformerBlock&, Var);

DQMIL_INSTANTIATE_ATTENTION(float)
DQMIL_INSTANTIATE_ATTENTION(double)

} // namespace dqmil
