#pragma once

#include "dqmil/attention.hpp"
#include "dqmil/dme.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dqmil {

/// Which pathways run and how the model is supervised.
enum class Variant {
    MilOnly,       ///< Q2 pathway only, p = p_mil.
    PerceiverOnly, ///< Q1 pathway only, p = p_sa.
    DqCe,          ///< Both pathways, single cross-entropy on the blended p.
    DqSd,          ///< Both pathways, self-distillation objective.
};

std::string_view to_string(Variant v);
/// Accepts mil-only, perceiver-only, dq-ce, dq-sd.
Variant parse_variant(std::string_view name);

inline bool runs_perceiver(Variant v) { return v != Variant::MilOnly; }
inline bool runs_mil(Variant v) { return v != Variant::PerceiverOnly; }

struct DQConfig {
    std::vector<SourceSpec> sources{{"src0", 32, 256}};
    /// Empty: fuse every source. Otherwise project only this source.
    std::string embedding_source;
    std::size_t latents = 16;  ///< M
    std::size_t width = 256;   ///< D
    std::size_t d_k = 64;
    std::size_t depth = 2;     ///< J
    std::size_t heads = 4;
    std::size_t classes = 2;   ///< K
    /// Cross-attention temperature; non-positive means sqrt(d_k).
    double temperature = 0.0;
    double blend = 0.5;        ///< b
    Variant variant = Variant::DqSd;

    double resolved_temperature() const;
    /// Width C of the fused instance rows.
    std::size_t input_width() const;
    /// Throws ConfigError on any inconsistency.
    void validate() const;
};

std::string config_to_json(const DQConfig& config);
DQConfig config_from_json(const std::string& text);

/// Graph handles of one bag forward pass. Handles of a pathway that the
/// variant skips are left unset (has_sa / has_mil false).
struct BagForward {
    bool has_sa = false;
    bool has_mil = false;
    Var t_sa;
    Var t_mil;
    Var p_sa;
    Var p_mil;
    Var p;
    /// Attention over instances, 1 x N.
    Var attention;
};

/// Plain values of one bag forward pass.
struct BagOutput {
    std::vector<double> t_sa;
    std::vector<double> t_mil;
    std::vector<double> p_sa;
    std::vector<double> p_mil;
    std::vector<double> p;
    /// a_i, a distribution over the N instances.
    std::vector<double> attention;
    /// log a_i; free of underflow at small temperatures.
    std::vector<double> attention_log;
};

/// Shared-K/V cross-attention with the two query pathways.
struct DualQueryCrossAttention {
    Linear key;
    Linear value;
    std::optional<std::size_t> latent_q1; ///< M x D latent array
    std::optional<std::size_t> latent_q2; ///< 1 x D latent array
    std::optional<Linear> q1_query;
    std::optional<Linear> q2_query;
    std::optional<LayerNorm> q1_norm;
    std::optional<Linear> q1_output;
    std::optional<LayerNorm> mlp_norm;
    std::optional<Mlp> mlp;
    std::size_t heads = 1;
};

struct CrossAttentionOutput {
    /// Q1 pathway result, M x D (unset when the pathway is skipped).
    std::optional<Var> latent;
    /// Q1 attention averaged over heads and latents, 1 x N.
    std::optional<Var> latent_attention;
    /// MIL-attention token, 1 x D.
    std::optional<Var> t_mil;
    /// Q2 attention weights a, 1 x N.
    std::optional<Var> attention;
    /// Q2 logits Q2 K^T before the temperature, 1 x N.
    std::optional<Var> attention_logits;
};

/// K = X W_k and V = X W_v are computed once and shared by both queries.
template <typename T>
CrossAttentionOutput dual_query_cross_attention(const ForwardContext<T>& ctx, const DualQueryCrossAttention& module,
                                                Var bag, double temperature);

/// J transformer blocks in sequence; J = 0 is the identity.
template <typename T>
Var latent_transformer_stack(const ForwardContext<T>& ctx, const std::vector<TransformerBlock>& blocks, Var latent);

/// Mean over the M latent rows, 1 x D.
template <typename T>
Var pool_latent(Graph<T>& g, Var latent);

/// MLP head followed by softmax, 1 x K.
template <typename T>
Var classify(const ForwardContext<T>& ctx, const Mlp& head, Var token);

/// b * p_sa + (1 - b) * p_mil.
template <typename T>
Var blend(Graph<T>& g, Var p_sa, Var p_mil, double b);

template <typename T>
class DQModel {
public:
    DQModel(DQConfig config, std::uint64_t seed);

    const DQConfig& config() const noexcept { return config_; }
    /// Temperature and blend weight are runtime knobs; structure is fixed.
    void set_temperature(double temperature);
    void set_blend(double b);

    ParameterSet<T>& params() noexcept { return params_; }
    const ParameterSet<T>& params() const noexcept { return params_; }

    /// Trainable forward pass.
    BagForward forward(Graph<T>& g, const SourceEmbeddingSet<T>& bag);
    /// Forward pass over frozen parameters.
    BagForward forward(Graph<T>& g, const SourceEmbeddingSet<T>& bag) const;
    /// Values only; safe to call concurrently on a shared model.
    BagOutput infer(const SourceEmbeddingSet<T>& bag) const;

    /// Same structure and values at another precision.
    template <typename U>
    DQModel<U> cast() const
    {
        DQModel<U> out(config_, 0);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            out.params()[i].value = params_[i].value.template cast<U>();
        }
        return out;
    }

private:
    BagForward run(const ForwardContext<T>& ctx, const SourceEmbeddingSet<T>& bag, BagOutput* values) const;

    DQConfig config_;
    ParameterSet<T> params_;
    MetaEmbedder embedder_;
    DualQueryCrossAttention cross_;
    std::vector<TransformerBlock> blocks_;
    std::optional<Mlp> head_sa_;
    std::optional<Mlp> head_mil_;
};

extern template class DQModel<float>;
extern template class DQModel<double>;

/// Converts single-precision bag features into a model-precision set.
template <typename T>
SourceEmbeddingSet<T> to_precision(const SourceEmbeddingSet<float>& set)
{
    SourceEmbeddingSet<T> out;
    out.ids = set.ids;
    for (const auto& f : set.features) {
        out.features.push_back(f.template cast<T>());
    }
    return out;
}

} // namespace dqmil
