#include "dqmil/model.hpp"

#include "dqmil/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dqmil {

std::string_view to_string(Variant v)
{
    switch (v) {
    case Variant::MilOnly:
        return "mil-only";
    case Variant::PerceiverOnly:
        return "perceiver-only";
    case Variant::DqCe:
        return "dq-ce";
    case Variant::DqSd:
        return "dq-sd";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name)
{
    for (Variant v : {Variant::MilOnly, Variant::PerceiverOnly, Variant::DqCe, Variant::DqSd}) {
        if (to_string(v) == name) {
            return v;
        }
    }
    throw ConfigError("unknown variant '" + std::string(name) + "' (expected mil-only, perceiver-only, dq-ce, dq-sd)");
}

double DQConfig::resolved_temperature() const
{
    return temperature > 0.0 ? temperature : std::sqrt(static_cast<double>(d_k));
}

std::size_t DQConfig::input_width() const
{
    if (embedding_source.empty()) {
        std::size_t w = 0;
        for (const auto& s : sources) {
            w += s.proj_width;
        }
        return w;
    }
    for (const auto& s : sources) {
        if (s.id == embedding_source) {
            return s.proj_width;
        }
    }
    throw LookupError("unknown embedding source '" + embedding_source + "'");
}

void DQConfig::validate() const
{
    if (sources.empty()) {
        throw ConfigError("model needs at least one embedding source");
    }
    for (std::size_t i = 0; i < sources.size(); ++i) {
        if (sources[i].width == 0 || sources[i].proj_width == 0) {
            throw ConfigError("source '" + sources[i].id + "' needs positive widths");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (sources[i].id == sources[j].id) {
                throw ConfigError("duplicate source id '" + sources[i].id + "'");
            }
        }
    }
    input_width();
    if (latents == 0) {
        throw ConfigError("latent count M must be at least 1");
    }
    if (width == 0 || d_k == 0) {
        throw ConfigError("widths D and d_k must be positive");
    }
    if (heads == 0 || d_k % heads != 0 || width % heads != 0) {
        throw ConfigError("d_k=" + std::to_string(d_k) + " and D=" + std::to_string(width) +
                          " must be divisible by heads=" + std::to_string(heads));
    }
    if (classes < 2) {
        throw ConfigError("class count K must be at least 2");
    }
    if (!(blend >= 0.0 && blend <= 1.0)) {
        throw ConfigError("blend weight b must lie in [0, 1]");
    }
    if (!std::isfinite(temperature)) {
        throw ConfigError("temperature must be finite");
    }
}

std::string config_to_json(const DQConfig& c)
{
    nlohmann::json sources = nlohmann::json::array();
    for (const auto& s : c.sources) {
        sources.push_back({{"id", s.id}, {"width", s.width}, {"proj_width", s.proj_width}});
    }
    nlohmann::json j{{"sources", sources},
                     {"embedding_source", c.embedding_source},
                     {"latents", c.latents},
                     {"width", c.width},
                     {"d_k", c.d_k},
                     {"depth", c.depth},
                     {"heads", c.heads},
                     {"classes", c.classes},
                     {"temperature", c.temperature},
                     {"blend", c.blend},
                     {"variant", std::string(to_string(c.variant))}};
    return j.dump();
}

DQConfig config_from_json(const std::string& text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        DQConfig c;
        c.sources.clear();
        for (const auto& s : j.at("sources")) {
            c.sources.push_back({s.at("id").get<std::string>(), s.at("width").get<std::size_t>(),
                                 s.at("proj_width").get<std::size_t>()});
        }
        c.embedding_source = j.at("embedding_source").get<std::string>();
        c.latents = j.at("latents").get<std::size_t>();
        c.width = j.at("width").get<std::size_t>();
        c.d_k = j.at("d_k").get<std::size_t>();
        c.depth = j.at("depth").get<std::size_t>();
        c.heads = j.at("heads").get<std::size_t>();
        c.classes = j.at("classes").get<std::size_t>();
        c.temperature = j.at("temperature").get<double>();
        c.blend = j.at("blend").get<double>();
        c.variant = parse_variant(j.at("variant").get<std::string>());
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model config block: ") + e.what());
    }
}

// --- components ------------------------------------------------------------

template <typename T>
CrossAttentionOutput dual_query_cross_attention(const ForwardContext<T>& ctx, const DualQueryCrossAttention& m,
                                                Var bag, double temperature)
{
    auto& g = ctx.graph();
    const auto& x = g.value(bag);
    if (x.rank() != 2 || x.shape()[0] == 0) {
        throw EmptyInputError("bag has no instances");
    }
    if (x.cols() != m.key.in) {
        throw DimensionError("bag width " + std::to_string(x.cols()) + " does not match model input width " +
                             std::to_string(m.key.in));
    }
    Var k = apply(ctx, m.key, bag);
    Var v = apply(ctx, m.value, bag);
    CrossAttentionOutput out;

    if (m.latent_q1) {
        Var latent = ctx.param(*m.latent_q1);
        Var q1 = apply(ctx, *m.q1_query, apply(ctx, *m.q1_norm, latent));
        auto attended = split_head_attention(g, q1, k, v, m.heads, temperature);
        Var x1 = add(g, latent, apply(ctx, *m.q1_output, attended.output));
        x1 = add(g, x1, apply(ctx, *m.mlp, apply(ctx, *m.mlp_norm, x1)));
        out.latent = x1;
        out.latent_attention = mean_axis(g, attended.weights, 0);
    }
    if (m.latent_q2) {
        Var q2 = apply(ctx, *m.q2_query, ctx.param(*m.latent_q2));
        auto attended = scaled_dot_attention(g, q2, k, v, temperature);
        out.t_mil = attended.output;
        out.attention = attended.weights;
        out.attention_logits = attended.logits;
    }
    return out;
}

template <typename T>
Var latent_transformer_stack(const ForwardContext<T>& ctx, const std::vector<TransformerBlock>& blocks, Var latent)
{
    for (const auto& block : blocks) {
        latent = transformer_block(ctx, block, latent);
    }
    return latent;
}

template <typename T>
Var pool_latent(Graph<T>& g, Var latent)
{
    return mean_axis(g, latent, 0);
}

template <typename T>
Var classify(const ForwardContext<T>& ctx, const Mlp& head, Var token)
{
    return softmax(ctx.graph(), apply(ctx, head, token), 1.0);
}

template <typename T>
Var blend(Graph<T>& g, Var p_sa, Var p_mil, double b)
{
    if (!(b >= 0.0 && b <= 1.0)) {
        throw ParameterError("blend weight must lie in [0, 1], got " + std::to_string(b));
    }
    return add(g, scale(g, p_sa, b), scale(g, p_mil, 1.0 - b));
}

// --- model -----------------------------------------------------------------

template <typename T>
DQModel<T>::DQModel(DQConfig config, std::uint64_t seed) : config_(std::move(config))
{
    config_.validate();
    Rng rng(seed);
    const std::size_t d = config_.width;
    const std::size_t c = config_.input_width();

    embedder_ = make_meta_embedder(params_, "dme", config_.sources, rng);

    cross_.heads = config_.heads;
    cross_.key = make_linear(params_, "cross.key", c, config_.d_k, rng, false);
    cross_.value = make_linear(params_, "cross.value", c, d, rng, false);
    if (runs_perceiver(config_.variant)) {
        cross_.latent_q1 = params_.add("latent.q1", trunc_normal_init<T>({config_.latents, d}, rng), false);
        cross_.q1_norm = make_layer_norm(params_, "cross.q1_norm", d);
        cross_.q1_query = make_linear(params_, "cross.q1_query", d, config_.d_k, rng, false);
        cross_.q1_output = make_linear(params_, "cross.q1_output", d, d, rng);
        cross_.mlp_norm = make_layer_norm(params_, "cross.mlp_norm", d);
        cross_.mlp = make_mlp(params_, "cross.mlp", d, 2 * d, d, rng);
        for (std::size_t j = 0; j < config_.depth; ++j) {
            blocks_.push_back(
                make_transformer_block(params_, "latent_transformer." + std::to_string(j), d, config_.heads, rng));
        }
        head_sa_ = make_mlp(params_, "head_sa", d, d, config_.classes, rng);
    }
    if (runs_mil(config_.variant)) {
        cross_.latent_q2 = params_.add("latent.q2", trunc_normal_init<T>({1, d}, rng), false);
        cross_.q2_query = make_linear(params_, "cross.q2_query", d, config_.d_k, rng, false);
        head_mil_ = make_mlp(params_, "head_mil", d, d, config_.classes, rng);
    }
}

template <typename T>
void DQModel<T>::set_temperature(double temperature)
{
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ParameterError("temperature must be positive and finite");
    }
    config_.temperature = temperature;
}

template <typename T>
void DQModel<T>::set_blend(double b)
{
    if (!(b >= 0.0 && b <= 1.0)) {
        throw ParameterError("blend weight must lie in [0, 1]");
    }
    config_.blend = b;
}

namespace {

template <typename T>
std::vector<double> to_doubles(const Tensor<T>& t)
{
    return std::vector<double>(t.values().begin(), t.values().end());
}

} // namespace

template <typename T>
BagForward DQModel<T>::run(const ForwardContext<T>& ctx, const SourceEmbeddingSet<T>& bag, BagOutput* values) const
{
    auto& g = ctx.graph();
    if (bag.features.empty() || bag.instance_count() == 0) {
        throw EmptyInputError("bag has no instances");
    }
    Var x = config_.embedding_source.empty() ? fuse(ctx, embedder_, bag)
                                             : single_source(ctx, embedder_, bag, config_.embedding_source);
    const double tau = config_.resolved_temperature();
    auto cross = dual_query_cross_attention(ctx, cross_, x, tau);

    BagForward out;
    if (cross.latent) {
        out.has_sa = true;
        out.t_sa = pool_latent(g, latent_transformer_stack(ctx, blocks_, *cross.latent));
        out.p_sa = classify(ctx, *head_sa_, out.t_sa);
    }
    if (cross.t_mil) {
        out.has_mil = true;
        out.t_mil = *cross.t_mil;
        out.p_mil = classify(ctx, *head_mil_, out.t_mil);
    }
    if (out.has_sa && out.has_mil) {
        out.p = blend(g, out.p_sa, out.p_mil, config_.blend);
        out.attention = *cross.attention;
    } else if (out.has_sa) {
        out.p = out.p_sa;
        out.attention = *cross.latent_attention;
    } else {
        out.p = out.p_mil;
        out.attention = *cross.attention;
    }

    if (values != nullptr) {
        if (out.has_sa) {
            values->t_sa = to_doubles(g.value(out.t_sa));
            values->p_sa = to_doubles(g.value(out.p_sa));
        }
        if (out.has_mil) {
            values->t_mil = to_doubles(g.value(out.t_mil));
            values->p_mil = to_doubles(g.value(out.p_mil));
        }
        values->p = to_doubles(g.value(out.p));
        values->attention = to_doubles(g.value(out.attention));
        auto& logs = values->attention_log;
        if (cross.attention_logits) {
            // log-softmax of logits / tau, evaluated in double.
            logs = to_doubles(g.value(*cross.attention_logits));
            for (auto& z : logs) {
                z /= tau;
            }
            const double mx = *std::max_element(logs.begin(), logs.end());
            double total = 0.0;
            for (double z : logs) {
                total += std::exp(z - mx);
            }
            const double lse = mx + std::log(total);
            for (auto& z : logs) {
                z -= lse;
            }
        } else {
            logs.clear();
            for (double a : values->attention) {
                logs.push_back(std::log(std::max(a, std::numeric_limits<double>::min())));
            }
        }
    }
    return out;
}

template <typename T>
BagForward DQModel<T>::forward(Graph<T>& g, const SourceEmbeddingSet<T>& bag)
{
    return run(ForwardContext<T>(g, params_), bag, nullptr);
}

template <typename T>
BagForward DQModel<T>::forward(Graph<T>& g, const SourceEmbeddingSet<T>& bag) const
{
    return run(ForwardContext<T>(g, params_), bag, nullptr);
}

template <typename T>
BagOutput DQModel<T>::infer(const SourceEmbeddingSet<T>& bag) const
{
    Graph<T> g;
    BagOutput values;
    run(ForwardContext<T>(g, params_), bag, &values);
    return values;
}

template class DQModel<float>;
template class DQModel<double>;

#define DQMIL_INSTANTIATE_MODEL(T)                                                                                     \
    template CrossAttentionOutput dual_query_cross_attention<T>(const ForwardContext<T>&,                              \
                                                                const DualQueryCrossAttention&, Var, double);          \
    template Var latent_transformer_stack<T>(const ForwardContext<T>&, const std::vector<TransformerBlock>&, Var);     \
    template Var pool_latent<T>(Graph<T>&, Var);                                                                       \
    template Var classify<T>(const ForwardContext<T>&, const Mlp&, Var);                                               \
    template Var blend<T>(Graph<T>&, Var, Var, double);

DQMIL_INSTANTIATE_MODEL(float)
DQMIL_INSTANTIATE_MODEL(double)

} // namespace dqmil
