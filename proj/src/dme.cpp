#include "dqmil/dme.hpp"

#include "dqmil/errors.hpp"

namespace dqmil {

template <typename T>
std::size_t SourceEmbeddingSet<T>::instance_count() const
{
    if (features.empty()) {
        throw SchemaError("embedding set has no sources");
    }
    const std::size_t n = features.front().rows();
    for (std::size_t s = 0; s < features.size(); ++s) {
        if (features[s].rows() != n) {
            throw AlignmentError("source '" + (s < ids.size() ? ids[s] : std::to_string(s)) + "' has " +
                                 std::to_string(features[s].rows()) + " instances, expected " + std::to_string(n));
        }
    }
    return n;
}

std::size_t MetaEmbedder::output_width() const
{
    std::size_t w = 0;
    for (const auto& s : specs) {
        w += s.proj_width;
    }
    return w;
}

std::size_t MetaEmbedder::source_index(const std::string& id) const
{
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].id == id) {
            return i;
        }
    }
    throw LookupError("unknown embedding source '" + id + "'");
}

template <typename T>
MetaEmbedder make_meta_embedder(ParameterSet<T>& set, const std::string& name, const std::vector<SourceSpec>& specs,
                                Rng& rng)
{
    if (specs.empty()) {
        throw ConfigError("meta-embedder needs at least one source");
    }
    MetaEmbedder embedder;
    embedder.specs = specs;
    for (const auto& s : specs) {
        if (s.width == 0 || s.proj_width == 0) {
            throw ConfigError("source '" + s.id + "' needs positive input and projection widths");
        }
        embedder.projections.push_back(make_linear(set, name + "." + s.id, s.width, s.proj_width, rng));
    }
    return embedder;
}

template <typename T>
void validate_sources(const MetaEmbedder& embedder, const SourceEmbeddingSet<T>& set)
{
    if (set.source_count() != embedder.specs.size()) {
        throw SchemaError("expected " + std::to_string(embedder.specs.size()) + " sources, got " +
                          std::to_string(set.source_count()));
    }
    for (std::size_t s = 0; s < embedder.specs.size(); ++s) {
        const auto& spec = embedder.specs[s];
        if (s < set.ids.size() && set.ids[s] != spec.id) {
            throw SchemaError("source " + std::to_string(s) + " is '" + set.ids[s] + "', expected '" + spec.id + "'");
        }
        const auto& f = set.features[s];
        if (f.rank() != 2 || f.cols() != spec.width) {
            throw SchemaError("source '" + spec.id + "' has width " + std::to_string(f.cols()) + ", expected " +
                              std::to_string(spec.width));
        }
    }
    set.instance_count();
}

template <typename T>
Var fuse(const ForwardContext<T>& ctx, const MetaEmbedder& embedder, const SourceEmbeddingSet<T>& set)
{
    validate_sources(embedder, set);
    auto& g = ctx.graph();
    std::vector<Var> parts;
    parts.reserve(embedder.specs.size());
    for (std::size_t s = 0; s < embedder.specs.size(); ++s) {
        parts.push_back(apply(ctx, embedder.projections[s], g.constant(set.features[s])));
    }
    return parts.size() == 1 ? parts.front() : concat_cols<T>(g, parts);
}

template <typename T>
Var single_source(const ForwardContext<T>& ctx, const MetaEmbedder& embedder, const SourceEmbeddingSet<T>& set,
                  const std::string& id)
{
    const std::size_t s = embedder.source_index(id);
    validate_sources(embedder, set);
    return apply(ctx, embedder.projections[s], ctx.graph().constant(set.features[s]));
}

template struct SourceEmbeddingSet<float>;
template struct SourceEmbeddingSet<double>;

#define DQMIL_INSTANTIATE_DME(T)                                                                                       \
    template MetaEmbedder make_meta_embedder<T>(ParameterSet<T>&, const std::string&, const std::vector<SourceSpec>&,  \
                                                Rng&);                                                                 \
    template void validate_sources<T>(const MetaEmbedder&, const SourceEmbeddingSet<T>&);                              \
    template Var fuse<T>(const ForwardContext<T>&, const MetaEmbedder&, const SourceEmbeddingSet<T>&);                 \
    template Var single_source<T>(const ForwardContext<T>&, const MetaEmbedder&, const SourceEmbeddingSet<T>&,         \
                                  const std::string&);

DQMIL_INSTANTIATE_DME(float)
DQMIL_INSTANTIATE_DME(double)

} // namespace dqmil
