#pragma once

#include "dqmil/layers.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace dqmil {

/// One frozen feature source feeding the meta-embedder.
struct SourceSpec {
    std::string id;
    std::size_t width = 0;
    std::size_t proj_width = 256;

    friend bool operator==(const SourceSpec&, const SourceSpec&) = default;
};

/// Per-source instance features for one bag, all with the same row count N.
template <typename T>
struct SourceEmbeddingSet {
    std::vector<std::string> ids;
    std::vector<Tensor<T>> features;

    std::size_t source_count() const noexcept { return features.size(); }
    /// N; throws AlignmentError when sources disagree.
    std::size_t instance_count() const;
};

/// Per-source affine projections whose outputs are concatenated.
struct MetaEmbedder {
    std::vector<SourceSpec> specs;
    std::vector<Linear> projections;

    /// Sum of projection widths.
    std::size_t output_width() const;
    std::size_t source_index(const std::string& id) const;
};

template <typename T>
MetaEmbedder make_meta_embedder(ParameterSet<T>& set, const std::string& name, const std::vector<SourceSpec>& specs,
                                Rng& rng);

/// Checks a set against the declared sources (order, ids and widths).
template <typename T>
void validate_sources(const MetaEmbedder& embedder, const SourceEmbeddingSet<T>& set);

/// Projects every source and concatenates in manifest order: N x sum(proj_width).
template <typename T>
Var fuse(const ForwardContext<T>& ctx, const MetaEmbedder& embedder, const SourceEmbeddingSet<T>& set);

/// Projects only the named source: N x proj_width of that source.
template <typename T>
Var single_source(const ForwardContext<T>& ctx, const MetaEmbedder& embedder, const SourceEmbeddingSet<T>& set,
                  const std::string& id);

} // namespace dqmil
