#include "dqmil/data.hpp"

#include "dqmil/errors.hpp"
#include "dqmil/rng.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

namespace dqmil {

void SyntheticConfig::validate() const
{
    if (bags == 0) {
        throw ConfigError("synthetic: bag count must be positive");
    }
    if (min_instances == 0 || min_instances > max_instances) {
        throw ConfigError("synthetic: need 0 < min_instances <= max_instances");
    }
    if (source_widths.empty()) {
        throw ConfigError("synthetic: at least one source is required");
    }
    if (!(witness_rate > 0.0 && witness_rate <= 1.0)) {
        throw ConfigError("synthetic: witness rate must lie in (0, 1], got " + std::to_string(witness_rate));
    }
    if (!(separation >= 0.0) || !std::isfinite(separation)) {
        throw ConfigError("synthetic: separation must be >= 0");
    }
    if (!(noise > 0.0) || !std::isfinite(noise)) {
        throw ConfigError("synthetic: noise scale must be positive");
    }
    if (classes < 2 || classes > 65535) {
        throw ConfigError("synthetic: need at least two classes");
    }
    if (background_components == 0) {
        throw ConfigError("synthetic: need at least one background component");
    }
    for (std::size_t w : source_widths) {
        // Class directions plus at least one free dimension for the background.
        if (w < classes) {
            throw ConfigError("synthetic: source width " + std::to_string(w) + " is too small for " +
                              std::to_string(classes) + " classes");
        }
    }
}

namespace {

std::size_t witness_count(double rate, std::size_t n)
{
    return static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n) - 1e-9));
}

double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

void remove_component(std::vector<double>& v, const std::vector<double>& unit)
{
    const double d = dot(v, unit);
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] -= d * unit[i];
    }
}

struct SourceModel {
    std::vector<std::vector<double>> directions; // one unit vector per positive class
    std::vector<std::vector<double>> means;      // background components
};

SourceModel make_source_model(std::size_t width, std::size_t classes, std::size_t components, Rng& rng)
{
    SourceModel m;
    // Gram-Schmidt on Gaussian draws; retry degenerate draws.
    while (m.directions.size() + 1 < classes) {
        std::vector<double> v(width);
        for (auto& x : v) {
            x = rng.normal();
        }
        for (const auto& u : m.directions) {
            remove_component(v, u);
        }
        const double norm = std::sqrt(dot(v, v));
        if (norm < 1e-6) {
            continue;
        }
        for (auto& x : v) {
            x /= norm;
        }
        m.directions.push_back(std::move(v));
    }
    for (std::size_t c = 0; c < components; ++c) {
        std::vector<double> mu(width);
        for (auto& x : mu) {
            x = rng.normal(0.0, 1.5);
        }
        for (const auto& u : m.directions) {
            remove_component(mu, u);
        }
        m.means.push_back(std::move(mu));
    }
    return m;
}

} // namespace

Dataset generate_synthetic(const SyntheticConfig& config)
{
    config.validate();
    if (witness_count(config.witness_rate, config.min_instances) > config.min_instances) {
        throw ConfigError("synthetic: witness count exceeds bag size");
    }

    Rng structure(config.seed, 0);
    Dataset ds;
    std::vector<SourceModel> models;
    for (std::size_t s = 0; s < config.source_widths.size(); ++s) {
        ds.sources.push_back({"src" + std::to_string(s), config.source_widths[s], 256});
        models.push_back(
            make_source_model(config.source_widths[s], config.classes, config.background_components, structure));
    }
    if (config.classes == 2) {
        ds.class_names = {"negative", "positive"};
    } else {
        for (std::size_t k = 0; k < config.classes; ++k) {
            ds.class_names.push_back("class_" + std::to_string(k));
        }
    }

    std::vector<std::uint16_t> labels(config.bags);
    for (std::size_t i = 0; i < config.bags; ++i) {
        labels[i] = static_cast<std::uint16_t>(i % config.classes);
    }
    structure.shuffle(std::span<std::uint16_t>(labels));

    for (std::size_t i = 0; i < config.bags; ++i) {
        Rng rng(config.seed, 1 + i);
        BagRecord bag;
        char id[32];
        std::snprintf(id, sizeof id, "bag_%04zu", i);
        bag.id = id;
        bag.label = labels[i];
        const std::size_t span = config.max_instances - config.min_instances + 1;
        const std::size_t n = config.min_instances + static_cast<std::size_t>(rng.uniform_index(span));

        std::vector<bool> flags(n, false);
        if (bag.label > 0) {
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            rng.shuffle(std::span<std::size_t>(order));
            const std::size_t w = witness_count(config.witness_rate, n);
            for (std::size_t j = 0; j < w; ++j) {
                flags[order[j]] = true;
            }
        }

        for (std::size_t s = 0; s < models.size(); ++s) {
            const auto& m = models[s];
            const std::size_t width = config.source_widths[s];
            // Per-coordinate RMS shift of `separation` noise units.
            const double shift = config.separation * config.noise * std::sqrt(static_cast<double>(width));
            Tensor<float> x(Shape{n, width});
            for (std::size_t r = 0; r < n; ++r) {
                const auto& mu = m.means[rng.uniform_index(m.means.size())];
                for (std::size_t c = 0; c < width; ++c) {
                    double v = mu[c] + config.noise * rng.normal();
                    if (flags[r]) {
                        v += shift * m.directions[bag.label - 1][c];
                    }
                    x.at(r, c) = static_cast<float>(v);
                }
            }
            bag.sources.push_back(std::move(x));
        }
        bag.witness = std::move(flags);
        ds.bags.push_back(std::move(bag));
    }
    return ds;
}

} // namespace dqmil
