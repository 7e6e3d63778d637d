#pragma once

#include "dqmil/model.hpp"

#include <cstddef>
#include <span>

namespace dqmil {

/// Probabilities are clamped to this floor before every logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

struct LossWeights {
    double alpha = 0.7;  ///< CE/KL balance of the MIL pathway
    double lambda = 0.03; ///< hint weight
    /// Stop gradients through p_sa in the KL term.
    bool detach_teacher = true;

    void validate() const;
};

/// Scalar parts of one training step's loss.
///
/// For dq-sd: total = ce_sa + alpha * ce_mil + (1 - alpha) * kl + lambda * hint.
/// For dq-ce: total = CE(blended p); ce_sa and ce_mil are reported for
/// monitoring only. Single-pathway variants: total is that head's CE.
struct LossBreakdown {
    double total = 0.0;
    double ce_sa = 0.0;
    double ce_mil = 0.0;
    double kl = 0.0;
    double hint = 0.0;
};

/// Recomputes `total` from the parts as the variant prescribes (dq-ce has no
/// such identity and returns the stored total).
double recompose_total(const LossBreakdown& parts, Variant variant, const LossWeights& weights);

// Value-level terms.

/// -log max(p[label], floor).
double cross_entropy(std::span<const double> p, std::size_t label);
/// sum_i s_i log(s_i / t_i) with both sides floored.
double kl_divergence(std::span<const double> student, std::span<const double> teacher);
/// Squared Euclidean distance.
double hint_loss(std::span<const double> t_sa, std::span<const double> t_mil);

// Graph-level terms.

template <typename T>
Var cross_entropy(Graph<T>& g, Var p, std::size_t label);
/// KL(student || teacher); the teacher is detached when `detach_teacher`.
template <typename T>
Var kl_divergence(Graph<T>& g, Var student, Var teacher, bool detach_teacher);
/// ||t_sa - t_mil||^2 with t_sa detached: only t_mil is pulled.
template <typename T>
Var hint_loss(Graph<T>& g, Var t_sa, Var t_mil);

struct LossResult {
    Var total;
    LossBreakdown parts;
};

/// Training objective for `variant` over one bag forward pass.
template <typename T>
LossResult self_distillation_loss(Graph<T>& g, const BagForward& out, std::size_t label, const LossWeights& weights,
                                  Variant variant);

} // namespace dqmil
