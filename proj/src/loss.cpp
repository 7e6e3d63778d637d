#include "dqmil/loss.hpp"

#include "dqmil/errors.hpp"

#include <algorithm>
#include <cmath>

namespace dqmil {

void LossWeights::validate() const
{
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ParameterError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw ParameterError("lambda must be non-negative, got " + std::to_string(lambda));
    }
}

double recompose_total(const LossBreakdown& b, Variant variant, const LossWeights& w)
{
    switch (variant) {
    case Variant::DqSd:
        return b.ce_sa + w.alpha * b.ce_mil + (1.0 - w.alpha) * b.kl + w.lambda * b.hint;
    case Variant::MilOnly:
        return b.ce_mil;
    case Variant::PerceiverOnly:
        return b.ce_sa;
    case Variant::DqCe:
        return b.total;
    }
    return b.total;
}

double cross_entropy(std::span<const double> p, std::size_t label)
{
    if (label >= p.size()) {
        throw LabelError("label " + std::to_string(label) + " out of range for " + std::to_string(p.size()) +
                         " classes");
    }
    return -std::log(std::max(p[label], kProbabilityFloor));
}

double kl_divergence(std::span<const double> student, std::span<const double> teacher)
{
    if (student.size() != teacher.size()) {
        throw DimensionError("kl_divergence: distributions of different sizes");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < student.size(); ++i) {
        const double s = std::max(student[i], kProbabilityFloor);
        const double t = std::max(teacher[i], kProbabilityFloor);
        kl += student[i] * (std::log(s) - std::log(t));
    }
    return kl;
}

double hint_loss(std::span<const double> t_sa, std::span<const double> t_mil)
{
    if (t_sa.size() != t_mil.size()) {
        throw DimensionError("hint_loss: token widths " + std::to_string(t_sa.size()) + " and " +
                             std::to_string(t_mil.size()) + " differ");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < t_sa.size(); ++i) {
        const double d = t_sa[i] - t_mil[i];
        s += d * d;
    }
    return s;
}

template <typename T>
Var cross_entropy(Graph<T>& g, Var p, std::size_t label)
{
    const auto& pv = g.value(p);
    if (label >= pv.size()) {
        throw LabelError("label " + std::to_string(label) + " out of range for " + std::to_string(pv.size()) +
                         " classes");
    }
    return scale(g, log_floor(g, select(g, p, label), kProbabilityFloor), -1.0);
}

template <typename T>
Var kl_divergence(Graph<T>& g, Var student, Var teacher, bool detach_teacher)
{
    if (g.value(student).shape() != g.value(teacher).shape()) {
        throw DimensionError("kl_divergence: distributions of different shapes");
    }
    Var t = detach_teacher ? g.detach(teacher) : teacher;
    Var log_ratio = sub(g, log_floor(g, student, kProbabilityFloor), log_floor(g, t, kProbabilityFloor));
    return sum(g, mul(g, student, log_ratio));
}

template <typename T>
Var hint_loss(Graph<T>& g, Var t_sa, Var t_mil)
{
    if (g.value(t_sa).shape() != g.value(t_mil).shape()) {
        throw DimensionError("hint_loss: token shapes " + shape_string(g.value(t_sa).shape()) + " and " +
                             shape_string(g.value(t_mil).shape()) + " differ");
    }
    return l2_norm_sq(g, sub(g, g.detach(t_sa), t_mil));
}

template <typename T>
LossResult self_distillation_loss(Graph<T>& g, const BagForward& out, std::size_t label, const LossWeights& w,
                                  Variant variant)
{
    w.validate();
    auto scalar = [&g](Var v) { return static_cast<double>(g.value(v)[0]); };
    LossResult r;
    switch (variant) {
    case Variant::MilOnly: {
        if (!out.has_mil) {
            throw ContractError("mil-only loss needs the MIL pathway");
        }
        r.total = cross_entropy(g, out.p_mil, label);
        r.parts.ce_mil = scalar(r.total);
        break;
    }
    case Variant::PerceiverOnly: {
        if (!out.has_sa) {
            throw ContractError("perceiver-only loss needs the Perceiver pathway");
        }
        r.total = cross_entropy(g, out.p_sa, label);
        r.parts.ce_sa = scalar(r.total);
        break;
    }
    case Variant::DqCe: {
        if (!out.has_sa || !out.has_mil) {
            throw ContractError("dq-ce loss needs both pathways");
        }
        r.total = cross_entropy(g, out.p, label);
        std::vector<double> p_sa(g.value(out.p_sa).values().begin(), g.value(out.p_sa).values().end());
        std::vector<double> p_mil(g.value(out.p_mil).values().begin(), g.value(out.p_mil).values().end());
        r.parts.ce_sa = cross_entropy(std::span<const double>(p_sa), label);
        r.parts.ce_mil = cross_entropy(std::span<const double>(p_mil), label);
        break;
    }
    case Variant::DqSd: {
        if (!out.has_sa || !out.has_mil) {
            throw ContractError("dq-sd loss needs both pathways");
        }
        Var ce_sa = cross_entropy(g, out.p_sa, label);
        Var ce_mil = cross_entropy(g, out.p_mil, label);
        Var kl = kl_divergence(g, out.p_mil, out.p_sa, w.detach_teacher);
        Var hint = hint_loss(g, out.t_sa, out.t_mil);
        r.parts.ce_sa = scalar(ce_sa);
        r.parts.ce_mil = scalar(ce_mil);
        r.parts.kl = scalar(kl);
        r.parts.hint = scalar(hint);
        Var total = add(g, ce_sa, scale(g, ce_mil, w.alpha));
        total = add(g, total, scale(g, kl, 1.0 - w.alpha));
        r.total = add(g, total, scale(g, hint, w.lambda));
        break;
    }
    }
    r.parts.total = scalar(r.total);
    return r;
}

#define DQMIL_INSTANTIATE_LOSS(T)                                                                                      \
    template Var cross_entropy<T>(Graph<T>&, Var, std::size_t);                                                        \
    template Var kl_divergence<T>(Graph<T>&, Var, Var, bool);                                                          \
    template Var hint_loss<T>(Graph<T>&, Var, Var);                                                                    \
    template LossResult self_distillation_loss<T>(Graph<T>&, const BagForward&, std::size_t, const LossWeights&,       \
                                                  Variant);

DQMIL_INSTANTIATE_LOSS(float)
DQMIL_INSTANTIATE_LOSS(double)

} // namespace dqmil
