#pragma once

#include "dqmil/data.hpp"
#include "dqmil/graph.hpp"
#include "dqmil/loss.hpp"
#include "dqmil/model.hpp"
#include "dqmil/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace dqtest {

using namespace dqmil;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double sd = 1.0)
{
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) {
        v = rng.normal(0.0, sd);
    }
    return t;
}

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central difference of f at every element of x, restoring x afterwards.
/// The five-point stencil is fourth-order accurate and tolerates a larger h,
/// which keeps round-off in f from swamping partials near zero.
inline std::vector<double> numeric_gradient(Tensor<double>& x, const std::function<double()>& f, double h,
                                            bool five_point = false)
{
    std::vector<double> out(x.size());
    auto at = [&](std::size_t i, double value) {
        x[i] = value;
        return f();
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        if (five_point) {
            const double d = -at(i, keep + 2 * h) + 8 * at(i, keep + h) - 8 * at(i, keep - h) + at(i, keep - 2 * h);
            out[i] = d / (12.0 * h);
        } else {
            out[i] = (at(i, keep + h) - at(i, keep - h)) / (2.0 * h);
        }
        x[i] = keep;
    }
    return out;
}

/// Max relative error between the graph gradient of `build(g, x)` wrt x and central differences.
inline double op_gradient_error(Tensor<double> x, const std::function<Var(Graph<double>&, Var)>& build,
                                double h = 1e-5)
{
    Graph<double> g;
    Var in = g.input(x);
    Var loss = build(g, in);
    const auto grads = g.backward(loss);
    const Tensor<double> analytic = grads[in];
    auto f = [&] {
        Graph<double> gg;
        Var v = build(gg, gg.input(x));
        return gg.value(v)[0];
    };
    const auto numeric = numeric_gradient(x, f, h);
    double worst = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
        worst = std::max(worst, relative_error(analytic[i], numeric[i]));
    }
    return worst;
}

/// Random scalar projection so gradient checks see every output element.
inline Var weighted_sum(Graph<double>& g, Var y, std::uint64_t seed)
{
    Rng rng(seed, 99);
    Var w = g.constant(random_tensor(g.value(y).shape(), rng));
    return sum(g, mul(g, y, w));
}

inline SourceEmbeddingSet<double> random_bag(const DQConfig& c, std::size_t n, Rng& rng)
{
    SourceEmbeddingSet<double> bag;
    for (const auto& s : c.sources) {
        bag.ids.push_back(s.id);
        bag.features.push_back(random_tensor({n, s.width}, rng));
    }
    return bag;
}

/// Small model sizes for oracle tests.
inline DQConfig toy_config(std::size_t classes = 2)
{
    DQConfig c;
    c.sources = {{"a", 12, 8}};
    c.latents = 4;
    c.width = 16;
    c.d_k = 8;
    c.depth = 1;
    c.heads = 2;
    c.classes = classes;
    return c;
}

/// Perturbs every parameter value with N(0, sd) so outputs are not near-uniform.
template <typename T>
void jitter(DQModel<T>& model, std::uint64_t seed, double sd = 0.3)
{
    Rng rng(seed, 17);
    for (auto& p : model.params()) {
        for (auto& v : p.value.values()) {
            v = static_cast<T>(static_cast<double>(v) + rng.normal(0.0, sd));
        }
    }
}

/// Self-distillation loss evaluated from outputs, with teacher quantities frozen as below.
/// The hint target is always frozen; the KL teacher only when `frozen_p` is set.
inline double sd_loss_value(const BagOutput& out, std::size_t label, const LossWeights& w, const BagOutput* frozen_p,
                            const BagOutput& frozen_t)
{
    const auto& p_teacher = frozen_p != nullptr ? frozen_p->p_sa : out.p_sa;
    const auto& t_teacher = frozen_t.t_sa;
    double ce_sa = -std::log(std::max(out.p_sa[label], 1e-12));
    double ce_mil = -std::log(std::max(out.p_mil[label], 1e-12));
    double kl = 0.0;
    for (std::size_t k = 0; k < out.p_mil.size(); ++k) {
        kl += out.p_mil[k] * (std::log(std::max(out.p_mil[k], 1e-12)) - std::log(std::max(p_teacher[k], 1e-12)));
    }
    double hint = 0.0;
    for (std::size_t i = 0; i < out.t_mil.size(); ++i) {
        const double d = t_teacher[i] - out.t_mil[i];
        hint += d * d;
    }
    return ce_sa + w.alpha * ce_mil + (1.0 - w.alpha) * kl + w.lambda * hint;
}

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
    std::size_t nonzero = 0;
};

/// Analytic loss gradients of every parameter against central differences.
inline GradCheck check_model_gradients(DQModel<double>& model, const SourceEmbeddingSet<double>& bag,
                                       std::size_t label, const LossWeights& w, double h)
{
    model.params().zero_grad();
    {
        Graph<double> g;
        const auto out = model.forward(g, bag);
        const auto loss = self_distillation_loss(g, out, label, w, Variant::DqSd);
        g.backward(loss.total);
    }
    const BagOutput base = model.infer(bag);
    GradCheck r;
    for (auto& p : model.params()) {
        auto f = [&] { return sd_loss_value(model.infer(bag), label, w, w.detach_teacher ? &base : nullptr, base); };
        const auto numeric = numeric_gradient(p.value, f, h, true);
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            r.max_rel = std::max(r.max_rel, relative_error(p.grad[i], numeric[i]));
            r.nonzero += p.grad[i] != 0.0 ? 1 : 0;
            ++r.checked;
        }
    }
    return r;
}

/// Fused instance rows, computed without the graph.
inline std::vector<std::vector<double>> brute_fuse(const DQModel<double>& m, const SourceEmbeddingSet<double>& bag)
{
    const auto& c = m.config();
    const std::size_t n = bag.features[0].rows();
    std::vector<std::vector<double>> h(n);
    for (std::size_t s = 0; s < c.sources.size(); ++s) {
        const auto& w = m.params().at("dme." + c.sources[s].id + ".weight").value;
        const auto& b = m.params().at("dme." + c.sources[s].id + ".bias").value;
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t o = 0; o < w.cols(); ++o) {
                double acc = b[o];
                for (std::size_t i = 0; i < w.rows(); ++i) {
                    acc += bag.features[s].at(r, i) * w.at(i, o);
                }
                h[r].push_back(acc);
            }
        }
    }
    return h;
}

inline std::vector<double> row_times(const std::vector<double>& x, const Tensor<double>& w)
{
    std::vector<double> y(w.cols(), 0.0);
    for (std::size_t o = 0; o < w.cols(); ++o) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            y[o] += x[i] * w.at(i, o);
        }
    }
    return y;
}

struct MilToken {
    std::vector<double> t_mil;
    std::vector<double> a;
};

/// t_mil = sum_i a_i W_v h_i with a = softmax(q2 . k_i / tau), by direct loops.
inline MilToken brute_mil_token(const DQModel<double>& m, const SourceEmbeddingSet<double>& bag)
{
    const auto h = brute_fuse(m, bag);
    const auto& wk = m.params().at("cross.key.weight").value;
    const auto& wv = m.params().at("cross.value.weight").value;
    const auto& wq = m.params().at("cross.q2_query.weight").value;
    const auto& l2 = m.params().at("latent.q2").value;
    const std::vector<double> q = row_times(std::vector<double>(l2.values().begin(), l2.values().end()), wq);
    const double tau = m.config().resolved_temperature();
    std::vector<double> logits;
    for (const auto& row : h) {
        const auto k = row_times(row, wk);
        double dot = 0.0;
        for (std::size_t j = 0; j < k.size(); ++j) {
            dot += q[j] * k[j];
        }
        logits.push_back(dot / tau);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) {
        z += std::exp(l - mx);
    }
    MilToken r;
    r.t_mil.assign(wv.cols(), 0.0);
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double a = std::exp(logits[i] - mx) / z;
        r.a.push_back(a);
        const auto v = row_times(h[i], wv);
        for (std::size_t j = 0; j < v.size(); ++j) {
            r.t_mil[j] += a * v[j];
        }
    }
    return r;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size()) {
        return INFINITY;
    }
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d = std::max(d, std::abs(a[i] - b[i]));
    }
    return d;
}

/// Scalar RAdam + Lookahead written straight from the recurrences.
struct ScalarOracle {
    double lr, wd, b1, b2, eps;
    int k;
    double alpha;
    double theta, slow, m = 0.0, v = 0.0;
    int t = 0;

    void step(double g)
    {
        ++t;
        theta = theta - lr * wd * theta;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double m_hat = m / (1 - std::pow(b1, t));
        const double rho_inf = 2 / (1 - b2) - 1;
        const double rho = rho_inf - 2 * t * std::pow(b2, t) / (1 - std::pow(b2, t));
        if (rho > 4) {
            const double v_hat = std::sqrt(v / (1 - std::pow(b2, t)));
            const double r = std::sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho));
            theta = theta - lr * r * m_hat / (v_hat + eps);
        } else {
            theta = theta - lr * m_hat;
        }
        if (t % k == 0) {
            slow = slow + alpha * (theta - slow);
            theta = slow;
        }
    }
};

} // namespace dqtest
