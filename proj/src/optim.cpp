#include "dqmil/optim.hpp"

#include "dqmil/errors.hpp"

#include <cmath>
#include <string>

namespace dqmil {

void OptimConfig::validate() const
{
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
        throw ParameterError("learning rate must be non-negative, got " + std::to_string(lr));
    }
    if (!(weight_decay >= 0.0)) {
        throw ParameterError("weight decay must be non-negative");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ParameterError("betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) {
        throw ParameterError("eps must be positive");
    }
    if (lookahead_k < 1) {
        throw ParameterError("lookahead k must be at least 1");
    }
    if (!(lookahead_alpha > 0.0 && lookahead_alpha <= 1.0)) {
        throw ParameterError("lookahead alpha must lie in (0, 1]");
    }
    if (!(clip_norm >= 0.0)) {
        throw ParameterError("clip norm must be non-negative");
    }
}

template <typename T>
OptimState<T> OptimState<T>::init(const ParameterSet<T>& params)
{
    OptimState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.value.shape());
        s.v.emplace_back(p.value.shape());
        s.slow.push_back(p.value);
    }
    return s;
}

double radam_rho(double beta2, std::uint64_t t)
{
    const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    const double b2t = std::pow(beta2, static_cast<double>(t));
    return rho_inf - 2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
}

template <typename T>
void radam_step(ParameterSet<T>& params, OptimState<T>& state, const OptimConfig& c)
{
    if (state.m.size() != params.size()) {
        throw StateError("optimizer state tracks " + std::to_string(state.m.size()) + " parameters, set has " +
                         std::to_string(params.size()));
    }
    double grad_sq = 0.0;
    for (const auto& p : params) {
        if (p.grad.shape() != p.value.shape()) {
            throw DimensionError("gradient of '" + p.name + "' has shape " + shape_string(p.grad.shape()) +
                                 ", parameter " + shape_string(p.value.shape()));
        }
        for (T g : p.grad.values()) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw TrainingAbort("non-finite gradient in parameter '" + p.name + "'");
            }
            grad_sq += static_cast<double>(g) * static_cast<double>(g);
        }
    }
    double grad_scale = 1.0;
    if (c.clip_norm > 0.0) {
        const double norm = std::sqrt(grad_sq);
        if (norm > c.clip_norm) {
            grad_scale = c.clip_norm / norm;
        }
    }

    const std::uint64_t t = ++state.step;
    const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    const double rho_inf = 2.0 / (1.0 - c.beta2) - 1.0;
    const double rho = radam_rho(c.beta2, t);
    const bool rectified = rho > 4.0;
    const double r =
        rectified ? std::sqrt((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)) : 0.0;

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto theta = p.value.values();
        auto grad = p.grad.values();
        auto m = state.m[i].values();
        auto v = state.v[i].values();
        const double decay = p.decay ? c.lr * c.weight_decay : 0.0;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double g = static_cast<double>(grad[j]) * grad_scale;
            double th = static_cast<double>(theta[j]);
            th -= decay * th;
            const double mj = c.beta1 * static_cast<double>(m[j]) + (1.0 - c.beta1) * g;
            const double vj = c.beta2 * static_cast<double>(v[j]) + (1.0 - c.beta2) * g * g;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double m_hat = mj / bias1;
            if (rectified) {
                const double v_hat = std::sqrt(vj / bias2);
                th -= c.lr * r * m_hat / (v_hat + c.eps);
            } else {
                th -= c.lr * m_hat;
            }
            theta[j] = static_cast<T>(th);
        }
    }
}

template <typename T>
void lookahead_sync(ParameterSet<T>& params, OptimState<T>& state, std::size_t k, double alpha)
{
    if (state.step == 0) {
        throw StateError("lookahead_sync before the first step");
    }
    if (k == 0 || state.step % k != 0) {
        return;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto fast = params[i].value.values();
        auto slow = state.slow[i].values();
        for (std::size_t j = 0; j < fast.size(); ++j) {
            const double s = static_cast<double>(slow[j]);
            slow[j] = static_cast<T>(s + alpha * (static_cast<double>(fast[j]) - s));
            fast[j] = slow[j];
        }
    }
}

template <typename T>
LookaheadRAdam<T>::LookaheadRAdam(ParameterSet<T>& params, OptimConfig config)
    : params_(&params), config_(config), state_(OptimState<T>::init(params))
{
    config_.validate();
}

template <typename T>
void LookaheadRAdam<T>::step()
{
    radam_step(*params_, state_, config_);
    lookahead_sync(*params_, state_, config_.lookahead_k, config_.lookahead_alpha);
}

template struct OptimState<float>;
template struct OptimState<double>;
template void radam_step<float>(ParameterSet<float>&, OptimState<float>&, const OptimConfig&);
template void radam_step<double>(ParameterSet<double>&, OptimState<double>&, const OptimConfig&);
template void lookahead_sync<float>(ParameterSet<float>&, OptimState<float>&, std::size_t, double);
template void lookahead_sync<double>(ParameterSet<double>&, OptimState<double>&, std::size_t, double);
template class LookaheadRAdam<float>;
template class LookaheadRAdam<double>;

} // namespace dqmil
