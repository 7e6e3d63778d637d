#pragma once

#include "dqmil/parameters.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace dqmil {

struct OptimConfig {
    double lr = 2e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t lookahead_k = 5;
    double lookahead_alpha = 0.5;
    /// Global gradient-norm clip; 0 disables.
    double clip_norm = 0.0;

    void validate() const;
};

/// Moments, step counter and lookahead slow weights for one parameter set.
template <typename T>
struct OptimState {
    std::uint64_t step = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::vector<Tensor<T>> slow;

    /// Zero moments and slow weights equal to the current values.
    static OptimState init(const ParameterSet<T>& params);
};

/// rho_t of the rectification; the adaptive branch runs when it exceeds 4.
double radam_rho(double beta2, std::uint64_t t);

/// One RAdam update from the gradients stored in `params`. Decoupled weight
/// decay is applied first, to parameters flagged for decay only.
/// Throws TrainingAbort naming the parameter on a non-finite gradient.
template <typename T>
void radam_step(ParameterSet<T>& params, OptimState<T>& state, const OptimConfig& config);

/// Every k-th step (by state.step): slow += alpha (fast - slow), fast = slow.
template <typename T>
void lookahead_sync(ParameterSet<T>& params, OptimState<T>& state, std::size_t k, double alpha);

/// radam_step followed by lookahead_sync.
template <typename T>
class LookaheadRAdam {
public:
    LookaheadRAdam(ParameterSet<T>& params, OptimConfig config);

    void step();
    const OptimState<T>& state() const noexcept { return state_; }
    const OptimConfig& config() const noexcept { return config_; }

private:
    ParameterSet<T>* params_;
    OptimConfig config_;
    OptimState<T> state_;
};

} // namespace dqmil
