#pragma once

#include "dqmil/rng.hpp"
#include "dqmil/tensor.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace dqmil {

/// Trainable tensor with its gradient slot.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    /// Whether decoupled weight decay applies (false for latents, biases, norm gains).
    bool decay = true;

    void zero_grad() { grad = Tensor<T>(value.shape()); }
};

/// Ordered, name-addressable parameter collection. Indices are stable.
template <typename T>
class ParameterSet {
public:
    std::size_t add(std::string name, Tensor<T> value, bool decay);

    std::size_t size() const noexcept { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

    std::optional<std::size_t> find(const std::string& name) const;
    Parameter<T>& at(const std::string& name);
    const Parameter<T>& at(const std::string& name) const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad();
    /// Total scalar count.
    std::size_t scalar_count() const;

private:
    std::vector<Parameter<T>> params_;
};

extern template struct Parameter<float>;
extern template struct Parameter<double>;
extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

/// Rejection-sampled N(mean, stddev) restricted to [lo, hi].
template <typename T>
Tensor<T> trunc_normal_init(Shape shape, Rng& rng, double mean = 0.0, double stddev = 0.02, double lo = -2.0,
                            double hi = 2.0);

/// U(-bound, bound), the usual fan-in initialisation for linear layers.
template <typename T>
Tensor<T> uniform_init(Shape shape, Rng& rng, double bound);

} // namespace dqmil
