#include "dqmil/parameters.hpp"

#include "dqmil/errors.hpp"

namespace dqmil {

template <typename T>
std::size_t ParameterSet<T>::add(std::string name, Tensor<T> value, bool decay)
{
    if (find(name)) {
        throw ConfigError("duplicate parameter name '" + name + "'");
    }
    Parameter<T> p{std::move(name), std::move(value), {}, decay};
    p.zero_grad();
    params_.push_back(std::move(p));
    return params_.size() - 1;
}

template <typename T>
std::optional<std::size_t> ParameterSet<T>::find(const std::string& name) const
{
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name == name) {
            return i;
        }
    }
    return std::nullopt;
}

template <typename T>
Parameter<T>& ParameterSet<T>::at(const std::string& name)
{
    if (auto i = find(name)) {
        return params_[*i];
    }
    throw LookupError("no parameter named '" + name + "'");
}

template <typename T>
const Parameter<T>& ParameterSet<T>::at(const std::string& name) const
{
    if (auto i = find(name)) {
        return params_[*i];
    }
    throw LookupError("no parameter named '" + name + "'");
}

template <typename T>
void ParameterSet<T>::zero_grad()
{
    for (auto& p : params_) {
        p.zero_grad();
    }
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.value.size();
    }
    return n;
}

template <typename T>
Tensor<T> trunc_normal_init(Shape shape, Rng& rng, double mean, double stddev, double lo, double hi)
{
    if (!(lo < hi)) {
        throw ParameterError("trunc_normal_init requires lo < hi, got [" + std::to_string(lo) + ", " +
                             std::to_string(hi) + "]");
    }
    if (!(stddev > 0.0)) {
        throw ParameterError("trunc_normal_init requires stddev > 0");
    }
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) {
        double x;
        do {
            x = rng.normal(mean, stddev);
        } while (x < lo || x > hi);
        v = static_cast<T>(x);
    }
    return t;
}

template <typename T>
Tensor<T> uniform_init(Shape shape, Rng& rng, double bound)
{
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) {
        v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
    }
    return t;
}

template struct Parameter<float>;
template struct Parameter<double>;
template class ParameterSet<float>;
template class ParameterSet<double>;
template Tensor<float> trunc_normal_init<float>(Shape, Rng&, double, double, double, double);
template Tensor<double> trunc_normal_init<double>(Shape, Rng&, double, double, double, double);
template Tensor<float> uniform_init<float>(Shape, Rng&, double);
template Tensor<double> uniform_init<double>(Shape, Rng&, double);

} // namespace dqmil
