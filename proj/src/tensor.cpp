#include "dqmil/tensor.hpp"

#include "dqmil/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace dqmil {

std::size_t shape_size(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_size(shape_), T(0))
{
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values))
{
    if (shape_size(shape_) != values_.size()) {
        throw DimensionError("tensor shape " + shape_string(shape_) + " holds " + std::to_string(shape_size(shape_)) +
                             " values, got " + std::to_string(values_.size()));
    }
}

template <typename T>
Tensor<T> Tensor<T>::filled(Shape shape, T value)
{
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows)
{
    const std::size_t m = rows.size();
    const std::size_t n = m == 0 ? 0 : rows.begin()->size();
    std::vector<T> values;
    values.reserve(m * n);
    for (const auto& r : rows) {
        if (r.size() != n) {
            throw DimensionError("ragged matrix literal");
        }
        values.insert(values.end(), r.begin(), r.end());
    }
    return Tensor({m, n}, std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::row(std::initializer_list<T> values)
{
    return Tensor({1, values.size()}, std::vector<T>(values));
}

template <typename T>
std::size_t Tensor<T>::rows() const noexcept
{
    if (shape_.size() < 2) {
        return 1;
    }
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) {
        r *= shape_[i];
    }
    return r;
}

template <typename T>
std::size_t Tensor<T>::cols() const noexcept
{
    return shape_.empty() ? 1 : shape_.back();
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const
{
    if (shape_size(shape) != values_.size()) {
        throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), values_);
}

template <typename T>
void Tensor<T>::fill(T value)
{
    std::fill(values_.begin(), values_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept
{
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

// The kernels below keep a fixed summation order over the inner dimension
// for every output element, so results do not depend on vector width.

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate)
{
    if (!accumulate) {
        std::fill(c, c + m * n, T(0));
    }
    for (std::size_t i = 0; i < m; ++i) {
        T* __restrict crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* __restrict brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate)
{
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t p = 0; p < k; ++p) {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate)
{
    if (!accumulate) {
        std::fill(c, c + m * n, T(0));
    }
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* __restrict brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            T* __restrict crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template void gemm_nn<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
template void gemm_nn<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool);
template void gemm_nt<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
template void gemm_nt<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool);
template void gemm_tn<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool);
template void gemm_tn<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool);

} // namespace dqmil
