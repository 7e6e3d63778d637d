#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dqmil {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. Rank 0 is a scalar with one value.
///
/// Everything above rank 2 is viewed as (product of leading extents) x (last
/// extent) by the row-oriented kernels.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : shape_{0} {}
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<T> values);

    static Tensor scalar(T value) { return Tensor(Shape{}, {value}); }
    static Tensor filled(Shape shape, T value);
    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);
    static Tensor row(std::initializer_list<T> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    /// Product of every extent except the last.
    std::size_t rows() const noexcept;
    /// Last extent (1 for scalars).
    std::size_t cols() const noexcept;

    std::span<T> values() noexcept { return values_; }
    std::span<const T> values() const noexcept { return values_; }
    T* data() noexcept { return values_.data(); }
    const T* data() const noexcept { return values_.data(); }

    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }
    T& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

    /// Same values, new shape of equal size.
    Tensor reshaped(Shape shape) const;
    void fill(T value);
    bool all_finite() const noexcept;

    template <typename U>
    Tensor<U> cast() const
    {
        return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<T> values_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

/// C[m x n] (+)= A[m x k] * B[k x n] on raw row-major storage.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);
/// C[m x n] (+)= A[m x k] * B[n x k]^T.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);
/// C[m x n] (+)= A[k x m]^T * B[k x n].
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

} // namespace dqmil
