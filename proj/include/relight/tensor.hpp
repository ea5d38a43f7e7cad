#ifndef RELIGHT_TENSOR_HPP
#define RELIGHT_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "relight/errors.hpp"

namespace relight {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (int d : shape)
        n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Allocator with cache-line alignment, so vectorized kernels see the same
/// alignment for the same shapes regardless of where the heap places a buffer.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlignment{64};

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

template <class T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array. Image-like data uses the [N, C, H, W] layout.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape))
    {
        for (int d : shape_)
            detail::require(d > 0, "tensor dimensions must be positive, got " + shape_string(shape_));
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, const std::vector<T>& values)
        : shape_(std::move(shape)), data_(values.begin(), values.end())
    {
        detail::require(data_.size() == shape_size(shape_), "tensor value count does not match shape " + shape_string(shape_));
    }

    Tensor(Shape shape, AlignedVector<T> values)
        : shape_(std::move(shape)), data_(std::move(values))
    {
        detail::require(data_.size() == shape_size(shape_), "tensor value count does not match shape " + shape_string(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(int n, int c, int h, int w) noexcept { return data_[index(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const noexcept { return data_[index(n, c, h, w)]; }

    std::size_t index(int n, int c, int h, int w) const noexcept
    {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const
    {
        detail::require(shape_size(shape) == size(), "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        return Tensor(std::move(shape), data_);
    }

    template <class U>
    Tensor<U> cast() const
    {
        AlignedVector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    AlignedVector<T> data_;
};

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::require(a.shape() == b.shape(), "max_abs_diff: shape mismatch");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
    return m;
}

template <class T>
T mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b)
{
    detail::require(a.shape() == b.shape(), "mean_abs_diff: shape mismatch");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    return static_cast<T>(s / static_cast<double>(a.size()));
}

} // namespace relight

#endif // RELIGHT_TENSOR_HPP
