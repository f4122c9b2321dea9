#ifndef SURVIVAL_NN_TENSOR_HPP
#define SURVIVAL_NN_TENSOR_HPP

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace survival::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s)
{
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& s)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

/// Cache-line aligned storage. Eigen picks vectorized code paths by the
/// runtime alignment of mapped buffers, so unaligned heap blocks make float
/// sums depend on where the allocator happened to place them.
template <class T, std::size_t Align = 64>
struct AlignedAllocator {
    using value_type = T;
    template <class U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept
    {
    }

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align})); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }

    template <class U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U, Align>&) noexcept
    {
        return true;
    }
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major array. Data length always equals the product of the shape.
template <class T>
class Tensor {
public:
    using value_type = T;
    using Storage = std::vector<T, AlignedAllocator<T>>;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
    Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) { check_length(); }
    Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end())
    {
        check_length();
    }
    Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), Storage(data)) {}

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> span() noexcept { return data_; }
    std::span<const T> span() const noexcept { return data_; }
    Storage& values() noexcept { return data_; }
    const Storage& values() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// 2-D element access for [rows, cols] tensors.
    T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape s) const
    {
        if (shape_size(s) != size())
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
        return Tensor(std::move(s), data_);
    }

    template <class U>
    Tensor<U> cast() const
    {
        typename Tensor<U>::Storage out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    void check_length() const
    {
        if (data_.size() != shape_size(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
    }

    Shape shape_;
    Storage data_;
};

} // namespace survival::nn

#endif
