#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace c3d {

/// Extents of a dense tensor, 1 to 5 axes. For 5D tensors the axis order is
/// (batch, channels, temporal length, height, width).
class Shape {
public:
    static constexpr std::size_t kMaxRank = 5;

    Shape() = default;
    Shape(std::initializer_list<std::int64_t> dims);
    explicit Shape(std::span<const std::int64_t> dims);
    explicit Shape(const std::vector<std::size_t>& dims);

    [[nodiscard]] std::size_t rank() const noexcept { return dims_.size(); }
    [[nodiscard]] std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
    [[nodiscard]] std::size_t count() const noexcept { return count_; }
    [[nodiscard]] const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    [[nodiscard]] std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;

private:
    void validate_and_count();

    std::vector<std::size_t> dims_;
    std::size_t count_ = 0;
};

/// Dense row-major array of doubles.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_[axis]; }

    [[nodiscard]] std::span<double> values() noexcept { return data_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
    [[nodiscard]] double* data() noexcept { return data_.data(); }
    [[nodiscard]] const double* data() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Flat offset of a 5D coordinate.
    [[nodiscard]] std::size_t offset(std::size_t n, std::size_t c, std::size_t l, std::size_t h,
                                     std::size_t w) const noexcept {
        const auto& d = shape_.dims();
        return (((n * d[1] + c) * d[2] + l) * d[3] + h) * d[4] + w;
    }
    double& at(std::size_t n, std::size_t c, std::size_t l, std::size_t h, std::size_t w) noexcept {
        return data_[offset(n, c, l, h, w)];
    }
    [[nodiscard]] double at(std::size_t n, std::size_t c, std::size_t l, std::size_t h,
                            std::size_t w) const noexcept {
        return data_[offset(n, c, l, h, w)];
    }

    [[nodiscard]] Tensor reshaped(const Shape& new_shape) const&;
    [[nodiscard]] Tensor reshaped(const Shape& new_shape) &&;

    [[nodiscard]] bool all_finite() const noexcept;
    void fill(double value) noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// U(-b, b) with b = gain * sqrt(1 / fan_in).
struct UniformFanIn {
    double gain = 1.0;
};
struct ConstantFill {
    double value = 0.0;
};
using InitScheme = std::variant<UniformFanIn, ConstantFill>;

/// Product of every extent except the leading (output channel) one.
[[nodiscard]] std::size_t fan_in(const Shape& shape) noexcept;

/// Half-width of the uniform initialization interval, sqrt(1 / fan_in).
[[nodiscard]] double uniform_fan_in_bound(const Shape& shape) noexcept;

[[nodiscard]] Tensor tensor_new(const Shape& shape, double fill);
[[nodiscard]] Tensor tensor_random_init(const Shape& shape, const InitScheme& scheme,
                                        std::uint64_t seed);
[[nodiscard]] Tensor tensor_reshape(const Tensor& t, const Shape& new_shape);

}  // namespace c3d
