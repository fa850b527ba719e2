#include "c3d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "c3d/error.hpp"

namespace c3d {

Shape::Shape(std::initializer_list<std::int64_t> dims)
    : Shape(std::span<const std::int64_t>(dims.begin(), dims.size())) {}

Shape::Shape(std::span<const std::int64_t> dims) {
    if (dims.empty() || dims.size() > kMaxRank) {
        throw ShapeError("invalid shape: rank " + std::to_string(dims.size()) +
                         " outside [1, 5]");
    }
    for (std::int64_t d : dims) {
        if (d < 1) {
            throw ShapeError("invalid shape: extent " + std::to_string(d) + " must be >= 1");
        }
        dims_.push_back(static_cast<std::size_t>(d));
    }
    validate_and_count();
}

Shape::Shape(const std::vector<std::size_t>& dims) : dims_(dims) { validate_and_count(); }

void Shape::validate_and_count() {
    if (dims_.empty() || dims_.size() > kMaxRank) {
        throw ShapeError("invalid shape: rank " + std::to_string(dims_.size()) +
                         " outside [1, 5]");
    }
    // Bound by the largest double vector we could allocate, not by size_t.
    constexpr std::size_t limit = std::numeric_limits<std::ptrdiff_t>::max() / sizeof(double);
    std::size_t n = 1;
    for (std::size_t d : dims_) {
        if (d == 0) throw ShapeError("invalid shape: zero extent in " + str());
        if (n > limit / d) throw ShapeError("invalid shape: element count overflows in " + str());
        n *= d;
    }
    count_ = n;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (i) os << ',';
        os << dims_[i];
    }
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_.count(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_.count()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
    }
}

Tensor Tensor::reshaped(const Shape& new_shape) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(new_shape);
}

Tensor Tensor::reshaped(const Shape& new_shape) && {
    if (new_shape.count() != shape_.count()) {
        throw ShapeError("cannot reshape " + shape_.str() + " to " + new_shape.str());
    }
    shape_ = new_shape;
    return std::move(*this);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

std::size_t fan_in(const Shape& shape) noexcept {
    return shape.rank() <= 1 ? 1 : shape.count() / shape[0];
}

double uniform_fan_in_bound(const Shape& shape) noexcept {
    return std::sqrt(1.0 / static_cast<double>(fan_in(shape)));
}

Tensor tensor_new(const Shape& shape, double fill) { return Tensor(shape, fill); }

Tensor tensor_random_init(const Shape& shape, const InitScheme& scheme, std::uint64_t seed) {
    Tensor t(shape);
    if (const auto* c = std::get_if<ConstantFill>(&scheme)) {
        t.fill(c->value);
        return t;
    }
    const double b = std::get<UniformFanIn>(scheme).gain * uniform_fan_in_bound(shape);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-b, b);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

Tensor tensor_reshape(const Tensor& t, const Shape& new_shape) { return t.reshaped(new_shape); }

}  // namespace c3d
