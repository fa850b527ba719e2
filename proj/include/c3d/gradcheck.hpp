#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "c3d/network.hpp"
#include "c3d/tensor.hpp"

namespace c3d::gradcheck {

inline constexpr double kStep = 1e-3;
/// Magnitudes below this are compared absolutely; keeps exact zeros from
/// turning round-off into huge relative errors.
inline constexpr double kScaleFloor = 1e-6;

[[nodiscard]] double relative_error(double analytic, double numeric) noexcept;
[[nodiscard]] double max_relative_error(const Tensor& analytic, const Tensor& numeric);

/// Central differences of a scalar function with respect to every element of x.
[[nodiscard]] Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                                      double step = kStep);

struct OpReport {
    std::string op;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates whose perturbation crossed a ReLU kink or max tie
};

/// Every layer kind plus an end-to-end tiny network, on seeded random data.
[[nodiscard]] std::vector<OpReport> run_suite(std::uint64_t seed);

/// Two conv layers, one pool and a classifier on a 3x4x8x8 clip.
[[nodiscard]] NetworkSpec tiny_network_spec(std::size_t class_count = 3);

/// Finite-difference check of loss_and_gradients over every parameter.
[[nodiscard]] OpReport check_network(const Network& net, const Tensor& batch, const std::vector<int>& labels,
                                     double step = kStep);

}  // namespace c3d::gradcheck
