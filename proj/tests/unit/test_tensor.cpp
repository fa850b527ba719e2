#include <cmath>

#include "c3d/error.hpp"
#include "c3d/tensor.hpp"
#include "doctest.h"

using namespace c3d;

TEST_CASE("tensor_new fills every element") {
    const Tensor t = tensor_new(Shape{2, 3}, 0.0);
    CHECK(t.size() == 6);
    for (double v : t.values()) CHECK(v == 0.0);

    const Tensor one = tensor_new(Shape{1, 1, 1, 1, 1}, 7.5);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == 7.5);
}

TEST_CASE("invalid shapes are rejected") {
    CHECK_THROWS_AS(Shape({3, 0}), ShapeError);
    CHECK_THROWS_AS(Shape({2, -1}), ShapeError);
    CHECK_THROWS_AS(Shape({1, 1, 1, 1, 1, 1}), ShapeError);
    CHECK_THROWS_AS(Shape(std::vector<std::size_t>{}), ShapeError);
}

TEST_CASE("element count overflow is detected") {
    const std::int64_t big = std::int64_t{1} << 40;
    CHECK_THROWS_AS(Shape({big, big}), ShapeError);
    CHECK_THROWS_AS(Shape({big, 1 << 20, 1 << 20}), ShapeError);
}

TEST_CASE("random init is a pure function of shape, scheme and seed") {
    const Shape s{4, 3, 3, 3, 3};
    CHECK(tensor_random_init(s, UniformFanIn{}, 11) == tensor_random_init(s, UniformFanIn{}, 11));
    CHECK_FALSE(tensor_random_init(s, UniformFanIn{}, 11) == tensor_random_init(s, UniformFanIn{}, 12));

    const Tensor zeros = tensor_random_init(s, ConstantFill{0.0}, 5);
    for (double v : zeros.values()) CHECK(v == 0.0);
}

TEST_CASE("uniform fan-in bound") {
    const Shape kernel{1, 1, 3, 3, 3};
    CHECK(fan_in(kernel) == 27);
    CHECK(uniform_fan_in_bound(kernel) == doctest::Approx(0.19245).epsilon(1e-4));
    const Tensor t = tensor_random_init(Shape{64, 1, 3, 3, 3}, UniformFanIn{}, 3);
    for (double v : t.values()) CHECK(std::abs(v) <= 1.0 / std::sqrt(27.0));
}

TEST_CASE("reshape") {
    Tensor pool5 = tensor_random_init(Shape{1, 256, 1, 4, 4}, UniformFanIn{}, 1);
    const Tensor flat = tensor_reshape(pool5, Shape{1, 4096});
    CHECK(flat.shape() == Shape{1, 4096});
    CHECK(std::equal(flat.values().begin(), flat.values().end(), pool5.values().begin()));

    CHECK(tensor_reshape(pool5, pool5.shape()) == pool5);
    CHECK_THROWS_AS((void)tensor_reshape(Tensor(Shape{2, 3}), Shape{4, 2}), ShapeError);
}

TEST_CASE("reshape round trip is the identity on data") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Shape a{2, 3, 4, 5};
        const Tensor t = tensor_random_init(a, UniformFanIn{}, seed);
        const Shape b{6, 20};
        CHECK(tensor_reshape(tensor_reshape(t, b), a) == t);
    }
}
