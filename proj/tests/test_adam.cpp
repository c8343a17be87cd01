#include <catch_amalgamated.hpp>

#include "ddvi/adam.hpp"
#include "ddvi/rng.hpp"

using namespace ddvi;

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    Tensor p = Tensor::row({1.0, -2.0, 3.0});
    Tensor g = Tensor::row({0.0, 0.0, 0.0});
    AdamState s = AdamState::for_size(3, 1e-3);
    const auto before = p.data;
    adam_step(p, g, s);
    adam_step(p, g, s);
    CHECK(p.data == before);
    CHECK(s.step_count == 2);
}

TEST_CASE("adam: first step moves by lr*g/(sqrt(g^2)+eps)") {
    // Hand evaluation at t=1: m_hat = g, v_hat = g^2, so the update is
    // lr * g / (|g| + eps).
    Tensor p = Tensor::row({0.0});
    Tensor g = Tensor::row({1.0});
    AdamState s = AdamState::for_size(1, 1e-4);
    adam_step(p, g, s);
    const double expected = -1e-4 * 1.0 / (1.0 + 1e-8);
    CHECK(p.data[0] == Catch::Approx(expected).epsilon(1e-12));
    CHECK(s.step_count == 1);
}

TEST_CASE("adam: two identical steps move monotonically against the gradient") {
    Tensor p = Tensor::row({0.5, -0.5});
    Tensor g = Tensor::row({2.0, -3.0});
    AdamState s = AdamState::for_size(2, 1e-3);
    adam_step(p, g, s);
    const auto after1 = p.data;
    adam_step(p, g, s);
    CHECK(s.step_count == 2);
    // positive gradient: parameter strictly decreases each step
    CHECK(after1[0] < 0.5);
    CHECK(p.data[0] < after1[0]);
    // negative gradient: parameter strictly increases each step
    CHECK(after1[1] > -0.5);
    CHECK(p.data[1] > after1[1]);
}

TEST_CASE("adam: length mismatch is a contract violation") {
    Tensor p = Tensor::row({1.0, 2.0});
    Tensor g = Tensor::row({1.0});
    AdamState s = AdamState::for_size(2, 1e-3);
    CHECK_THROWS_AS(adam_step(p, g, s), std::invalid_argument);
}

TEST_CASE("adam: lr=0 never changes parameters") {
    Rng rng(11);
    Tensor p({1, 16});
    rng.fill_normal(p);
    const auto before = p.data;
    AdamState s = AdamState::for_size(16, 0.0);
    for (int i = 0; i < 50; ++i) {
        Tensor g({1, 16});
        rng.fill_normal(g);
        adam_step(p, g, s);
    }
    CHECK(p.data == before);
}
