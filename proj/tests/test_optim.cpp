#include "doctest.h"

#include "pertnet/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

using namespace pertnet;

namespace {

// Convenience wrapper for single-tensor updates.
void step1(AdamState& st, Tensor& p, const Tensor& g) {
    Tensor* ps[1] = {&p};
    const Tensor* gs[1] = {&g};
    adam_step(st, std::span<Tensor* const>(ps, 1), std::span<const Tensor* const>(gs, 1));
}

}  // namespace

TEST_CASE("adam first step matches the hand-computed bias-corrected update") {
    // p=1, g=0.5, lr=0.1: m=0.05, v=0.00025, m_hat=0.5, v_hat=0.25,
    // delta = -0.1 * 0.5 / (0.5 + 1e-8).
    AdamConfig cfg;
    cfg.lr = 0.1f;
    AdamState st(cfg, {Shape{1}});
    Tensor p = Tensor::scalar(1.0f);
    Tensor g = Tensor::scalar(0.5f);
    step1(st, p, g);

    const double expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
    CHECK(p.item() == doctest::Approx(expected).epsilon(1e-6));
    CHECK(st.steps() == 1);

    // Same constant gradient: bias-corrected moments still give m_hat/sqrt(v_hat) = 1.
    step1(st, p, g);
    CHECK(p.item() == doctest::Approx(expected - 0.1).epsilon(1e-5));
    CHECK(st.steps() == 2);
}

TEST_CASE("first scalar step is approximately -lr for any positive gradient") {
    for (float g0 : {1e-3f, 0.5f, 7.0f}) {
        AdamConfig cfg;
        cfg.lr = 0.02f;
        AdamState st(cfg, {Shape{1}});
        Tensor p = Tensor::scalar(0.0f);
        Tensor g = Tensor::scalar(g0);
        step1(st, p, g);
        CHECK(p.item() == doctest::Approx(-0.02).epsilon(1e-4));
    }
}

TEST_CASE("zero gradients are a fixed point") {
    AdamState st(AdamConfig{}, {Shape{2, 3}});
    Tensor p = Tensor::from({2, 3}, {1, -2, 3, -4, 5, -6});
    const Tensor before = p;
    Tensor g = Tensor::full({2, 3}, 0.0f);
    for (int i = 0; i < 5; ++i) step1(st, p, g);
    CHECK(bitwise_equal(p, before));
    CHECK(st.steps() == 5);
}

TEST_CASE("constant gradient walks approximately -lr per step") {
    AdamConfig cfg;
    cfg.lr = 0.1f;
    AdamState st(cfg, {Shape{1}});
    Tensor p = Tensor::scalar(1.0f);
    Tensor g = Tensor::scalar(0.5f);
    for (int i = 0; i < 10; ++i) step1(st, p, g);
    CHECK(p.item() == doctest::Approx(0.0).epsilon(0.002));
}

TEST_CASE("adam converges on a smooth quadratic") {
    AdamConfig cfg;
    cfg.lr = 0.05f;
    AdamState st(cfg, {Shape{1}});
    Tensor p = Tensor::scalar(-1.0f);
    for (int i = 0; i < 2000; ++i) {
        Tensor g = Tensor::scalar(2.0f * (p.item() - 3.0f));
        step1(st, p, g);
    }
    CHECK(std::abs(p.item() - 3.0f) < 1e-2);
}

TEST_CASE("two runs with identical inputs produce bit-identical trajectories") {
    auto run = [] {
        Rng rng(11);
        AdamState st(AdamConfig{}, {Shape{4}, Shape{2, 2}});
        Tensor a = random_uniform({4}, rng, -1, 1);
        Tensor b = random_uniform({2, 2}, rng, -1, 1);
        for (int i = 0; i < 50; ++i) {
            Tensor ga = random_uniform({4}, rng, -1, 1);
            Tensor gb = random_uniform({2, 2}, rng, -1, 1);
            Tensor* ps[2] = {&a, &b};
            const Tensor* gs[2] = {&ga, &gb};
            adam_step(st, std::span<Tensor* const>(ps, 2), std::span<const Tensor* const>(gs, 2));
        }
        return std::pair{a, b};
    };
    auto [a1, b1] = run();
    auto [a2, b2] = run();
    CHECK(bitwise_equal(a1, a2));
    CHECK(bitwise_equal(b1, b2));
}

TEST_CASE("independent parameters keep independent moments") {
    AdamState st(AdamConfig{}, {Shape{1}, Shape{1}});
    Tensor a = Tensor::scalar(1.0f);
    Tensor b = Tensor::scalar(1.0f);
    Tensor ga = Tensor::scalar(1.0f);
    Tensor gb = Tensor::scalar(0.0f);
    Tensor* ps[2] = {&a, &b};
    const Tensor* gs[2] = {&ga, &gb};
    adam_step(st, std::span<Tensor* const>(ps, 2), std::span<const Tensor* const>(gs, 2));
    CHECK(a.item() < 1.0f);         // moved
    CHECK(b.item() == 1.0f);        // untouched by a's gradient
}

TEST_CASE("non-finite gradients abort without touching parameters or state") {
    AdamState st(AdamConfig{}, {Shape{2}});
    Tensor p = Tensor::from({2}, {1, 2});
    const Tensor before = p;
    step1(st, p, Tensor::from({2}, {0.1f, 0.2f}));
    CHECK(st.steps() == 1);
    const Tensor after_one = p;

    Tensor bad = Tensor::from({2}, {0.1f, 0.2f});
    bad[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(step1(st, p, bad), std::domain_error);
    CHECK(st.steps() == 1);
    CHECK(bitwise_equal(p, after_one));

    bad[1] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(step1(st, p, bad), std::domain_error);
}

TEST_CASE("contract violations are rejected") {
    SUBCASE("bad config") {
        CHECK_THROWS_AS(AdamState(AdamConfig{.lr = 0.0f}, {Shape{1}}), std::invalid_argument);
        CHECK_THROWS_AS(AdamState(AdamConfig{.lr = -1.0f}, {Shape{1}}), std::invalid_argument);
        CHECK_THROWS_AS(AdamState(AdamConfig{.beta1 = 1.0f}, {Shape{1}}), std::invalid_argument);
        CHECK_THROWS_AS(AdamState(AdamConfig{.beta2 = 1.5f}, {Shape{1}}), std::invalid_argument);
        CHECK_THROWS_AS(AdamState(AdamConfig{.eps = 0.0f}, {Shape{1}}), std::invalid_argument);
        CHECK_THROWS_AS(AdamState(AdamConfig{}, {}), std::invalid_argument);
    }
    SUBCASE("shape mismatch") {
        AdamState st(AdamConfig{}, {Shape{2}});
        Tensor p = Tensor::from({3}, {1, 2, 3});
        Tensor g = Tensor::from({3}, {1, 2, 3});
        CHECK_THROWS_AS(step1(st, p, g), std::invalid_argument);
    }
    SUBCASE("wrong parameter count") {
        AdamState st(AdamConfig{}, {Shape{1}, Shape{1}});
        Tensor p = Tensor::scalar(1.0f);
        Tensor g = Tensor::scalar(1.0f);
        CHECK_THROWS_AS(step1(st, p, g), std::invalid_argument);
    }
}
