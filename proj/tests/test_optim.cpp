#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "reftok/optim.hpp"

using namespace reftok;

TEST_CASE("one AdamW step matches the hand-computed update") {
    ParamStore ps;
    Param& p = ps.create("x", 1, 1);
    p.value(0, 0) = 2.0f;
    p.grad(0, 0) = 0.5f;

    AdamWConfig cfg;
    cfg.lr = 0.1f;
    cfg.weight_decay = 0.01f;
    AdamW opt(cfg);
    opt.step(ps, cfg.lr);

    // m = 0.1*g, v = 0.001*g^2; bias-corrected both recover g and g^2.
    const float mhat = 0.5f;
    const float vhat = 0.25f;
    const float expect =
        2.0f - 0.1f * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * 2.0f);
    CHECK(p.value(0, 0) == doctest::Approx(expect).epsilon(1e-6));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("weight decay acts even with zero gradient and is decoupled") {
    ParamStore ps;
    Param& p = ps.create("x", 1, 1);
    p.value(0, 0) = 1.0f;

    AdamWConfig cfg;
    cfg.lr = 0.5f;
    cfg.weight_decay = 0.1f;
    AdamW opt(cfg);
    opt.step(ps, cfg.lr);
    CHECK(p.value(0, 0) == doctest::Approx(1.0f - 0.5f * 0.1f * 1.0f).epsilon(1e-6));
}

TEST_CASE("non-trainable parameters never move") {
    ParamStore ps;
    Param& p = ps.create("frozen", 2, 2);
    p.value.setConstant(3.f);
    p.grad.setConstant(10.f);
    p.trainable = false;
    AdamW opt;
    opt.step(ps, 1.f);
    CHECK(p.value.minCoeff() == 3.f);
    CHECK(p.value.maxCoeff() == 3.f);
}

TEST_CASE("AdamW drives a quadratic bowl to its minimum") {
    ParamStore ps;
    Param& p = ps.create("x", 1, 1);
    p.value(0, 0) = -4.0f;
    AdamWConfig cfg;
    cfg.lr = 0.05f;
    cfg.weight_decay = 0.f;
    AdamW opt(cfg);
    for (int i = 0; i < 400; ++i) {
        ps.zero_grads();
        p.grad(0, 0) = 2.f * (p.value(0, 0) - 3.f);  // d/dx (x-3)^2
        opt.step(ps, cfg.lr);
    }
    CHECK(p.value(0, 0) == doctest::Approx(3.0f).epsilon(1e-2));
}

TEST_CASE("resumed optimizers continue the bias-correction count") {
    ParamStore a, b;
    a.create("x", 1, 1).value(0, 0) = 1.f;
    b.create("x", 1, 1).value(0, 0) = 1.f;

    AdamW fresh, resumed;
    for (int i = 0; i < 3; ++i) {
        a.at("x").grad(0, 0) = 0.3f;
        fresh.step(a, 0.01f);
    }
    // Clone state into the resumed run.
    b.at("x").value = a.at("x").value;
    b.at("x").adam_m = a.at("x").adam_m;
    b.at("x").adam_v = a.at("x").adam_v;
    resumed.set_step_count(fresh.step_count());

    a.at("x").grad(0, 0) = 0.3f;
    b.at("x").grad(0, 0) = 0.3f;
    fresh.step(a, 0.01f);
    resumed.step(b, 0.01f);
    CHECK(a.at("x").value(0, 0) == b.at("x").value(0, 0));
}

TEST_CASE("learning-rate schedule: linear warmup then cosine to zero") {
    const float base = 1e-3f;
    const long total = 1000, warm = 100;

    CHECK(lr_at(0, total, warm, base) == doctest::Approx(base / 100));
    CHECK(lr_at(49, total, warm, base) == doctest::Approx(base * 0.5f));
    CHECK(lr_at(99, total, warm, base) == doctest::Approx(base));
    CHECK(lr_at(100, total, warm, base) == doctest::Approx(base));
    CHECK(lr_at(550, total, warm, base) == doctest::Approx(base * 0.5f).epsilon(1e-3));
    CHECK(lr_at(total - 1, total, warm, base) < 1e-4f * base + 1e-12f);
    CHECK(lr_at(total, total, warm, base) == 0.f);
    CHECK(lr_at(total + 50, total, warm, base) == 0.f);

    // Monotone decay after warmup.
    float prev = lr_at(warm, total, warm, base);
    for (long s = warm + 1; s < total; s += 7) {
        float cur = lr_at(s, total, warm, base);
        CHECK(cur <= prev);
        prev = cur;
    }
}
