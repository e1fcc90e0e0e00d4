#include <doctest.h>

#include <cmath>

#include "scriptgauge/grad_check.hpp"
#include "scriptgauge/rng.hpp"
#include "scriptgauge/tensor.hpp"

using namespace scriptgauge;

TEST_CASE("softmax is symmetric, shift-invariant, and normalized") {
    auto even = softmax(std::vector<double>{0.0, 0.0});
    CHECK(even[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(even[1] == doctest::Approx(0.5).epsilon(1e-15));

    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x;
        const int n = 2 + static_cast<int>(rng.below(8));
        for (int i = 0; i < n; ++i) x.push_back(rng.uniform(-50.0, 50.0));
        auto p = softmax(x);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

        const double c = rng.uniform(-100.0, 100.0);
        auto shifted = x;
        for (double& v : shifted) v += c;
        auto p2 = softmax(shifted);
        for (int i = 0; i < n; ++i)
            CHECK(p2[static_cast<std::size_t>(i)] ==
                  doctest::Approx(p[static_cast<std::size_t>(i)]).epsilon(1e-9));
    }
}

TEST_CASE("softmax matches an extended-precision evaluation") {
    const std::vector<double> x = {1.0, 2.0, 3.0};
    auto p = softmax(x);
    long double sum = 0.0L;
    for (double v : x) sum += expl(static_cast<long double>(v));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const long double want = expl(static_cast<long double>(x[i])) / sum;
        CHECK(p[i] == doctest::Approx(static_cast<double>(want)).epsilon(1e-14));
    }
}

TEST_CASE("softmax in 32-bit normalizes within 1e-5") {
    Rng rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<float> x;
        for (int i = 0; i < 6; ++i) x.push_back(static_cast<float>(rng.uniform(-50.0, 50.0)));
        auto p = softmax(x);
        float sum = 0.0f;
        for (float v : p) sum += v;
        CHECK(std::fabs(sum - 1.0f) < 1e-5f);
    }
}

TEST_CASE("cross_entropy handles the floor and the uniform case") {
    CHECK(cross_entropy(std::vector<double>{1, 0, 0, 0, 0}, 0) ==
          doctest::Approx(0.0).epsilon(1e-12));
    const std::vector<double> uniform(5, 0.2);
    for (int gold = 0; gold < 5; ++gold)
        CHECK(cross_entropy(uniform, gold) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    CHECK(cross_entropy(std::vector<double>{0.7, 0.3}, 1) ==
          doctest::Approx(-std::log(0.3)).epsilon(1e-12));
    // the floor keeps -log(0) finite
    CHECK(std::isfinite(cross_entropy(std::vector<double>{1, 0}, 1)));
    CHECK_THROWS_AS(cross_entropy(std::vector<double>{1, 0}, 7), std::invalid_argument);
}

TEST_CASE("matvec against identity is exact") {
    Tensor2<double> eye(4, 4);
    for (int i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    const double x[4] = {1.25, -2.5, 3.0, 0.0625};
    double y[4] = {0, 0, 0, 0};
    matvec_add(eye, x, y);
    for (int i = 0; i < 4; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("grad_check validates a closed-form linear-map gradient") {
    // loss = 0.5 * ||W x||^2, dL/dW = (W x) x^T
    Rng rng(11);
    Parameter<double> w("w", 3, 4);
    w.value.init_uniform(rng, 4);
    std::vector<double> x(4);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);

    auto loss = [&]() {
        double y[3] = {0, 0, 0};
        matvec_add(w.value, x.data(), y);
        return 0.5 * (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]);
    };
    double y[3] = {0, 0, 0};
    matvec_add(w.value, x.data(), y);
    outer_add(w.grad, y, x.data());

    auto report = grad_check<double>(loss, {&w}, 1e-5, 1e-9);
    CHECK(report.passed);
    CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("grad_check of a constant function reports near-zero error") {
    Parameter<double> w("w", 2, 2);
    w.value.fill(0.5);
    auto loss = []() { return 3.0; };
    auto report = grad_check<double>(loss, {&w}, 1e-5, 1e-5);
    CHECK(report.passed); // relative-error denominator floor avoids 0/0
}

TEST_CASE("Adam step with zero gradient leaves parameters unchanged") {
    Parameter<double> w("w", 2, 3);
    Rng rng(3);
    w.value.init_uniform(rng, 3);
    const auto before = w.value.data;
    AdamState<double> adam;
    adam.init(w.value);
    adam.step(w, 0.01);
    CHECK(w.value.data == before);
}

TEST_CASE("Adam descends a quadratic") {
    Parameter<double> w("w", 1, 1);
    w.value.data[0] = 5.0;
    AdamState<double> adam;
    adam.init(w.value);
    for (int i = 0; i < 2000; ++i) {
        w.grad.data[0] = 2.0 * w.value.data[0];
        adam.step(w, 0.01);
    }
    CHECK(std::fabs(w.value.data[0]) < 1e-2);
}

TEST_CASE("global norm clipping caps the gradient norm") {
    Parameter<double> a("a", 1, 2), b("b", 1, 2);
    a.grad.data = {3.0, 4.0};
    b.grad.data = {0.0, 12.0};
    std::vector<Parameter<double>*> params = {&a, &b};
    const double before = clip_global_norm(params, 5.0);
    CHECK(before == doctest::Approx(13.0).epsilon(1e-12));
    double sq = 0.0;
    for (auto* p : params)
        for (double g : p->grad.data) sq += g * g;
    CHECK(std::sqrt(sq) == doctest::Approx(5.0).epsilon(1e-12));

    // below the cap: untouched
    Parameter<double> c("c", 1, 1);
    c.grad.data = {1.0};
    std::vector<Parameter<double>*> small = {&c};
    clip_global_norm(small, 5.0);
    CHECK(c.grad.data[0] == 1.0);
}

TEST_CASE("rng streams are deterministic and split-independent") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng parent(7);
    Rng c1 = parent.split(1), c2 = parent.split(2);
    CHECK(c1.next_u64() != c2.next_u64());
    // splitting does not disturb the parent
    Rng parent2(7);
    parent2.split(1);
    Rng fresh(7);
    CHECK(parent2.next_u64() == fresh.next_u64());
}
