#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "hpun/tensor.hpp"

using namespace hpun;

TEST_CASE("zeros and shape invariants") {
    auto t = zeros<double>({1, 1, 2, 2});
    CHECK(t.numel() == 4);
    for (double v : *t.data) CHECK(v == 0.0);
    CHECK_THROWS_AS(zeros<double>({1, 0, 2, 2}), ShapeError);
}

TEST_CASE("randn is deterministic given a seed") {
    auto a = randn<double>({1, 4, 3, 3}, 7);
    auto b = randn<double>({1, 4, 3, 3}, 7);
    CHECK(*a.data == *b.data);
    auto c = randn<double>({1, 4, 3, 3}, 8);
    CHECK(*a.data != *c.data);
}

TEST_CASE("randn sample mean obeys the law of large numbers") {
    Rng rng(123);
    double acc = 0.0;
    const int n = 1'000'000;
    for (int i = 0; i < n; ++i) acc += rng.normal();
    CHECK(std::abs(acc / n) < 0.01);
}

TEST_CASE("add identities and gradients") {
    auto x = randn<double>({1, 2, 3, 3}, 1);
    auto z = zeros_like(x);
    auto y = add(x, z);
    CHECK(*y.data == *x.data);
    CHECK_THROWS_AS(add(x, zeros<double>({1, 2, 3, 4})), ShapeError);

    set_requires_grad(x);
    auto loss = sum_all(add(x, x));
    backward(loss);
    for (double g : *x.grad) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("add passes finite-difference check") {
    auto x = randn<double>({1, 2, 3, 3}, 11);
    auto y = randn<double>({1, 2, 3, 3}, 12);
    set_requires_grad(x);
    double err = hpun_test::gradcheck(x, [&] { return add(x, y); });
    CHECK(err <= 1e-6);
}

TEST_CASE("backward: loss = sum(x) gives all-ones grad") {
    auto x = randn<double>({2, 3, 4, 4}, 5);
    set_requires_grad(x);
    auto l = sum_all(x);
    backward(l);
    for (double g : *x.grad) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward: loss = sum(x*x) gives 2x") {
    auto x = randn<double>({1, 2, 2, 2}, 9);
    set_requires_grad(x);
    auto l = sum_all(mul(x, x));
    backward(l);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK((*x.grad)[i] == doctest::Approx(2.0 * (*x.data)[i]));
}

TEST_CASE("backward errors") {
    auto x = randn<double>({1, 1, 2, 2}, 3);
    set_requires_grad(x);
    auto y = add(x, x);  // not scalar shaped
    CHECK_THROWS_AS(backward(y), ShapeError);
    auto detached = randn<double>({1, 1, 1, 1}, 4);
    CHECK_THROWS_AS(backward(detached), Error);
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
    auto x = randn<double>({1, 1, 2, 2}, 21);
    set_requires_grad(x);
    auto l1 = sum_all(x);
    backward(l1);
    auto l2 = sum_all(x);
    backward(l2);
    for (double g : *x.grad) CHECK(g == doctest::Approx(2.0));
    x.zero_grad();
    auto l3 = sum_all(x);
    backward(l3);
    for (double g : *x.grad) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("shared subexpressions sum gradients") {
    // loss = sum(y + y) with y = x*x must match the duplicated construction
    // loss = sum(x*x) + sum(x*x).
    auto x = randn<double>({1, 2, 2, 2}, 33);
    set_requires_grad(x);
    auto y = mul(x, x);
    auto l = sum_all(add(y, y));
    backward(l);
    std::vector<double> shared = *x.grad;

    x.zero_grad();
    auto l2 = add(sum_all(mul(x, x)), sum_all(mul(x, x)));
    backward(l2);
    for (size_t i = 0; i < shared.size(); ++i)
        CHECK(shared[i] == doctest::Approx((*x.grad)[i]));
}
