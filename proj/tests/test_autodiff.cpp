#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "treegpt/gradcheck.hpp"
#include "treegpt/ops.hpp"
#include "treegpt/tensor.hpp"

using namespace treegpt;
using Tensor = TensorT<double>;

namespace {

TensorPtr<double> randn(std::vector<int> shape, std::mt19937_64& rng, bool requires_grad,
                        double scale = 1.0) {
    auto t = Tensor::zeros(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(0.0, scale);
    for (auto& x : t->data) x = dist(rng);
    return t;
}

}  // namespace

TEST_CASE("tensor invariants") {
    auto t = Tensor::zeros({2, 3});
    CHECK(t->numel() == 6);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
    t->ensure_grad();
    CHECK(t->grad.size() == t->data.size());
}

TEST_CASE("matmul forward examples") {
    Graph<double> g(false);
    auto identity = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    auto out = ops::matmul(g, identity, b);
    CHECK(out->data == std::vector<double>{3, 4, 5, 6});

    auto row = Tensor::from_data({1, 2}, {1, 2});
    auto col = Tensor::from_data({2, 1}, {3, 4});
    auto dot = ops::matmul(g, row, col);
    CHECK(dot->data[0] == doctest::Approx(11.0));

    auto bad = Tensor::zeros({3, 3});
    CHECK_THROWS_WITH_AS(ops::matmul(g, row, bad),
                         doctest::Contains("(1x2)"), DimensionError);
}

TEST_CASE("matmul gradients match central finite differences") {
    std::mt19937_64 rng(101);
    auto a = randn({3, 4}, rng, true);
    auto b = randn({4, 2}, rng, true);
    auto loss_fn = [&](Graph<double>& g) { return ops::sum(g, ops::matmul(g, a, b)); };
    auto report = grad_check(loss_fn, {{"a", a}, {"b", b}}, 1e-5, 1e-6);
    CHECK(report.passed);
    CHECK(report.worst()->max_rel_err < 1e-6);
}

TEST_CASE("elementwise forward values") {
    Graph<double> g(false);
    auto x = Tensor::from_data({3}, {0.0, -3.0, 3.0});
    auto s = ops::sigmoid(g, x);
    CHECK(s->data[0] == doctest::Approx(0.5));
    auto r = ops::relu(g, x);
    CHECK(r->data[1] == 0.0);
    CHECK(r->data[2] == 3.0);
    auto t = ops::tanh(g, Tensor::from_data({1}, {0.0}));
    CHECK(t->data[0] == 0.0);
}

TEST_CASE("sigmoid backward at zero is a quarter") {
    Graph<double> g(true);
    auto x = Tensor::from_data({1}, {0.0}, true);
    auto y = ops::sum(g, ops::sigmoid(g, x));
    g.backward(y);
    CHECK(x->grad[0] == doctest::Approx(0.25));
}

TEST_CASE("elementwise shape mismatch raises dimension error") {
    Graph<double> g(false);
    auto a = Tensor::zeros({2, 2});
    auto b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(ops::add(g, a, b), DimensionError);
    CHECK_THROWS_AS(ops::mul(g, a, b), DimensionError);
}

TEST_CASE("bias broadcast add and its gradient") {
    Graph<double> g(true);
    auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    auto b = Tensor::from_data({3}, {10, 20, 30}, true);
    auto y = ops::add(g, x, b);
    CHECK(y->data == std::vector<double>{11, 22, 33, 14, 25, 36});
    auto loss = ops::sum(g, y);
    g.backward(loss);
    CHECK(b->grad == std::vector<double>{2, 2, 2});
    CHECK(x->grad == std::vector<double>(6, 1.0));
}

TEST_CASE("concat behavior and gradients") {
    Graph<double> g(true);
    auto a = Tensor::from_data({1, 4}, {1, 2, 3, 4}, true);
    auto single = ops::concat(g, {a}, 1);
    CHECK(single->shape() == std::vector<int>{1, 4});
    CHECK(single->data == a->data);

    auto b = Tensor::from_data({1, 4}, {5, 6, 7, 8}, true);
    auto c = Tensor::from_data({1, 4}, {9, 10, 11, 12});
    auto wide = ops::concat(g, {a, b, c}, 1);
    CHECK(wide->shape() == std::vector<int>{1, 12});

    auto loss = ops::sum(g, wide);
    g.backward(loss);
    CHECK(a->grad == std::vector<double>(4, 1.0));
    CHECK(b->grad == std::vector<double>(4, 1.0));

    auto ragged = Tensor::zeros({2, 4});
    CHECK_THROWS_AS(ops::concat(g, {a, ragged}, 1), DimensionError);
}

TEST_CASE("cross entropy values") {
    Graph<double> g(false);
    SUBCASE("uniform logits give log V") {
        auto logits = Tensor::zeros({2, 15});
        auto loss = ops::cross_entropy(g, logits, {3, 7}, {1, 1});
        CHECK(loss->data[0] == doctest::Approx(std::log(15.0)).epsilon(1e-12));
    }
    SUBCASE("saturated logit gives near-zero loss") {
        auto logits = Tensor::zeros({1, 15});
        logits->data[4] = 1000.0;
        auto loss = ops::cross_entropy(g, logits, {4}, {1});
        CHECK(loss->data[0] == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("empty mask is an error") {
        auto logits = Tensor::zeros({2, 15});
        CHECK_THROWS_AS(ops::cross_entropy(g, logits, {3, 7}, {0, 0}), ValueError);
    }
    SUBCASE("target out of range is an error") {
        auto logits = Tensor::zeros({1, 15});
        CHECK_THROWS_AS(ops::cross_entropy(g, logits, {15}, {1}), ValueError);
    }
}

TEST_CASE("cross entropy gradient matches finite differences") {
    std::mt19937_64 rng(202);
    auto logits = randn({4, 15}, rng, true);
    const std::vector<int> targets = {2, 14, 0, 9};
    const std::vector<uint8_t> mask = {1, 0, 1, 1};
    auto loss_fn = [&](Graph<double>& g) {
        return ops::cross_entropy(g, logits, targets, mask);
    };
    auto report = grad_check(loss_fn, {{"logits", logits}}, 1e-5, 1e-6);
    CHECK(report.passed);
}

TEST_CASE("cross entropy ignores non-masked logits") {
    std::mt19937_64 rng(303);
    auto logits = randn({3, 8}, rng, false);
    Graph<double> g(false);
    auto base = ops::cross_entropy(g, logits, {1, 2, 3}, {1, 0, 1});
    logits->data[1 * 8 + 5] += 100.0;  // masked-out row
    auto bumped = ops::cross_entropy(g, logits, {1, 2, 3}, {1, 0, 1});
    CHECK(base->data[0] == bumped->data[0]);
}

TEST_CASE("grad_check on a quadratic") {
    auto theta = Tensor::from_data({3}, {1, 2, 3}, true);
    auto loss_fn = [&](Graph<double>& g) { return ops::sum(g, ops::mul(g, theta, theta)); };
    Graph<double> g(true);
    auto loss = loss_fn(g);
    g.backward(loss);
    CHECK(theta->grad == std::vector<double>{2, 4, 6});

    theta->zero_grad();
    auto report = grad_check(loss_fn, {{"theta", theta}}, 1e-5, 1e-8);
    CHECK(report.passed);
}

TEST_CASE("gradients accumulate across multiple uses") {
    Graph<double> g(true);
    auto x = Tensor::from_data({2}, {3.0, 4.0}, true);
    auto y = ops::add(g, x, x);  // dy/dx = 2
    auto loss = ops::sum(g, y);
    g.backward(loss);
    CHECK(x->grad == std::vector<double>{2.0, 2.0});
}

TEST_CASE("parameters with no path to the loss keep zero grads") {
    Graph<double> g(true);
    auto used = Tensor::from_data({2}, {1.0, 2.0}, true);
    auto unused = Tensor::from_data({2}, {5.0, 6.0}, true);
    auto loss = ops::sum(g, ops::mul(g, used, used));
    g.backward(loss);
    unused->ensure_grad();
    CHECK(unused->grad == std::vector<double>{0.0, 0.0});
}

TEST_CASE("non-finite forward output fails fast naming the op") {
    Graph<double> g(false);
    auto big = Tensor::from_data({1}, {1e308});
    CHECK_THROWS_WITH_AS(ops::mul(g, big, big), doctest::Contains("mul"), NumericError);
}

TEST_CASE("gather and scatter rows round gradients correctly") {
    Graph<double> g(true);
    auto table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    auto rows = ops::gather_rows(g, table, {2, 0, 2});
    CHECK(rows->data == std::vector<double>{5, 6, 1, 2, 5, 6});
    auto loss = ops::sum(g, rows);
    g.backward(loss);
    CHECK(table->grad == std::vector<double>{1, 1, 0, 0, 2, 2});

    CHECK_THROWS_AS(ops::gather_rows(g, table, {3}), ValueError);

    Graph<double> g2(true);
    auto values = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
    auto scattered = ops::scatter_rows(g2, 3, {2, 2}, values);
    CHECK(scattered->data == std::vector<double>{0, 0, 0, 0, 4, 6});
    auto loss2 = ops::sum(g2, scattered);
    g2.backward(loss2);
    CHECK(values->grad == std::vector<double>(4, 1.0));
}

TEST_CASE("a corrupted backward rule is flagged by grad_check") {
    auto x = Tensor::from_data({2}, {1.5, -0.5}, true);
    auto good = Tensor::from_data({2}, {2.0, 3.0}, true);
    // y = x * good elementwise, but x's backward rule drops the factor.
    auto loss_fn = [&](Graph<double>& g) {
        auto y = Tensor::zeros({2}, g.recording());
        for (int i = 0; i < 2; ++i) y->data[i] = x->data[i] * good->data[i];
        y->requires_grad = g.recording();
        g.record([&, y] {
            x->ensure_grad();
            good->ensure_grad();
            for (int i = 0; i < 2; ++i) {
                x->grad[i] += y->grad[i];  // wrong: should be * good->data[i]
                good->grad[i] += y->grad[i] * x->data[i];
            }
        });
        return ops::sum(g, y);
    };
    auto report = grad_check(loss_fn, {{"x", x}, {"good", good}}, 1e-5, 1e-6);
    CHECK_FALSE(report.passed);
    CHECK(report.worst()->name == "x");
    for (const auto& e : report.entries) {
        if (e.name == "good") CHECK(e.passed);
        if (e.name == "x") CHECK_FALSE(e.passed);
    }
}
