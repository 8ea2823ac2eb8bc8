#include <cmath>

#include "doctest.h"
#include "unlab/rng.hpp"
#include "unlab/tensor.hpp"

using namespace unlab;

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, bool requires_grad = true) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = rng.next_gaussian();
    return Tensor::from_values(rows, cols, std::move(v), requires_grad);
}

// central finite difference on every coordinate of `leaf`
double max_rel_error(Tensor& leaf, const std::function<Tensor()>& f, double h = 1e-5) {
    Tensor loss = f();
    backward(loss);
    std::vector<double> analytic = leaf.grad();
    double worst = 0.0;
    for (std::size_t i = 0; i < leaf.size(); ++i) {
        const double keep = leaf.value()[i];
        leaf.value()[i] = keep + h;
        const double up = f().item();
        leaf.value()[i] = keep - h;
        const double down = f().item();
        leaf.value()[i] = keep;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
        worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("matmul forward and gradient") {
    Rng rng(11);
    Tensor a = random_tensor(3, 4, rng);
    Tensor b = random_tensor(4, 5, rng);
    CHECK(max_rel_error(a, [&] { return sum_squares(matmul(a, b)); }) < 1e-6);
    CHECK(max_rel_error(b, [&] { return sum_squares(matmul(a, b)); }) < 1e-6);
}

TEST_CASE("elementwise ops gradients") {
    Rng rng(12);
    Tensor a = random_tensor(2, 6, rng);
    CHECK(max_rel_error(a, [&] { return sum_all(gelu(a)); }) < 1e-6);
    CHECK(max_rel_error(a, [&] { return sum_all(softplus(a)); }) < 1e-6);
    CHECK(max_rel_error(a, [&] { return sum_squares(scale(add_const(a, 0.7), -1.3)); }) < 1e-6);
    Tensor b = random_tensor(2, 6, rng);
    CHECK(max_rel_error(a, [&] { return sum_all(mul(a, b)); }) < 1e-6);
}

TEST_CASE("rmsnorm rows gradient") {
    Rng rng(13);
    Tensor a = random_tensor(3, 8, rng);
    Tensor g = random_tensor(1, 8, rng);
    CHECK(max_rel_error(a, [&] { return sum_squares(rmsnorm_rows(a, g)); }) < 1e-6);
    CHECK(max_rel_error(g, [&] { return sum_squares(rmsnorm_rows(a, g)); }) < 1e-6);
}

TEST_CASE("log_softmax rows normalize and differentiate") {
    Rng rng(14);
    Tensor a = random_tensor(4, 9, rng);
    Tensor ls = log_softmax_rows(a);
    for (std::size_t r = 0; r < 4; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < 9; ++j) total += std::exp(ls.value()[r * 9 + j]);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    std::vector<int> targets = {1, 0, 8, 3};
    std::vector<double> w = {0.25, 0.25, 0.25, 0.25};
    CHECK(max_rel_error(a, [&] {
              return picked_nll(log_softmax_rows(a), targets, w);
          }) < 1e-6);
}

TEST_CASE("soft cross entropy gradient") {
    Rng rng(15);
    Tensor a = random_tensor(2, 5, rng);
    std::vector<double> targets(10, 0.0);
    targets[1] = 0.3; targets[3] = 0.7;  // row 0
    targets[5] = 1.0;                    // row 1
    std::vector<double> w = {0.5, 0.5};
    CHECK(max_rel_error(a, [&] {
              return soft_cross_entropy(log_softmax_rows(a), targets, w);
          }) < 1e-6);
}

TEST_CASE("ema scan matches direct recurrence and differentiates") {
    Rng rng(16);
    Tensor x = random_tensor(5, 3, rng);
    Tensor c = ema_scan(x, 0.7);
    std::vector<double> state(3, 0.0);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t j = 0; j < 3; ++j) {
            state[j] = 0.7 * state[j] + 0.3 * x.value()[t * 3 + j];
            CHECK(c.value()[t * 3 + j] == doctest::Approx(state[j]).epsilon(1e-12));
        }
    CHECK(max_rel_error(x, [&] { return sum_squares(ema_scan(x, 0.7)); }) < 1e-6);
}

TEST_CASE("rows_select scatters gradients") {
    Rng rng(17);
    Tensor table = random_tensor(6, 4, rng);
    std::vector<int> ids = {2, 2, 5, 0};
    CHECK(max_rel_error(table, [&] { return sum_squares(rows_select(table, ids)); }) < 1e-6);
}

TEST_CASE("concat and weighted_sum gradients") {
    Rng rng(18);
    Tensor a = random_tensor(2, 3, rng);
    Tensor b = random_tensor(2, 2, rng);
    CHECK(max_rel_error(a, [&] { return sum_squares(concat_cols({a, b})); }) < 1e-6);
    Tensor c = random_tensor(1, 3, rng);
    CHECK(max_rel_error(c, [&] {
              Tensor s1 = sum_all(c);
              Tensor s2 = sum_squares(c);
              return weighted_sum({s1, s2, s1}, {0.5, -2.0, 0.25});
          }) < 1e-6);
    CHECK(max_rel_error(a, [&] { return sum_squares(concat_rows({a, a})); }) < 1e-6);
}

TEST_CASE("relu subgradient and hinge shape") {
    Tensor x = Tensor::from_values(1, 3, {-1.0, 0.5, 2.0}, true);
    Tensor r = relu(x);
    CHECK(r.value() == std::vector<double>{0.0, 0.5, 2.0});
    backward(sum_all(r));
    CHECK(x.grad() == std::vector<double>{0.0, 1.0, 1.0});
}

TEST_CASE("constant graph yields no gradient work") {
    Tensor a = Tensor::from_values(1, 2, {1.0, 2.0}, false);
    Tensor s = sum_all(a);
    CHECK(s.item() == 3.0);
    backward(s);  // no requires_grad anywhere; must be a no-op
}

TEST_CASE("backward accumulates through shared subexpressions") {
    Tensor a = Tensor::from_values(1, 1, {3.0}, true);
    Tensor s = weighted_sum({a, a}, {1.0, 1.0});  // 2a
    backward(s);
    CHECK(a.grad()[0] == doctest::Approx(2.0));
}
