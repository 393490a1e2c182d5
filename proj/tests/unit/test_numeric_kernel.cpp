#include <cmath>

#include "doctest.h"

#include "bet/errors.hpp"
#include "bet/init.hpp"
#include "bet/tensor.hpp"
#include "../support/oracles.hpp"

using namespace bet;

namespace {

// Weighted sum with fixed random coefficients turns any tensor into a scalar
// whose gradient exercises every output entry.
Tensor probe(const Tensor& out, const Tensor& coeffs) { return sum(mul(out, coeffs)); }

}  // namespace

TEST_CASE("matmul examples") {
    auto m = Tensor::matrix({{1, 2}, {3, 4}});
    auto id = matmul(Tensor::identity(2), m);
    CHECK(std::vector<double>(id.data().begin(), id.data().end()) == std::vector<double>{1, 2, 3, 4});

    auto r = matmul(m, Tensor::matrix({{5}, {6}}));
    CHECK(r.shape() == Shape{2, 1});
    CHECK(r.at(0, 0) == 17);
    CHECK(r.at(1, 0) == 39);

    auto z = matmul(Tensor::zeros({3, 2}), Tensor::matrix({{1, -2, 3}, {4, 5, -6}}));
    for (double v : z.data()) CHECK(v == 0.0);

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("masked_row_softmax examples") {
    auto u = masked_row_softmax(Tensor::zeros({1, 3}), BoolMask(1, 3, true));
    for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

    BoolMask first_only(1, 3, false);
    first_only.set(0, 0, true);
    auto one = masked_row_softmax(Tensor::matrix({{5, 100, -3}}), first_only);
    CHECK(one.at(0, 0) == 1.0);
    CHECK(one.at(0, 1) == 0.0);
    CHECK(one.at(0, 2) == 0.0);

    auto two = masked_row_softmax(Tensor::matrix({{1, 2}}), BoolMask(1, 2, true));
    CHECK(std::fabs(two.at(0, 0) - 0.26894) < 1e-5);
    CHECK(std::fabs(two.at(0, 1) - 0.73106) < 1e-5);

    CHECK_THROWS_AS(masked_row_softmax(Tensor::zeros({1, 2}), BoolMask(1, 2, false)), ContractViolation);
}

TEST_CASE("masked_row_softmax keeps data finite under huge logits") {
    auto big = masked_row_softmax(Tensor::matrix({{1e300, -1e300}, {-1e300, 1e300}}), BoolMask::causal(2));
    for (double v : big.data()) CHECK(std::isfinite(v));
    CHECK(big.at(1, 1) == 1.0);
}

TEST_CASE("layer_norm examples") {
    auto gain = Tensor::filled({4}, 1.0), bias = Tensor::zeros({4});
    auto c = layer_norm(Tensor::filled({2, 4}, 3.25), gain, bias);
    for (double v : c.data()) CHECK(v == 0.0);

    auto pm = layer_norm(Tensor::matrix({{1, -1}}), Tensor::filled({2}, 1.0), Tensor::zeros({2}), 1e-15);
    CHECK(pm.at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pm.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));

    Rng rng(4);
    auto x = uniform({5, 4}, -2, 2, rng);
    CHECK(layer_norm(x, gain, bias).shape() == x.shape());
}

TEST_CASE("backward examples") {
    auto x = Tensor::scalar(3.0, true);
    mul(x, x).backward();
    CHECK(x.grad()[0] == 6.0);

    SUBCASE("softmax cross-entropy gradient is p - y") {
        auto logits = Tensor::matrix({{0.3, -1.2, 2.0, 0.5}}, true);
        const int target = 2;
        cross_entropy(logits, std::span<const int>(&target, 1)).backward();
        auto p = oracle::causal_softmax(oracle::to_matrix(logits), [](auto, auto) { return true; });
        for (std::size_t j = 0; j < 4; ++j) {
            const double expected = p[0][j] - (j == 2 ? 1.0 : 0.0);
            CHECK(logits.grad()[j] == doctest::Approx(expected).epsilon(1e-12));
        }
    }

    SUBCASE("non-scalar backward is rejected") {
        auto m = Tensor::zeros({2, 2}, true);
        CHECK_THROWS_AS(scale(m, 2.0).backward(), ContractViolation);
    }
}

TEST_CASE("matmul gradients match finite differences on random 3x3 inputs") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        auto a = uniform({3, 3}, -1, 1, rng, true);
        auto b = uniform({3, 3}, -1, 1, rng, true);
        auto c = uniform({3, 3}, -1, 1, rng);
        auto res = oracle::check_gradients([&] { return probe(matmul(a, b), c); }, {a, b});
        CHECK_MESSAGE(res.worst < oracle::kFdTolerance, res.where);
    }
}

TEST_CASE("every differentiable op passes a finite-difference check") {
    Rng rng(12);
    auto x = uniform({3, 4}, -1, 1, rng, true);
    auto y = uniform({3, 4}, -1, 1, rng, true);
    auto c34 = uniform({3, 4}, -1, 1, rng);
    auto c38 = uniform({3, 8}, -1, 1, rng);
    auto bias = uniform({4}, -1, 1, rng, true);
    auto gain = uniform({4}, 0.5, 1.5, rng, true);
    auto sq = uniform({4, 4}, -1, 1, rng, true);
    auto c44 = uniform({4, 4}, -1, 1, rng);
    auto gate = uniform({4}, 0.1, 0.9, rng, true);
    const BoolMask causal = BoolMask::causal(4);

    struct Case {
        const char* name;
        std::function<Tensor()> loss;
        std::vector<Tensor> params;
    };
    const std::vector<int> ids{2, 0, 2};
    const std::vector<int> targets{1, 3, 0};
    const std::vector<std::size_t> picks{0, 1, 1, 3};
    const std::vector<bool> valid{true, true, false, true};
    std::vector<Case> cases = {
        {"transpose", [&] { return probe(transpose(x), transpose(c34)); }, {x}},
        {"reshape", [&] { return probe(reshape(x, {4, 3}), reshape(c34, {4, 3})); }, {x}},
        {"add", [&] { return probe(add(x, y), c34); }, {x, y}},
        {"add_bias", [&] { return probe(add_bias(x, bias), c34); }, {x, bias}},
        {"mul", [&] { return probe(mul(x, y), c34); }, {x, y}},
        {"scale", [&] { return probe(scale(x, -1.7), c34); }, {x}},
        {"mean_of", [&] { return probe(mean_of({x, y, x}), c34); }, {x, y}},
        {"sigmoid", [&] { return probe(sigmoid(x), c34); }, {x}},
        {"gelu", [&] { return probe(gelu(x), c34); }, {x}},
        {"masked_row_softmax", [&] { return probe(masked_row_softmax(sq, causal), c44); }, {sq}},
        {"layer_norm", [&] { return probe(layer_norm(x, gain, bias), c34); }, {x, gain, bias}},
        {"concat_cols", [&] { return probe(concat_cols({x, y}), c38); }, {x, y}},
        {"embedding", [&] { return probe(embedding(y, ids), c34); }, {y}},
        {"cross_entropy", [&] { return cross_entropy(x, targets); }, {x}},
        {"diag_scale", [&] { return probe(diag_scale(sq, 0.1), c44); }, {sq}},
        {"column_gate", [&] { return probe(column_gate(sq, causal, gate), c44); }, {sq, gate}},
        {"selected_log_loss",
         [&] { return selected_log_loss(masked_row_softmax(sq, causal), picks, valid, 1e-12); },
         {sq}},
    };
    for (auto& cs : cases) {
        CAPTURE(cs.name);
        auto res = oracle::check_gradients(cs.loss, cs.params);
        CHECK_MESSAGE(res.worst < oracle::kFdTolerance, cs.name, " ", res.where, " ", res.worst);
    }
}

TEST_CASE("NoGradGuard disables graph recording") {
    auto a = Tensor::filled({2, 2}, 1.0, true);
    {
        NoGradGuard guard;
        auto b = scale(a, 2.0);
        CHECK_FALSE(b.requires_grad());
    }
    CHECK(scale(a, 2.0).requires_grad());
}

TEST_CASE("selected_log_loss with no valid rows is a constant zero") {
    auto a = Tensor::identity(2, true);
    const std::vector<std::size_t> t{0, 0};
    auto l = selected_log_loss(a, t, {false, false}, 1e-12);
    CHECK(l.item() == 0.0);
}
