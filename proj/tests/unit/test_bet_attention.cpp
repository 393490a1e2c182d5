#include <cmath>

#include "doctest.h"

#include "bet/bet_attention.hpp"
#include "bet/errors.hpp"
#include "../support/oracles.hpp"

using namespace bet;
using oracle::Matrix;

TEST_CASE("DiagPolicy labels round-trip") {
    for (const auto& p : {DiagPolicy::keep(), DiagPolicy::mask_out(), DiagPolicy::scaled(0.1), DiagPolicy::scaled(2.0)})
        CHECK(DiagPolicy::parse(p.label()) == p);
    CHECK(DiagPolicy::scaled(0.1).label() == "scale:0.1");
    CHECK_THROWS_AS(DiagPolicy::scaled(0.0), ConfigError);
    CHECK_THROWS_AS(DiagPolicy::parse("scale:-1"), ConfigError);
    CHECK_THROWS_AS(DiagPolicy::parse("sideways"), ConfigError);
}

TEST_CASE("apply_diag_policy") {
    Rng rng(1);
    auto d = uniform({3, 3}, -1, 1, rng);
    const auto mask = BoolMask::causal(3);

    auto [kd, km] = apply_diag_policy(d, mask, DiagPolicy::keep());
    CHECK(oracle::max_abs_diff(oracle::to_matrix(d), kd) == 0.0);
    CHECK(km == mask);

    auto diag = Tensor::matrix({{2, 0, 0}, {0, 4, 0}, {0, 0, 6}});
    auto [sd, sm] = apply_diag_policy(diag, mask, DiagPolicy::scaled(0.1));
    CHECK(sd.at(0, 0) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(sd.at(1, 1) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(sd.at(2, 2) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(sd.at(1, 0) == 0.0);
    CHECK(sm == mask);

    auto [md, mm] = apply_diag_policy(d, mask, DiagPolicy::mask_out());
    CHECK(mm.visible(0, 0));
    CHECK_FALSE(mm.visible(1, 1));
    CHECK_FALSE(mm.visible(2, 2));
    CHECK(oracle::max_abs_diff(oracle::to_matrix(d), md) == 0.0);
    auto a = masked_row_softmax(md, mm);
    CHECK(a.at(0, 0) == 1.0);
    CHECK(a.at(1, 1) == 0.0);
    CHECK(a.at(2, 2) == 0.0);

    auto [ed, em] = apply_diag_policy(Tensor::zeros({0, 0}), BoolMask(0, 0, true), DiagPolicy::mask_out());
    CHECK(ed.size() == 0);
    CHECK(em.rows() == 0);
}

TEST_CASE("high_level_gate") {
    Rng rng(2);
    auto h = uniform({4, 2}, -1, 1, rng), k = uniform({4, 2}, -1, 1, rng);
    auto half = high_level_gate(h, k, Tensor::zeros({4}));
    for (double v : half.data()) CHECK(v == 0.5);

    auto r = high_level_gate(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1}}), Tensor::vector({1, 1, 1, 1}));
    CHECK(std::fabs(r[0] - 0.88080) < 1e-5);

    auto w = uniform({4}, -2, 2, rng);
    auto pos = high_level_gate(h, k, w), neg = high_level_gate(h, k, scale(w, -1.0));
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(pos[j] > 0.0);
        CHECK(pos[j] < 1.0);
        CHECK(neg[j] == doctest::Approx(1.0 - pos[j]).epsilon(1e-14));
    }
    CHECK_THROWS_AS(high_level_gate(h, k, Tensor::zeros({3})), DimensionError);
}

TEST_CASE("bird_eye_rescale") {
    Rng rng(3);
    const auto mask = BoolMask::causal(3);
    auto d = uniform({3, 3}, -1, 1, rng);
    auto same = bird_eye_rescale(d, mask, Tensor::filled({3}, 1.0));
    CHECK(oracle::max_abs_diff(oracle::to_matrix(d), same) == 0.0);

    auto zeroed = bird_eye_rescale(d, mask, Tensor::vector({1, 0, 1}));
    CHECK(zeroed.at(1, 1) == 0.0);
    CHECK(zeroed.at(2, 1) == 0.0);
    CHECK(zeroed.at(0, 1) == d.at(0, 1));  // masked entry untouched

    auto hand = bird_eye_rescale(Tensor::matrix({{2, 99}, {6, 8}}), BoolMask::causal(2), Tensor::vector({0.5, 0.25}));
    CHECK(hand.at(0, 0) == 1.0);
    CHECK(hand.at(1, 0) == 3.0);
    CHECK(hand.at(1, 1) == 2.0);
    CHECK(hand.at(0, 1) == 99.0);
}

TEST_CASE("bet_attention") {
    Rng rng(4);
    auto bp = BlockParams::init(4, 1, 8, rng);

    SUBCASE("neutral gate with Keep is standard attention") {
        auto x = uniform({5, 4}, -1, 1, rng);
        auto bet = bet_attention(x, bp, 0, DiagPolicy::keep(), 1.0);
        auto std_tr = standard_attention(x, bp, 0);
        CHECK(oracle::max_abs_diff(oracle::to_matrix(std_tr.h), bet.output()) <= 1e-12);
    }

    SUBCASE("single token with MaskOut") {
        auto x = uniform({1, 4}, -1, 1, rng);
        auto tr = bet_attention(x, bp, 0, DiagPolicy::mask_out());
        CHECK(tr.a_prime->at(0, 0) == 1.0);
        CHECK(oracle::max_abs_diff(oracle::to_matrix(tr.v), *tr.h_prime) == 0.0);
    }

    SUBCASE("random n=4 against a stage-by-stage recomputation") {
        for (auto policy : {DiagPolicy::keep(), DiagPolicy::mask_out(), DiagPolicy::scaled(2.0)}) {
            auto x = uniform({4, 4}, -2, 2, rng);
            auto tr = bet_attention(x, bp, 0, policy);

            const auto X = oracle::to_matrix(x);
            const auto Q = oracle::matmul(X, oracle::to_matrix(bp.heads[0].wq));
            const auto K = oracle::matmul(X, oracle::to_matrix(bp.heads[0].wk));
            const auto V = oracle::matmul(X, oracle::to_matrix(bp.heads[0].wv));
            auto D = oracle::matmul(Q, oracle::transpose(K));
            for (auto& row : D)
                for (auto& v : row) v /= 2.0;
            const auto A = oracle::causal_softmax(D, [](std::size_t i, std::size_t j) { return j <= i; });
            const auto H = oracle::matmul(A, V);
            std::vector<double> R(4);
            for (std::size_t j = 0; j < 4; ++j) {
                double z = 0.0;
                for (std::size_t c = 0; c < 4; ++c) z += bp.gates[0][c] * H[j][c] + bp.gates[0][4 + c] * K[j][c];
                R[j] = 1.0 / (1.0 + std::exp(-z));
            }
            Matrix M = D;
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = 0; j <= i; ++j) M[i][j] *= R[j];
            if (policy.kind == DiagPolicy::Kind::Scale)
                for (std::size_t i = 0; i < 4; ++i) M[i][i] *= policy.factor;
            const bool mask_diag = policy.kind == DiagPolicy::Kind::MaskOut;
            const auto Ap = oracle::causal_softmax(
                M, [&](std::size_t i, std::size_t j) { return j < i || (j == i && (!mask_diag || i == 0)); });
            const auto Hp = oracle::matmul(Ap, V);

            CHECK(oracle::max_abs_diff(A, tr.a) < 1e-12);
            CHECK(oracle::max_abs_diff(Ap, *tr.a_prime) < 1e-12);
            CHECK(oracle::max_abs_diff(Hp, *tr.h_prime) < 1e-12);
            for (std::size_t j = 0; j < 4; ++j) CHECK(std::fabs(R[j] - (*tr.r)[j]) < 1e-12);
        }
    }

    SUBCASE("gradients reach the gate vector") {
        auto x = uniform({4, 4}, -1, 1, rng);
        auto tr = bet_attention(x, bp, 0, DiagPolicy::mask_out());
        sum(mul(tr.output(), uniform({4, 4}, -1, 1, rng))).backward();
        REQUIRE(bp.gates[0].has_grad());
        double norm = 0.0;
        for (double g : bp.gates[0].grad()) norm += g * g;
        CHECK(norm > 0.0);
    }
}
