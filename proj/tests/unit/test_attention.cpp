#include <cmath>

#include "doctest.h"

#include "bet/attention.hpp"
#include "bet/bet_attention.hpp"
#include "bet/errors.hpp"
#include "../support/oracles.hpp"

using namespace bet;
using oracle::Matrix;

namespace {

BlockParams single_head(std::size_t d, Rng& rng) { return BlockParams::init(d, 1, 2 * d, rng); }

Matrix add(const Matrix& a, const Matrix& b) {
    Matrix c = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) c[i][j] += b[i][j];
    return c;
}

Matrix layer_norm_ref(const Matrix& x, const Tensor& gain, const Tensor& bias) {
    Matrix out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double mu = 0.0, var = 0.0;
        for (double v : x[i]) mu += v;
        mu /= static_cast<double>(x[i].size());
        for (double v : x[i]) var += (v - mu) * (v - mu);
        var /= static_cast<double>(x[i].size());
        for (std::size_t j = 0; j < x[i].size(); ++j)
            out[i][j] = gain[j] * (x[i][j] - mu) / std::sqrt(var + kLayerNormEps) + bias[j];
    }
    return out;
}

auto causal_visible = [](std::size_t i, std::size_t j) { return j <= i; };

}  // namespace

TEST_CASE("project_qkv") {
    Rng rng(1);
    ProjectionWeights id{Tensor::identity(3), Tensor::identity(3), Tensor::identity(3)};
    auto x = uniform({4, 3}, -1, 1, rng);
    auto qkv = project_qkv(x, id);
    CHECK(oracle::max_abs_diff(oracle::to_matrix(x), qkv.q) == 0.0);
    CHECK(oracle::max_abs_diff(oracle::to_matrix(x), qkv.k) == 0.0);
    CHECK(oracle::max_abs_diff(oracle::to_matrix(x), qkv.v) == 0.0);

    auto zero = project_qkv(Tensor::zeros({2, 3}), ProjectionWeights{uniform({3, 3}, -1, 1, rng),
                                                                       uniform({3, 3}, -1, 1, rng),
                                                                       uniform({3, 3}, -1, 1, rng)});
    for (double v : zero.q.data()) CHECK(v == 0.0);

    // [[1,2],[3,4]]·[[0,1],[1,0]] = [[2,1],[4,3]] by hand
    auto swap = Tensor::matrix({{0, 1}, {1, 0}});
    auto hand = project_qkv(Tensor::matrix({{1, 2}, {3, 4}}), ProjectionWeights{swap, swap, swap});
    CHECK(hand.q.at(0, 0) == 2);
    CHECK(hand.q.at(0, 1) == 1);
    CHECK(hand.q.at(1, 0) == 4);
    CHECK(hand.q.at(1, 1) == 3);
}

TEST_CASE("causal_dot_product") {
    auto dp = causal_dot_product(Tensor::identity(2), Tensor::identity(2));
    CHECK(dp.d.at(0, 0) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(dp.d.at(0, 1) == 0.0);
    CHECK(dp.d.at(1, 0) == 0.0);
    CHECK(dp.d.at(1, 1) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(dp.causal_mask.visible(0, 0));
    CHECK_FALSE(dp.causal_mask.visible(0, 1));
    CHECK(dp.causal_mask.visible(1, 0));
    CHECK(dp.causal_mask.visible(1, 1));

    auto one = causal_dot_product(Tensor::matrix({{2, 1}}), Tensor::matrix({{1, 3}}));
    CHECK(one.d.shape() == Shape{1, 1});
    CHECK(one.causal_mask.visible(0, 0));

    auto orth = causal_dot_product(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{0, 5}, {1, 0}}));
    CHECK(orth.d.at(0, 0) == 0.0);
}

TEST_CASE("standard_attention") {
    Rng rng(2);
    auto bp = single_head(4, rng);

    SUBCASE("single token attends itself") {
        auto x = uniform({1, 4}, -1, 1, rng);
        auto tr = standard_attention(x, bp, 0);
        CHECK(tr.a.at(0, 0) == 1.0);
        CHECK(oracle::max_abs_diff(oracle::to_matrix(tr.v), tr.h) == 0.0);
        CHECK_FALSE(tr.r.has_value());
        CHECK_FALSE(tr.a_prime.has_value());
    }

    SUBCASE("equal logits give uniform rows") {
        auto flat = bp;
        flat.heads[0].wq = Tensor::zeros({4, 4});
        auto tr = standard_attention(uniform({5, 4}, -1, 1, rng), flat, 0);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j <= i; ++j) CHECK(tr.a.at(i, j) == doctest::Approx(1.0 / (i + 1)).epsilon(1e-14));
    }

    SUBCASE("random 3-token case against brute force") {
        for (int trial = 0; trial < 10; ++trial) {
            auto x = uniform({3, 4}, -2, 2, rng);
            auto tr = standard_attention(x, bp, 0);
            const auto X = oracle::to_matrix(x);
            const auto Q = oracle::matmul(X, oracle::to_matrix(bp.heads[0].wq));
            const auto K = oracle::matmul(X, oracle::to_matrix(bp.heads[0].wk));
            const auto V = oracle::matmul(X, oracle::to_matrix(bp.heads[0].wv));
            auto D = oracle::matmul(Q, oracle::transpose(K));
            for (auto& row : D)
                for (auto& v : row) v /= 2.0;  // sqrt(d_head = 4)
            const auto A = oracle::causal_softmax(D, causal_visible);
            CHECK(oracle::max_abs_diff(A, tr.a) < 1e-12);
            CHECK(oracle::max_abs_diff(oracle::matmul(A, V), tr.h) < 1e-12);
        }
    }
}

TEST_CASE("multi_head_attention") {
    Rng rng(3);
    SUBCASE("one head with identity projection reduces to the head output") {
        auto bp = single_head(4, rng);
        bp.w_out = Tensor::identity(4);
        auto x = uniform({3, 4}, -1, 1, rng);
        auto mha = multi_head_attention(x, bp, {});
        CHECK(oracle::max_abs_diff(oracle::to_matrix(standard_attention(x, bp, 0).h), mha.out) == 0.0);
    }
    SUBCASE("identical heads give identical traces") {
        auto bp = BlockParams::init(4, 2, 8, rng);
        bp.heads[1] = bp.heads[0];
        auto mha = multi_head_attention(uniform({3, 4}, -1, 1, rng), bp, {});
        CHECK(oracle::max_abs_diff(oracle::to_matrix(mha.traces[0].a), mha.traces[1].a) == 0.0);
        CHECK(oracle::max_abs_diff(oracle::to_matrix(mha.traces[0].h), mha.traces[1].h) == 0.0);
    }
    SUBCASE("random two-head case equals manual concat then project") {
        auto bp = BlockParams::init(4, 2, 8, rng);
        auto x = uniform({3, 4}, -1, 1, rng);
        auto mha = multi_head_attention(x, bp, {});
        const auto h0 = oracle::to_matrix(standard_attention(x, bp, 0).h);
        const auto h1 = oracle::to_matrix(standard_attention(x, bp, 1).h);
        Matrix joined(3);
        for (std::size_t i = 0; i < 3; ++i) {
            joined[i] = h0[i];
            joined[i].insert(joined[i].end(), h1[i].begin(), h1[i].end());
        }
        CHECK(oracle::max_abs_diff(oracle::matmul(joined, oracle::to_matrix(bp.w_out)), mha.out) < 1e-12);
    }
    SUBCASE("head count mismatch is rejected") {
        auto bp = BlockParams::init(4, 2, 8, rng);
        bp.gates.pop_back();
        CHECK_THROWS_AS(multi_head_attention(uniform({3, 4}, -1, 1, rng), bp, {}), DimensionError);
    }
}

TEST_CASE("transformer_block") {
    Rng rng(4);
    SUBCASE("zero attention and feed-forward weights pass the residual through") {
        auto bp = BlockParams::init(4, 2, 8, rng);
        bp.w_out = Tensor::zeros({4, 4});
        bp.ff_w1 = Tensor::zeros({4, 8});
        bp.ff_w2 = Tensor::zeros({8, 4});
        auto x = uniform({3, 4}, -1, 1, rng);
        auto out = transformer_block(x, bp, AttentionVariant::Standard, DiagPolicy::keep());
        const auto expected = layer_norm_ref(layer_norm_ref(oracle::to_matrix(x), bp.ln1_gain, bp.ln1_bias),
                                             bp.ln2_gain, bp.ln2_bias);
        CHECK(oracle::max_abs_diff(expected, out.out) < 1e-12);
    }
    SUBCASE("shape contract") {
        for (std::size_t n : {1u, 2u, 7u}) {
            auto bp = BlockParams::init(6, 3, 5, rng);
            auto out = transformer_block(uniform({n, 6}, -1, 1, rng), bp, AttentionVariant::BetSF,
                                         DiagPolicy::mask_out());
            CHECK(out.out.shape() == Shape{n, 6});
        }
    }
    SUBCASE("composition of the four sub-operations") {
        auto bp = BlockParams::init(4, 2, 8, rng);
        bp.ff_b1 = uniform({8}, -1, 1, rng);
        bp.ff_b2 = uniform({4}, -1, 1, rng);
        bp.ln1_gain = uniform({4}, 0.5, 1.5, rng);
        bp.ln2_bias = uniform({4}, -0.5, 0.5, rng);
        auto x = uniform({3, 4}, -1, 1, rng);
        auto out = transformer_block(x, bp, AttentionVariant::Standard, DiagPolicy::keep());

        const auto X = oracle::to_matrix(x);
        const auto attn = oracle::to_matrix(multi_head_attention(x, bp, {}).out);
        const auto xp = layer_norm_ref(add(X, attn), bp.ln1_gain, bp.ln1_bias);
        auto hidden = oracle::matmul(xp, oracle::to_matrix(bp.ff_w1));
        for (auto& row : hidden)
            for (std::size_t j = 0; j < row.size(); ++j) {
                const double z = row[j] + bp.ff_b1[j];
                row[j] = 0.5 * z * (1 + std::tanh(std::sqrt(2 / M_PI) * (z + 0.044715 * z * z * z)));
            }
        auto ffl = oracle::matmul(hidden, oracle::to_matrix(bp.ff_w2));
        for (auto& row : ffl)
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += bp.ff_b2[j];
        const auto expected = layer_norm_ref(add(xp, ffl), bp.ln2_gain, bp.ln2_bias);
        CHECK(oracle::max_abs_diff(xp, out.x_prime) < 1e-12);
        CHECK(oracle::max_abs_diff(expected, out.out) < 1e-12);
    }
}

TEST_CASE("attention rows are stochastic and causal") {
    Rng rng(5);
    for (auto variant : {AttentionVariant::Standard, AttentionVariant::BetSF}) {
        for (auto policy : {DiagPolicy::keep(), DiagPolicy::scaled(0.1), DiagPolicy::mask_out()}) {
            auto bp = BlockParams::init(4, 2, 8, rng);
            auto out = transformer_block(uniform({6, 4}, -2, 2, rng), bp, variant, policy);
            for (const auto& tr : out.traces) {
                const auto& w = tr.weights();
                for (std::size_t i = 0; i < 6; ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < 6; ++j) {
                        if (j > i) CHECK(w.at(i, j) == 0.0);
                        s += w.at(i, j);
                    }
                    CHECK(std::fabs(s - 1.0) < 1e-9);
                }
            }
        }
    }
}
