#pragma once

// Causal self-attention and the post-norm transformer block.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bet/diag_policy.hpp"
#include "bet/init.hpp"
#include "bet/tensor.hpp"

namespace bet {

struct ProjectionWeights {
    Tensor wq;
    Tensor wk;
    Tensor wv;
};

// Every intermediate of one attention head. The second-pass fields are only
// present for bird-eye attention.
struct AttentionTrace {
    Tensor q, k, v;
    Tensor d;              // Q·Kᵀ/√d_head, numeric everywhere
    BoolMask causal_mask;
    Tensor a;              // first (or only) softmax
    Tensor h;              // a·V
    std::optional<Tensor> r;
    std::optional<Tensor> m_prime;
    std::optional<Tensor> a_prime;
    std::optional<Tensor> h_prime;
    BoolMask final_mask;   // visibility of the weights that produced output()

    const Tensor& weights() const { return a_prime ? *a_prime : a; }
    const Tensor& output() const { return h_prime ? *h_prime : h; }
};

struct BlockParams {
    std::vector<ProjectionWeights> heads;
    Tensor w_out;  // d×d
    Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    std::vector<Tensor> gates;  // per head, length 2·d_head; read by bird-eye attention only

    std::size_t d_model() const { return w_out.rows(); }
    std::size_t n_heads() const { return heads.size(); }
    std::size_t d_head() const { return heads.empty() ? 0 : heads.front().wq.cols(); }
    std::size_t d_ff() const { return ff_w1.cols(); }

    static BlockParams init(std::size_t d_model, std::size_t n_heads, std::size_t d_ff, Rng& rng);
    void validate() const;
    // Stable names, e.g. "head0.wq", "ln1.gain".
    std::vector<std::pair<std::string, Tensor>> named() const;
};

enum class AttentionVariant { Standard, BetSF };

struct AttentionOptions {
    AttentionVariant variant = AttentionVariant::Standard;
    DiagPolicy policy = DiagPolicy::keep();
    // Replaces the learned gate with a constant (bird-eye attention only).
    std::optional<double> forced_gate;
};

struct Qkv {
    Tensor q, k, v;
};

Qkv project_qkv(const Tensor& x, const ProjectionWeights& pw);

struct DotProduct {
    Tensor d;
    BoolMask causal_mask;
};

DotProduct causal_dot_product(const Tensor& q, const Tensor& k);

// Single head. The diagonal policy is applied to D before the softmax.
AttentionTrace standard_attention(const Tensor& x, const BlockParams& bp, std::size_t head,
                                  const DiagPolicy& policy = DiagPolicy::keep());

struct MultiHeadOutput {
    Tensor out;
    std::vector<AttentionTrace> traces;
};

MultiHeadOutput multi_head_attention(const Tensor& x, const BlockParams& bp, const AttentionOptions& options);

struct BlockOutput {
    Tensor out;
    Tensor attention_out;
    Tensor x_prime;
    std::vector<AttentionTrace> traces;
};

// X' = LayerNorm(X + Attention(X)); out = LayerNorm(X' + FFL(X')).
BlockOutput transformer_block(const Tensor& x, const BlockParams& bp, const AttentionOptions& options);
BlockOutput transformer_block(const Tensor& x, const BlockParams& bp, AttentionVariant variant,
                              const DiagPolicy& policy);

Tensor feed_forward(const Tensor& x, const BlockParams& bp);

}  // namespace bet
