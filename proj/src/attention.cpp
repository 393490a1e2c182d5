#include "bet/attention.hpp"

#include <cmath>

#include "bet/bet_attention.hpp"
#include "bet/errors.hpp"

namespace bet {

BlockParams BlockParams::init(std::size_t d_model, std::size_t n_heads, std::size_t d_ff, Rng& rng) {
    if (n_heads == 0 || d_model % n_heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    const std::size_t dh = d_model / n_heads;
    BlockParams bp;
    for (std::size_t h = 0; h < n_heads; ++h) {
        ProjectionWeights pw;
        pw.wq = xavier_uniform({d_model, dh}, d_model, dh, rng);
        pw.wk = xavier_uniform({d_model, dh}, d_model, dh, rng);
        pw.wv = xavier_uniform({d_model, dh}, d_model, dh, rng);
        bp.heads.push_back(std::move(pw));
    }
    bp.w_out = xavier_uniform({d_model, d_model}, d_model, d_model, rng);
    bp.ff_w1 = xavier_uniform({d_model, d_ff}, d_model, d_ff, rng);
    bp.ff_b1 = Tensor::zeros({d_ff}, true);
    bp.ff_w2 = xavier_uniform({d_ff, d_model}, d_ff, d_model, rng);
    bp.ff_b2 = Tensor::zeros({d_model}, true);
    bp.ln1_gain = Tensor::filled({d_model}, 1.0, true);
    bp.ln1_bias = Tensor::zeros({d_model}, true);
    bp.ln2_gain = Tensor::filled({d_model}, 1.0, true);
    bp.ln2_bias = Tensor::zeros({d_model}, true);
    for (std::size_t h = 0; h < n_heads; ++h) bp.gates.push_back(xavier_uniform({2 * dh}, 2 * dh, 1, rng));
    return bp;
}

void BlockParams::validate() const {
    if (heads.empty()) throw DimensionError("block has no attention heads");
    const std::size_t d = d_model(), dh = d_head();
    for (const auto& pw : heads) {
        if (pw.wq.shape() != Shape{d, dh} || pw.wk.shape() != pw.wq.shape() || pw.wv.shape() != pw.wq.shape()) {
            throw DimensionError("projection weights must all be " + to_string({d, dh}));
        }
    }
    if (heads.size() * dh != d) {
        throw DimensionError("head count " + std::to_string(heads.size()) + " x d_head " + std::to_string(dh) +
                             " != model dimension " + std::to_string(d));
    }
    if (w_out.shape() != Shape{d, d}) throw DimensionError("output projection must be " + to_string({d, d}));
    if (gates.size() != heads.size()) throw DimensionError("one gate vector per head is required");
}

std::vector<std::pair<std::string, Tensor>> BlockParams::named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const auto prefix = "head" + std::to_string(h) + ".";
        out.emplace_back(prefix + "wq", heads[h].wq);
        out.emplace_back(prefix + "wk", heads[h].wk);
        out.emplace_back(prefix + "wv", heads[h].wv);
        out.emplace_back(prefix + "gate", gates[h]);
    }
    out.emplace_back("attn.w_out", w_out);
    out.emplace_back("ffn.w1", ff_w1);
    out.emplace_back("ffn.b1", ff_b1);
    out.emplace_back("ffn.w2", ff_w2);
    out.emplace_back("ffn.b2", ff_b2);
    out.emplace_back("ln1.gain", ln1_gain);
    out.emplace_back("ln1.bias", ln1_bias);
    out.emplace_back("ln2.gain", ln2_gain);
    out.emplace_back("ln2.bias", ln2_bias);
    return out;
}

Qkv project_qkv(const Tensor& x, const ProjectionWeights& pw) {
    return {matmul(x, pw.wq), matmul(x, pw.wk), matmul(x, pw.wv)};
}

DotProduct causal_dot_product(const Tensor& q, const Tensor& k) {
    if (q.shape() != k.shape()) {
        throw DimensionError("causal_dot_product: Q " + to_string(q.shape()) + " vs K " + to_string(k.shape()));
    }
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    return {scale(matmul(q, transpose(k)), inv_sqrt), BoolMask::causal(q.rows())};
}

AttentionTrace standard_attention(const Tensor& x, const BlockParams& bp, std::size_t head, const DiagPolicy& policy) {
    if (head >= bp.n_heads()) throw DimensionError("head index " + std::to_string(head) + " out of range");
    if (x.rows() == 0) throw ContractViolation("attention over an empty sequence");
    AttentionTrace trace;
    auto [q, k, v] = project_qkv(x, bp.heads[head]);
    auto dp = causal_dot_product(q, k);
    auto [logits, mask] = apply_diag_policy(dp.d, dp.causal_mask, policy);
    trace.q = q;
    trace.k = k;
    trace.v = v;
    trace.d = dp.d;
    trace.causal_mask = dp.causal_mask;
    trace.a = masked_row_softmax(logits, mask);
    trace.h = matmul(trace.a, v);
    trace.final_mask = std::move(mask);
    return trace;
}

MultiHeadOutput multi_head_attention(const Tensor& x, const BlockParams& bp, const AttentionOptions& options) {
    bp.validate();
    if (x.cols() != bp.d_model()) {
        throw DimensionError("attention input " + to_string(x.shape()) + " vs model dimension " +
                             std::to_string(bp.d_model()));
    }
    MultiHeadOutput result;
    std::vector<Tensor> outputs;
    for (std::size_t h = 0; h < bp.n_heads(); ++h) {
        auto trace = options.variant == AttentionVariant::BetSF
                         ? bet_attention(x, bp, h, options.policy, options.forced_gate)
                         : standard_attention(x, bp, h, options.policy);
        outputs.push_back(trace.output());
        result.traces.push_back(std::move(trace));
    }
    const Tensor joined = outputs.size() == 1 ? outputs.front() : concat_cols(outputs);
    result.out = matmul(joined, bp.w_out);
    return result;
}

Tensor feed_forward(const Tensor& x, const BlockParams& bp) {
    return add_bias(matmul(gelu(add_bias(matmul(x, bp.ff_w1), bp.ff_b1)), bp.ff_w2), bp.ff_b2);
}

BlockOutput transformer_block(const Tensor& x, const BlockParams& bp, const AttentionOptions& options) {
    auto mha = multi_head_attention(x, bp, options);
    BlockOutput out;
    out.attention_out = mha.out;
    out.x_prime = layer_norm(add(x, mha.out), bp.ln1_gain, bp.ln1_bias);
    out.out = layer_norm(add(out.x_prime, feed_forward(out.x_prime, bp)), bp.ln2_gain, bp.ln2_bias);
    out.traces = std::move(mha.traces);
    return out;
}

BlockOutput transformer_block(const Tensor& x, const BlockParams& bp, AttentionVariant variant,
                              const DiagPolicy& policy) {
    return transformer_block(x, bp, AttentionOptions{variant, policy, std::nullopt});
}

}  // namespace bet
