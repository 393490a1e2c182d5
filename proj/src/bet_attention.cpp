#include "bet/bet_attention.hpp"

#include "bet/errors.hpp"

namespace bet {

std::pair<Tensor, BoolMask> apply_diag_policy(const Tensor& d, const BoolMask& mask, const DiagPolicy& policy) {
    if (d.rank() != 2 || d.rows() != d.cols()) {
        throw DimensionError("apply_diag_policy: expected a square matrix, got " + to_string(d.shape()));
    }
    if (mask.rows() != d.rows() || mask.cols() != d.cols()) {
        throw DimensionError("apply_diag_policy: mask does not match " + to_string(d.shape()));
    }
    const std::size_t n = d.rows();
    if (n == 0) return {d, mask};
    switch (policy.kind) {
        case DiagPolicy::Kind::Keep:
            return {d, mask};
        case DiagPolicy::Kind::Scale:
            return {diag_scale(d, policy.factor), mask};
        case DiagPolicy::Kind::MaskOut: {
            BoolMask out = mask;
            for (std::size_t i = 1; i < n; ++i) out.set(i, i, false);
            return {d, std::move(out)};
        }
    }
    return {d, mask};
}

Tensor high_level_gate(const Tensor& h, const Tensor& k, const Tensor& w) {
    if (h.shape() != k.shape()) {
        throw DimensionError("high_level_gate: H " + to_string(h.shape()) + " vs K " + to_string(k.shape()));
    }
    const std::size_t n = h.rows(), dh = h.cols();
    if (w.size() != 2 * dh) {
        throw DimensionError("high_level_gate: gate vector has " + std::to_string(w.size()) + " entries, expected " +
                             std::to_string(2 * dh));
    }
    const Tensor scores = matmul(concat_cols({h, k}), reshape(w, {2 * dh, 1}));
    return sigmoid(reshape(scores, {n}));
}

Tensor bird_eye_rescale(const Tensor& d, const BoolMask& mask, const Tensor& r) { return column_gate(d, mask, r); }

AttentionTrace bet_attention(const Tensor& x, const BlockParams& bp, std::size_t head, const DiagPolicy& policy,
                             std::optional<double> forced_gate) {
    if (head >= bp.n_heads()) throw DimensionError("head index " + std::to_string(head) + " out of range");
    if (x.rows() == 0) throw ContractViolation("attention over an empty sequence");
    AttentionTrace trace;
    auto [q, k, v] = project_qkv(x, bp.heads[head]);
    auto dp = causal_dot_product(q, k);
    trace.q = q;
    trace.k = k;
    trace.v = v;
    trace.d = dp.d;
    trace.causal_mask = dp.causal_mask;

    // First pass: plain causal attention.
    trace.a = masked_row_softmax(dp.d, dp.causal_mask);
    trace.h = matmul(trace.a, v);

    // Second pass: gate key columns, then the diagonal policy, then softmax.
    trace.r = forced_gate ? Tensor::filled({x.rows()}, *forced_gate) : high_level_gate(trace.h, k, bp.gates[head]);
    trace.m_prime = bird_eye_rescale(dp.d, dp.causal_mask, *trace.r);
    auto [logits, mask] = apply_diag_policy(*trace.m_prime, dp.causal_mask, policy);
    trace.a_prime = masked_row_softmax(logits, mask);
    trace.h_prime = matmul(*trace.a_prime, v);
    trace.final_mask = std::move(mask);
    return trace;
}

}  // namespace bet
