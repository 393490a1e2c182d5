#pragma once

// Bird-eye attention: a first causal pass whose output, together with the
// keys, decides a per-token gate R. The gate rescales the key columns of the
// dot-product matrix, a diagonal policy is applied, and a second softmax
// produces the weights actually used on V.

#include <optional>
#include <utility>

#include "bet/attention.hpp"
#include "bet/diag_policy.hpp"
#include "bet/tensor.hpp"

namespace bet {

// Keep: identity. Scale(f): D[i][i] *= f, mask unchanged.
// MaskOut: mask[i][i] = false for i >= 1; row 0 keeps its only entry.
std::pair<Tensor, BoolMask> apply_diag_policy(const Tensor& d, const BoolMask& mask, const DiagPolicy& policy);

// R[j] = sigmoid(w · [H[j], K[j]]), one value per token.
Tensor high_level_gate(const Tensor& h, const Tensor& k, const Tensor& w);

// M'[i][j] = D[i][j] · R[j] on visible entries; masked entries untouched.
Tensor bird_eye_rescale(const Tensor& d, const BoolMask& mask, const Tensor& r);

AttentionTrace bet_attention(const Tensor& x, const BlockParams& bp, std::size_t head, const DiagPolicy& policy,
                             std::optional<double> forced_gate = std::nullopt);

}  // namespace bet
