#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bet/attention.hpp"
#include "bet/config.hpp"
#include "bet/init.hpp"
#include "bet/tensor.hpp"

namespace bet {

struct ForwardResult {
    Tensor logits;                                   // n×vocab
    std::vector<std::vector<AttentionTrace>> traces;  // [layer][head]
};

// Decoder-only language model: token + learned absolute position embeddings,
// a stack of transformer blocks, and an untied output projection.
class Model {
public:
    Model() = default;
    Model(const ModelConfig& config, Rng& rng);

    const ModelConfig& config() const { return config_; }
    AttentionOptions attention_options() const;

    ForwardResult forward(std::span<const int> tokens, std::optional<double> forced_gate = std::nullopt) const;

    // Stable parameter order; names are the checkpoint keys.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;

    Tensor token_embedding;
    Tensor position_embedding;
    std::vector<BlockParams> blocks;
    Tensor out_w;
    Tensor out_b;

private:
    ModelConfig config_;
};

// Attention the block hands to V, averaged over heads (pointer-loss target).
Tensor head_averaged_attention(const std::vector<AttentionTrace>& layer_traces);

}  // namespace bet
