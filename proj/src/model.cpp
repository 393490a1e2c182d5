#include "bet/model.hpp"

#include <numeric>

#include "bet/errors.hpp"

namespace bet {

Model::Model(const ModelConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    if (config_.vocab_size == 0) throw ConfigError("vocab_size must be set before building a model");
    const std::size_t d = config_.d_model, v = config_.vocab_size;
    token_embedding = xavier_uniform({v, d}, v, d, rng);
    position_embedding = xavier_uniform({config_.max_seq_len, d}, config_.max_seq_len, d, rng);
    for (std::size_t l = 0; l < config_.n_layers; ++l)
        blocks.push_back(BlockParams::init(d, config_.n_heads, config_.d_ff, rng));
    out_w = xavier_uniform({d, v}, d, v, rng);
    out_b = Tensor::zeros({v}, true);
}

AttentionOptions Model::attention_options() const {
    return AttentionOptions{config_.attention(), config_.diag_policy, std::nullopt};
}

ForwardResult Model::forward(std::span<const int> tokens, std::optional<double> forced_gate) const {
    const std::size_t n = tokens.size();
    if (n == 0) throw ContractViolation("forward: empty input");
    if (n > config_.max_seq_len) {
        throw ContractViolation("forward: " + std::to_string(n) + " tokens exceed max_seq_len " +
                                std::to_string(config_.max_seq_len));
    }
    std::vector<int> positions(n);
    std::iota(positions.begin(), positions.end(), 0);
    Tensor x = add(embedding(token_embedding, tokens), embedding(position_embedding, positions));

    auto options = attention_options();
    options.forced_gate = forced_gate;
    ForwardResult result;
    for (const auto& block : blocks) {
        auto out = transformer_block(x, block, options);
        x = out.out;
        result.traces.push_back(std::move(out.traces));
    }
    result.logits = add_bias(matmul(x, out_w), out_b);
    return result;
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out{{"embed.token", token_embedding},
                                                     {"embed.position", position_embedding}};
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        for (auto& [name, t] : blocks[l].named()) out.emplace_back("block" + std::to_string(l) + "." + name, t);
    }
    out.emplace_back("output.w", out_w);
    out.emplace_back("output.b", out_b);
    return out;
}

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

Tensor head_averaged_attention(const std::vector<AttentionTrace>& layer_traces) {
    if (layer_traces.size() == 1) return layer_traces.front().weights();
    std::vector<Tensor> parts;
    for (const auto& t : layer_traces) parts.push_back(t.weights());
    return mean_of(parts);
}

}  // namespace bet
