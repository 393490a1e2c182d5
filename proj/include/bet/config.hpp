#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "bet/attention.hpp"
#include "bet/diag_policy.hpp"
#include "bet/vocab.hpp"

namespace bet {

// bet_sg adds the pointer loss to standard attention; bet_sg_sf adds it to
// bird-eye attention.
enum class ModelVariant { Standard, BetSF, BetSG, BetSGSF };

std::string to_string(ModelVariant variant);
ModelVariant parse_variant(const std::string& text);

struct ModelConfig {
    ModelVariant variant = ModelVariant::Standard;
    DiagPolicy diag_policy = DiagPolicy::keep();
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t d_model = 64;
    std::size_t d_ff = 256;
    std::size_t vocab_size = 0;  // 0 = derive from the corpus
    std::size_t max_seq_len = 64;
    double lambda_p = 0.5;
    Tokenization tokenization = Tokenization::Char;

    AttentionVariant attention() const;
    bool uses_pointer_loss() const { return variant == ModelVariant::BetSG || variant == ModelVariant::BetSGSF; }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-8;
    std::size_t batch_size = 8;
    long total_steps = 2000;
    long eval_interval = 100;
    std::uint64_t seed = 0;
    double gradient_clip_norm = 1.0;

    void validate() const;

    bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

nlohmann::json to_json(const ModelConfig& model, const TrainConfig& train);
// Keys not belonging to either config are rejected with ConfigError.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

}  // namespace bet
