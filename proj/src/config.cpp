#include "bet/config.hpp"

#include <fstream>
#include <set>

#include "bet/errors.hpp"

namespace bet {

namespace {

template <typename T>
T field(const nlohmann::json& doc, const char* key) {
    try {
        return doc.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

std::size_t size_field(const nlohmann::json& doc, const char* key) {
    const auto& v = doc.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

}  // namespace

std::string to_string(ModelVariant variant) {
    switch (variant) {
        case ModelVariant::Standard: return "standard";
        case ModelVariant::BetSF: return "bet_sf";
        case ModelVariant::BetSG: return "bet_sg";
        case ModelVariant::BetSGSF: return "bet_sg_sf";
    }
    return "standard";
}

ModelVariant parse_variant(const std::string& text) {
    if (text == "standard") return ModelVariant::Standard;
    if (text == "bet_sf") return ModelVariant::BetSF;
    if (text == "bet_sg") return ModelVariant::BetSG;
    if (text == "bet_sg_sf") return ModelVariant::BetSGSF;
    throw ConfigError("unknown variant '" + text + "' (expected standard, bet_sf, bet_sg or bet_sg_sf)");
}

AttentionVariant ModelConfig::attention() const {
    return variant == ModelVariant::BetSF || variant == ModelVariant::BetSGSF ? AttentionVariant::BetSF
                                                                              : AttentionVariant::Standard;
}

void ModelConfig::validate() const {
    if (n_layers == 0) throw ConfigError("n_layers must be at least 1");
    if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0) {
        throw ConfigError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of n_heads (" +
                          std::to_string(n_heads) + ")");
    }
    if (d_ff == 0) throw ConfigError("d_ff must be at least 1");
    if (max_seq_len == 0) throw ConfigError("max_seq_len must be at least 1");
    if (!(lambda_p >= 0)) throw ConfigError("lambda_p must be non-negative");
    if (diag_policy.kind == DiagPolicy::Kind::Scale && !(diag_policy.factor > 0)) {
        throw ConfigError("diagonal scale factor must be positive");
    }
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (!(adam_beta1 > 0 && adam_beta1 < adam_beta2 && adam_beta2 < 1)) {
        throw ConfigError("Adam betas must satisfy 0 < adam_beta1 < adam_beta2 < 1");
    }
    if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
    if (eval_interval < 0) throw ConfigError("eval_interval must be non-negative");
    if (!(gradient_clip_norm >= 0)) throw ConfigError("gradient_clip_norm must be non-negative (0 disables)");
}

nlohmann::json to_json(const ModelConfig& m, const TrainConfig& t) {
    return {
        {"variant", to_string(m.variant)},
        {"diag_policy", m.diag_policy.label()},
        {"n_layers", m.n_layers},
        {"n_heads", m.n_heads},
        {"d_model", m.d_model},
        {"d_ff", m.d_ff},
        {"vocab_size", m.vocab_size},
        {"max_seq_len", m.max_seq_len},
        {"lambda_p", m.lambda_p},
        {"tokenization", to_string(m.tokenization)},
        {"learning_rate", t.learning_rate},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_eps", t.adam_eps},
        {"batch_size", t.batch_size},
        {"total_steps", t.total_steps},
        {"eval_interval", t.eval_interval},
        {"seed", t.seed},
        {"gradient_clip_norm", t.gradient_clip_norm},
    };
}

RunConfig run_config_from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known = {
        "variant", "diag_policy", "n_layers", "n_heads", "d_model", "d_ff", "vocab_size",
        "max_seq_len", "lambda_p", "tokenization", "learning_rate", "adam_beta1", "adam_beta2",
        "adam_eps", "batch_size", "total_steps", "eval_interval", "seed", "gradient_clip_norm"};
    for (const auto& [key, value] : doc.items()) {
        if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    RunConfig rc;
    auto& m = rc.model;
    auto& t = rc.train;
    if (doc.contains("variant")) m.variant = parse_variant(field<std::string>(doc, "variant"));
    if (doc.contains("diag_policy")) m.diag_policy = DiagPolicy::parse(field<std::string>(doc, "diag_policy"));
    if (doc.contains("n_layers")) m.n_layers = size_field(doc, "n_layers");
    if (doc.contains("n_heads")) m.n_heads = size_field(doc, "n_heads");
    if (doc.contains("d_model")) m.d_model = size_field(doc, "d_model");
    if (doc.contains("d_ff")) m.d_ff = size_field(doc, "d_ff");
    if (doc.contains("vocab_size")) m.vocab_size = size_field(doc, "vocab_size");
    if (doc.contains("max_seq_len")) m.max_seq_len = size_field(doc, "max_seq_len");
    if (doc.contains("lambda_p")) m.lambda_p = field<double>(doc, "lambda_p");
    if (doc.contains("tokenization")) m.tokenization = parse_tokenization(field<std::string>(doc, "tokenization"));
    if (doc.contains("learning_rate")) t.learning_rate = field<double>(doc, "learning_rate");
    if (doc.contains("adam_beta1")) t.adam_beta1 = field<double>(doc, "adam_beta1");
    if (doc.contains("adam_beta2")) t.adam_beta2 = field<double>(doc, "adam_beta2");
    if (doc.contains("adam_eps")) t.adam_eps = field<double>(doc, "adam_eps");
    if (doc.contains("batch_size")) t.batch_size = size_field(doc, "batch_size");
    if (doc.contains("total_steps")) t.total_steps = static_cast<long>(size_field(doc, "total_steps"));
    if (doc.contains("eval_interval")) t.eval_interval = static_cast<long>(size_field(doc, "eval_interval"));
    if (doc.contains("seed")) t.seed = field<std::uint64_t>(doc, "seed");
    if (doc.contains("gradient_clip_norm")) t.gradient_clip_norm = field<double>(doc, "gradient_clip_norm");
    m.validate();
    t.validate();
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(doc);
}

}  // namespace bet
