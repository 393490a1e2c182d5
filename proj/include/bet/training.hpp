#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bet/checkpoint.hpp"
#include "bet/config.hpp"
#include "bet/model.hpp"
#include "bet/syntax_hints.hpp"
#include "bet/vocab.hpp"

namespace bet {

struct LossRecord {
    long step = 0;
    double lm_loss = 0.0;
    double pointer_loss = 0.0;
    double total_loss = 0.0;
};

// Token ids arranged for training: either one stream cut into windows, or
// treebank-aligned sentences with their hint targets.
struct TrainingData {
    std::vector<int> stream;
    std::vector<std::vector<int>> sentences;
    std::vector<HintTargets> hints;  // parallel to sentences, sized to the model input

    bool sentence_mode() const { return !sentences.empty(); }
};

// Word mode with a treebank: non-empty corpus lines must match the treebank
// sentences token for token (ValidationError otherwise).
TrainingData prepare_training_data(std::string_view corpus, const Vocabulary& vocab, const ModelConfig& config,
                                   const std::vector<DependencyTree>* treebank);

// The lambda_p actually used: zero unless the variant carries a pointer loss,
// the corpus is word-level and hints are available.
double effective_lambda(const ModelConfig& config, bool have_treebank);

struct BatchLoss {
    Tensor total;
    double lm_loss = 0.0;
    double pointer_loss = 0.0;
    std::size_t predicted_tokens = 0;
};

// One sequence of n+1 tokens: inputs tokens[0..n), targets tokens[1..n].
BatchLoss batch_loss(const Model& model, const std::vector<std::vector<int>>& sequences,
                     const std::vector<const HintTargets*>& hints, double lambda_p);

struct TrainHooks {
    // Called after every optimizer step; returning true ends training early.
    std::function<bool(long step, const Model& model, const LossRecord& record)> after_step;
    std::function<void(const std::string& line)> log;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossRecord> curve;
};

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, std::string_view corpus,
                  const std::vector<DependencyTree>* treebank, const TrainHooks& hooks = {});

// Writes checkpoint.bin, loss_curve.csv and config.json into out_dir.
TrainResult train_to_directory(const ModelConfig& model_config, const TrainConfig& train_config,
                               const std::string& corpus_path, const std::optional<std::string>& treebank_path,
                               const std::string& out_dir, const TrainHooks& hooks = {});

std::string loss_curve_csv(const std::vector<LossRecord>& curve);

struct EvalMetrics {
    double cross_entropy_nats = 0.0;
    double perplexity = 0.0;
    double bpc = 0.0;
    std::size_t predicted_tokens = 0;
};

// Non-overlapping windows of max_seq_len, no graph recording.
EvalMetrics evaluate_tokens(const Model& model, std::span<const int> stream);
EvalMetrics evaluate(const Model& model, const Vocabulary& vocab, std::string_view corpus);
EvalMetrics evaluate(const Checkpoint& cp, std::string_view corpus);

// Input windows used by evaluation and analysis: each holds up to
// max_seq_len + 1 tokens and consecutive windows share one token.
std::vector<std::vector<int>> evaluation_windows(std::span<const int> stream, std::size_t max_seq_len);

struct AblationEntry {
    std::string name;
    ModelVariant variant;
    DiagPolicy policy;
};

// Standard, reduced (0.1) and magnified (2.0) diagonal, diagonal-free mask,
// bird-eye attention with and without the diagonal-free mask.
std::vector<AblationEntry> ablation_grid();

struct AblationRow {
    AblationEntry entry;
    double final_train_loss = 0.0;
    EvalMetrics metrics;
};

// Trains every grid entry under one seed into out_dir/<name>/ and evaluates
// each on eval_corpus. Writes out_dir/comparison.csv.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& corpus_path, std::string_view eval_corpus,
                                      const std::string& out_dir, const TrainHooks& hooks = {});
std::string ablation_csv(const std::vector<AblationRow>& rows);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace bet
