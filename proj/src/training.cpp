#include "bet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bet/analyzer.hpp"
#include "bet/errors.hpp"
#include "bet/optimizer.hpp"

namespace bet {

namespace {

HintTargets slice_hints(const HintTargets& full, std::size_t n) {
    HintTargets out;
    out.target_index.assign(full.target_index.begin(), full.target_index.begin() + static_cast<std::ptrdiff_t>(n));
    out.row_valid.assign(full.row_valid.begin(), full.row_valid.begin() + static_cast<std::ptrdiff_t>(n));
    std::vector<double> ys(n * n, 0.0);
    for (std::size_t t = 0; t < n; ++t)
        if (out.row_valid[t]) ys[t * n + out.target_index[t]] = 1.0;
    out.y_s = Tensor::from({n, n}, std::move(ys));
    return out;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void emit(const TrainHooks& hooks, const std::string& line) {
    if (hooks.log) hooks.log(line);
}

}  // namespace

TrainingData prepare_training_data(std::string_view corpus, const Vocabulary& vocab, const ModelConfig& config,
                                   const std::vector<DependencyTree>* treebank) {
    TrainingData data;
    if (!treebank || config.tokenization != Tokenization::Word) {
        data.stream = vocab.encode(corpus);
        if (data.stream.size() < 2) throw ValidationError("corpus needs at least 2 tokens to train on");
        return data;
    }

    std::istringstream in{std::string(corpus)};
    std::string line;
    std::size_t line_no = 0, k = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto words = split_units(line, Tokenization::Word);
        if (words.empty()) continue;
        if (k >= treebank->size()) {
            throw ValidationError("corpus line " + std::to_string(line_no) + " has no matching treebank sentence (" +
                                  std::to_string(treebank->size()) + " sentences)");
        }
        const auto& tree = (*treebank)[k];
        if (words != tree.tokens) {
            throw ValidationError("corpus line " + std::to_string(line_no) + " does not match treebank sentence " +
                                  std::to_string(k + 1));
        }
        ++k;
        if (tree.size() < 2) continue;
        const std::size_t len = std::min(tree.size(), config.max_seq_len + 1);
        std::vector<int> ids;
        ids.reserve(len);
        for (std::size_t i = 0; i < len; ++i) ids.push_back(vocab.id(tree.tokens[i]));
        data.hints.push_back(slice_hints(build_hint_targets(tree), len - 1));
        data.sentences.push_back(std::move(ids));
    }
    if (k != treebank->size()) {
        throw ValidationError("treebank has " + std::to_string(treebank->size()) + " sentences but the corpus has " +
                              std::to_string(k) + " non-empty lines");
    }
    if (data.sentences.empty()) throw ValidationError("no sentence with at least 2 tokens to train on");
    return data;
}

double effective_lambda(const ModelConfig& config, bool have_treebank) {
    if (!config.uses_pointer_loss() || config.tokenization != Tokenization::Word || !have_treebank) return 0.0;
    return config.lambda_p;
}

BatchLoss batch_loss(const Model& model, const std::vector<std::vector<int>>& sequences,
                     const std::vector<const HintTargets*>& hints, double lambda_p) {
    if (sequences.empty()) throw ContractViolation("batch_loss: empty batch");
    if (!hints.empty() && hints.size() != sequences.size()) {
        throw DimensionError("batch_loss: hints must be empty or parallel to sequences");
    }
    const bool with_pointer = lambda_p > 0 && !hints.empty();
    const std::size_t n_layers = model.config().n_layers;

    std::vector<Tensor> weighted;
    std::vector<std::vector<Tensor>> per_layer(n_layers);
    std::size_t tokens = 0;
    for (std::size_t s = 0; s < sequences.size(); ++s) {
        const auto& seq = sequences[s];
        if (seq.size() < 2) throw ContractViolation("batch_loss: a sequence needs at least 2 tokens");
        const std::size_t n = seq.size() - 1;
        std::span<const int> all(seq);
        const auto fwd = model.forward(all.first(n));
        weighted.push_back(scale(cross_entropy(fwd.logits, all.subspan(1)), static_cast<double>(n)));
        tokens += n;
        if (with_pointer && hints[s]) {
            for (std::size_t l = 0; l < n_layers; ++l) {
                auto p = pointer_loss(head_averaged_attention(fwd.traces[l]), *hints[s]);
                if (!p.no_valid_rows) per_layer[l].push_back(p.value);
            }
        }
    }
    BatchLoss out;
    out.predicted_tokens = tokens;
    Tensor lm_sum = weighted.front();
    for (std::size_t i = 1; i < weighted.size(); ++i) lm_sum = add(lm_sum, weighted[i]);
    Tensor lm = scale(lm_sum, 1.0 / static_cast<double>(tokens));
    out.lm_loss = lm.item();
    std::vector<Tensor> pointer_terms;
    for (auto& layer : per_layer)
        if (!layer.empty()) pointer_terms.push_back(mean_of(layer));
    if (pointer_terms.empty()) {
        out.total = lm;
        return out;
    }
    for (const auto& p : pointer_terms) out.pointer_loss += p.item();
    out.total = total_loss(lm, pointer_terms, lambda_p);
    return out;
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config, std::string_view corpus,
                  const std::vector<DependencyTree>* treebank, const TrainHooks& hooks) {
    train_config.validate();
    ModelConfig cfg = model_config;
    cfg.validate();
    if (cfg.uses_pointer_loss() && cfg.tokenization == Tokenization::Word && !treebank && cfg.lambda_p > 0) {
        throw ValidationError("variant " + to_string(cfg.variant) + " with word tokenization needs a treebank");
    }
    if (cfg.uses_pointer_loss() && cfg.tokenization == Tokenization::Char && cfg.lambda_p > 0) {
        emit(hooks, "warning: pointer loss needs word tokenization and a treebank; training with lambda_p = 0");
    }
    const double lambda = effective_lambda(cfg, treebank != nullptr);

    Vocabulary vocab = Vocabulary::build(corpus, cfg.tokenization);
    if (cfg.vocab_size == 0) {
        cfg.vocab_size = vocab.size();
    } else if (cfg.vocab_size != vocab.size()) {
        throw ConfigError("vocab_size " + std::to_string(cfg.vocab_size) + " disagrees with the corpus vocabulary (" +
                          std::to_string(vocab.size()) + ")");
    }
    const TrainingData data = prepare_training_data(corpus, vocab, cfg, treebank);

    Rng init_rng(train_config.seed);
    Model model(cfg, init_rng);
    Adam adam(model.parameters(), AdamOptions{train_config.learning_rate, train_config.adam_beta1,
                                              train_config.adam_beta2, train_config.adam_eps,
                                              train_config.gradient_clip_norm});
    Rng data_rng(train_config.seed ^ 0x9E3779B97F4A7C15ULL);

    TrainResult result;
    for (long step = 1; step <= train_config.total_steps; ++step) {
        std::vector<std::vector<int>> batch;
        std::vector<const HintTargets*> batch_hints;
        if (data.sentence_mode()) {
            std::uniform_int_distribution<std::size_t> pick(0, data.sentences.size() - 1);
            for (std::size_t b = 0; b < train_config.batch_size; ++b) {
                const auto i = pick(data_rng);
                batch.push_back(data.sentences[i]);
                batch_hints.push_back(&data.hints[i]);
            }
        } else {
            const std::size_t window = std::min(data.stream.size(), cfg.max_seq_len + 1);
            std::uniform_int_distribution<std::size_t> pick(0, data.stream.size() - window);
            for (std::size_t b = 0; b < train_config.batch_size; ++b) {
                const auto start = data.stream.begin() + static_cast<std::ptrdiff_t>(pick(data_rng));
                batch.emplace_back(start, start + static_cast<std::ptrdiff_t>(window));
            }
        }

        auto loss = batch_loss(model, batch, batch_hints, lambda);
        const double total = loss.total.item();
        if (!std::isfinite(total)) throw DivergenceError(step, "non-finite training loss");
        loss.total.backward();
        const double grad_norm = adam.step();
        adam.zero_grad();
        if (!std::isfinite(grad_norm)) throw DivergenceError(step, "non-finite gradient norm");

        LossRecord rec{step, loss.lm_loss, loss.pointer_loss, total};
        result.curve.push_back(rec);
        if (train_config.eval_interval > 0 && step % train_config.eval_interval == 0) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "step %ld lm_loss %.6f pointer_loss %.6f total_loss %.6f", step,
                          rec.lm_loss, rec.pointer_loss, rec.total_loss);
            emit(hooks, buf);
        }
        if (hooks.after_step && hooks.after_step(step, model, rec)) break;
    }

    result.checkpoint.train_config = train_config;
    result.checkpoint.vocab = std::move(vocab);
    result.checkpoint.optimizer = adam.state();
    result.checkpoint.model = std::move(model);
    return result;
}

TrainResult train_to_directory(const ModelConfig& model_config, const TrainConfig& train_config,
                               const std::string& corpus_path, const std::optional<std::string>& treebank_path,
                               const std::string& out_dir, const TrainHooks& hooks) {
    const std::string corpus = read_text_file(corpus_path);
    std::vector<DependencyTree> treebank;
    if (treebank_path) treebank = load_treebank(*treebank_path);
    auto result = train(model_config, train_config, corpus, treebank_path ? &treebank : nullptr, hooks);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw ValidationError("cannot create output directory '" + out_dir + "': " + ec.message());
    const std::filesystem::path dir(out_dir);
    save_checkpoint(result.checkpoint, (dir / "checkpoint.bin").string());
    write_text_file((dir / "loss_curve.csv").string(), loss_curve_csv(result.curve));
    write_text_file((dir / "config.json").string(),
                    to_json(result.checkpoint.model.config(), result.checkpoint.train_config).dump(2) + "\n");
    return result;
}

std::string loss_curve_csv(const std::vector<LossRecord>& curve) {
    std::string out = "step,lm_loss,pointer_loss,total_loss\n";
    for (const auto& r : curve) {
        out += std::to_string(r.step) + ',' + format_double(r.lm_loss) + ',' + format_double(r.pointer_loss) + ',' +
               format_double(r.total_loss) + '\n';
    }
    return out;
}

std::vector<std::vector<int>> evaluation_windows(std::span<const int> stream, std::size_t max_seq_len) {
    if (max_seq_len == 0) throw ContractViolation("evaluation_windows: max_seq_len must be positive");
    std::vector<std::vector<int>> out;
    for (std::size_t start = 0; start + 1 < stream.size(); start += max_seq_len) {
        const std::size_t end = std::min(stream.size(), start + max_seq_len + 1);
        out.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(start),
                         stream.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

EvalMetrics evaluate_tokens(const Model& model, std::span<const int> stream) {
    if (stream.size() < 2) throw ValidationError("evaluation needs at least 2 tokens");
    NoGradGuard no_grad;
    RunningMoments nll;
    const std::size_t vocab = model.config().vocab_size;
    for (const auto& window : evaluation_windows(stream, model.config().max_seq_len)) {
        const std::size_t n = window.size() - 1;
        const auto fwd = model.forward(std::span<const int>(window).first(n));
        const auto logits = fwd.logits.data();
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = logits.data() + i * vocab;
            const double mx = *std::max_element(row, row + vocab);
            double z = 0.0;
            for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - mx);
            const auto target = static_cast<std::size_t>(window[i + 1]);
            if (target >= vocab) throw ValidationError("token id " + std::to_string(target) + " outside the vocabulary");
            nll.add(mx + std::log(z) - row[target]);
        }
    }
    EvalMetrics m;
    m.cross_entropy_nats = nll.mean();
    m.perplexity = std::exp(m.cross_entropy_nats);
    m.bpc = m.cross_entropy_nats / std::log(2.0);
    m.predicted_tokens = nll.count();
    return m;
}

EvalMetrics evaluate(const Model& model, const Vocabulary& vocab, std::string_view corpus) {
    if (corpus.empty()) throw ValidationError("cannot evaluate an empty corpus");
    const auto ids = vocab.encode(corpus);
    return evaluate_tokens(model, ids);
}

EvalMetrics evaluate(const Checkpoint& cp, std::string_view corpus) { return evaluate(cp.model, cp.vocab, corpus); }

std::vector<AblationEntry> ablation_grid() {
    return {
        {"standard", ModelVariant::Standard, DiagPolicy::keep()},
        {"reduced_diag", ModelVariant::Standard, DiagPolicy::scaled(0.1)},
        {"magnified_diag", ModelVariant::Standard, DiagPolicy::scaled(2.0)},
        {"diag_free_mask", ModelVariant::Standard, DiagPolicy::mask_out()},
        {"bet_sf", ModelVariant::BetSF, DiagPolicy::mask_out()},
        {"bet_sf_no_diag_free", ModelVariant::BetSF, DiagPolicy::keep()},
    };
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& corpus_path, std::string_view eval_corpus,
                                      const std::string& out_dir, const TrainHooks& hooks) {
    std::vector<AblationRow> rows;
    for (const auto& entry : ablation_grid()) {
        ModelConfig model = base.model;
        model.variant = entry.variant;
        model.diag_policy = entry.policy;
        emit(hooks, "ablate: training " + entry.name);
        const auto result = train_to_directory(model, base.train, corpus_path, std::nullopt,
                                               (std::filesystem::path(out_dir) / entry.name).string(), hooks);
        AblationRow row{entry, 0.0, evaluate(result.checkpoint, eval_corpus)};
        row.final_train_loss = result.curve.empty() ? row.metrics.cross_entropy_nats : result.curve.back().lm_loss;
        rows.push_back(std::move(row));
    }
    write_text_file((std::filesystem::path(out_dir) / "comparison.csv").string(), ablation_csv(rows));
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string csv = "name,variant,diag_policy,final_train_loss,cross_entropy_nats,perplexity,bpc\n";
    for (const auto& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%.6g,%.6g,%.6g,%.6g\n", r.entry.name.c_str(),
                      to_string(r.entry.variant).c_str(), r.entry.policy.label().c_str(), r.final_train_loss,
                      r.metrics.cross_entropy_nats, r.metrics.perplexity, r.metrics.bpc);
        csv += buf;
    }
    return csv;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::string& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw ValidationError("failed writing '" + path + "'");
}

}  // namespace bet
