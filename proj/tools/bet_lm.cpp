// bet_lm: train, evaluate and inspect small bird-eye transformer language models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "bet/analyzer.hpp"
#include "bet/errors.hpp"
#include "bet/syntax_hints.hpp"
#include "bet/training.hpp"

namespace fs = std::filesystem;
using namespace bet;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDivergence = 3 };

void log_line(const std::string& line) { std::cerr << line << '\n'; }

int cmd_train(const std::string& config_path, const std::string& corpus, const std::optional<std::string>& treebank,
              const std::string& out, const std::optional<std::uint64_t>& seed) {
    auto rc = load_run_config(config_path);
    if (seed) rc.train.seed = *seed;
    auto result = train_to_directory(rc.model, rc.train, corpus, treebank, out, TrainHooks{nullptr, log_line});
    if (!result.curve.empty()) {
        const auto& last = result.curve.back();
        std::fprintf(stderr, "trained %ld steps, final lm_loss %.6f\n", last.step, last.lm_loss);
    }
    return kOk;
}

nlohmann::json metrics_json(const EvalMetrics& m) {
    return {{"cross_entropy_nats", m.cross_entropy_nats},
            {"perplexity", m.perplexity},
            {"bpc", m.bpc},
            {"predicted_tokens", m.predicted_tokens}};
}

int cmd_eval(const std::string& checkpoint, const std::string& corpus) {
    const auto cp = load_checkpoint(checkpoint);
    std::cout << metrics_json(evaluate(cp, read_text_file(corpus))).dump(2) << '\n';
    return kOk;
}

struct AnalyzeArgs {
    std::string checkpoint, corpus, out;
    std::optional<std::size_t> layer, head;
    std::size_t top_k = 0;
    std::string dump_json;
    bool exclude_first_row = false;
    std::size_t max_sequences = 0;
};

int cmd_analyze(const AnalyzeArgs& a) {
    const auto cp = load_checkpoint(a.checkpoint);
    const auto& cfg = cp.model.config();
    const auto ids = cp.vocab.encode(read_text_file(a.corpus));
    auto windows = evaluation_windows(ids, cfg.max_seq_len);
    if (a.max_sequences && windows.size() > a.max_sequences) windows.resize(a.max_sequences);
    if (windows.empty()) throw ValidationError("corpus has fewer than 2 tokens; nothing to analyze");

    std::vector<std::vector<int>> inputs;
    for (const auto& w : windows) inputs.emplace_back(w.begin(), w.end() - 1);

    CorpusStatsOptions opts;
    opts.layer = a.layer;
    opts.head = a.head;
    opts.include_first_row = !a.exclude_first_row;
    write_text_file(a.out, emit_stats_report(corpus_stats(cp.model, inputs, opts)));

    if (a.top_k > 0 && !a.dump_json.empty()) {
        fs::create_directories(a.dump_json);
        NoGradGuard no_grad;
        for (std::size_t s = 0; s < windows.size(); ++s) {
            std::vector<std::string> tokens;
            for (int id : windows[s]) tokens.push_back(cp.vocab.token(id));
            const auto fwd = cp.model.forward(inputs[s]);
            std::ofstream out(fs::path(a.dump_json) / ("sequence_" + std::to_string(s) + ".jsonl"));
            for (std::size_t l = 0; l < cfg.n_layers; ++l) {
                if (a.layer && *a.layer != l) continue;
                const Tensor avg = head_averaged_attention(fwd.traces[l]);
                for (std::size_t row = 0; row < inputs[s].size(); ++row) {
                    out << top_attended_report(s, l, row, tokens, top_attended(avg, row, a.top_k)).dump() << '\n';
                }
            }
        }
    }
    std::fprintf(stderr, "analyzed %zu sequences\n", inputs.size());
    return kOk;
}

int cmd_hints(const std::string& treebank, const std::string& out_path) {
    const auto trees = load_treebank(treebank);
    std::string out;
    for (const auto& tree : trees) {
        for (std::size_t t = 0; t + 1 < tree.size(); ++t) {
            if (t) out += ' ';
            out += std::to_string(extract_hint(tree, t));
        }
        out += '\n';
    }
    write_text_file(out_path, out);
    return kOk;
}

int cmd_ablate(const std::string& config_path, const std::string& corpus, const std::string& out,
               const std::optional<std::string>& eval_corpus) {
    const auto rc = load_run_config(config_path);
    fs::create_directories(out);
    const auto rows =
        run_ablation(rc, corpus, read_text_file(eval_corpus.value_or(corpus)), out, TrainHooks{nullptr, log_line});
    std::cout << ablation_csv(rows);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train and inspect bird-eye transformer language models"};
    app.require_subcommand(1);

    std::string config, corpus, out, checkpoint, treebank_file;
    std::optional<std::string> treebank, eval_corpus;
    std::optional<std::uint64_t> seed;

    auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, loss curve and config");
    train_cmd->add_option("--config", config, "JSON config file")->required();
    train_cmd->add_option("--corpus", corpus, "Training text")->required();
    train_cmd->add_option("--treebank", treebank, "Dependency treebank aligned with the corpus lines");
    train_cmd->add_option("--out", out, "Output directory")->required();
    train_cmd->add_option("--seed", seed, "Override the configured seed");

    auto* eval_cmd = app.add_subcommand("eval", "Report cross-entropy, perplexity and bpc as JSON");
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--corpus", corpus, "Evaluation text")->required();

    AnalyzeArgs an;
    auto* analyze_cmd = app.add_subcommand("analyze", "Current/historical attention statistics");
    analyze_cmd->add_option("--checkpoint", an.checkpoint, "Checkpoint file")->required();
    analyze_cmd->add_option("--corpus", an.corpus, "Text to analyze")->required();
    analyze_cmd->add_option("--out", an.out, "Statistics CSV")->required();
    analyze_cmd->add_option("--layer", an.layer, "Only this layer");
    analyze_cmd->add_option("--head", an.head, "Only this head in the per-head rows");
    analyze_cmd->add_option("--top-k", an.top_k, "Top attended positions per row in the JSON dump");
    analyze_cmd->add_option("--dump-json", an.dump_json, "Directory for per-sequence JSON lines");
    analyze_cmd->add_flag("--exclude-first-row", an.exclude_first_row, "Skip row 0 when pooling");
    analyze_cmd->add_option("--max-sequences", an.max_sequences, "Analyze at most this many windows");

    auto* hints_cmd = app.add_subcommand("hints", "Dump syntax-hint targets, one sentence per line");
    hints_cmd->add_option("--treebank", treebank_file, "Treebank file")->required();
    hints_cmd->add_option("--out", out, "Output file")->required();

    auto* ablate_cmd = app.add_subcommand("ablate", "Train the diagonal/bird-eye variant grid and compare");
    ablate_cmd->add_option("--config", config, "JSON config file")->required();
    ablate_cmd->add_option("--corpus", corpus, "Training text")->required();
    ablate_cmd->add_option("--out", out, "Output directory")->required();
    ablate_cmd->add_option("--eval-corpus", eval_corpus, "Evaluation text (defaults to the training corpus)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*train_cmd) return cmd_train(config, corpus, treebank, out, seed);
        if (*eval_cmd) return cmd_eval(checkpoint, corpus);
        if (*analyze_cmd) return cmd_analyze(an);
        if (*hints_cmd) return cmd_hints(treebank_file, out);
        if (*ablate_cmd) return cmd_ablate(config, corpus, out, eval_corpus);
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kDivergence;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}
