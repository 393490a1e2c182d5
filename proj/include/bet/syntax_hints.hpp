#pragma once

// Syntax-hint supervision from dependency trees.
//
// For the token at position t the hint is the nearest ancestor of token t+1
// that appears before t+1 in the sentence, or t itself if there is none. The
// hints become one-hot rows that a pointer loss compares against attention.

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "bet/tensor.hpp"

namespace bet {

struct DependencyTree {
    static constexpr int kRoot = -1;

    std::vector<std::string> tokens;
    std::vector<int> heads;  // 0-based parent position, kRoot for the root

    std::size_t size() const { return tokens.size(); }

    // heads_one_based uses the treebank convention: 1-based, 0 = root.
    static DependencyTree from_one_based(std::vector<std::string> tokens, const std::vector<int>& heads_one_based);

    // Throws ValidationError on length mismatch, out-of-range heads or cycles.
    void validate(const std::string& name = "tree") const;
};

// Three tab-separated columns per token (ID, FORM, HEAD), blank line between
// sentences, '#' lines ignored.
std::vector<DependencyTree> parse_treebank(std::istream& in);
std::vector<DependencyTree> parse_treebank(std::string_view text);
std::vector<DependencyTree> load_treebank(const std::string& path);

std::size_t extract_hint(const DependencyTree& tree, std::size_t t);

struct HintTargets {
    std::vector<std::size_t> target_index;  // meaningful where row_valid
    Tensor y_s;                             // n×n one-hot rows
    std::vector<bool> row_valid;            // false for the final row

    std::size_t size() const { return row_valid.size(); }
};

HintTargets build_hint_targets(const DependencyTree& tree);

inline constexpr double kPointerLogEps = 1e-12;

struct PointerLoss {
    Tensor value;             // scalar
    bool no_valid_rows = false;
};

// Mean over supervised rows of -log(A[t][hint] + eps). Differentiable in A.
PointerLoss pointer_loss(const Tensor& attention, const HintTargets& targets);

// lm_loss + lambda_p · Σ pointer_losses. Negative lambda_p is a ConfigError.
Tensor total_loss(const Tensor& lm_loss, const std::vector<Tensor>& pointer_losses, double lambda_p);

}  // namespace bet
