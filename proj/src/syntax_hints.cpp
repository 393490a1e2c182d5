#include "bet/syntax_hints.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>

#include "bet/errors.hpp"

namespace bet {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            cols.push_back(line.substr(start));
            return cols;
        }
        cols.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

bool parse_int(std::string_view text, int& out) {
    if (text.empty()) return false;
    const auto* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, out);
    return res.ec == std::errc() && res.ptr == end;
}

struct PendingSentence {
    std::vector<std::string> tokens;
    std::vector<int> heads;
    std::vector<std::size_t> lines;
    std::size_t first_line = 0;
};

DependencyTree finish(PendingSentence& s, std::size_t ordinal) {
    const int n = static_cast<int>(s.tokens.size());
    for (std::size_t i = 0; i < s.heads.size(); ++i) {
        if (s.heads[i] < 0 || s.heads[i] > n) {
            throw ParseError("HEAD " + std::to_string(s.heads[i]) + " outside 0.." + std::to_string(n), s.lines[i]);
        }
    }
    DependencyTree tree;
    tree.tokens = std::move(s.tokens);
    for (int h : s.heads) tree.heads.push_back(h == 0 ? DependencyTree::kRoot : h - 1);
    tree.validate("sentence " + std::to_string(ordinal) + " (line " + std::to_string(s.first_line) + ")");
    s = PendingSentence{};
    return tree;
}

}  // namespace

DependencyTree DependencyTree::from_one_based(std::vector<std::string> tokens, const std::vector<int>& heads_one_based) {
    DependencyTree tree;
    tree.tokens = std::move(tokens);
    tree.heads.reserve(heads_one_based.size());
    for (int h : heads_one_based) tree.heads.push_back(h == 0 ? kRoot : h - 1);
    tree.validate();
    return tree;
}

void DependencyTree::validate(const std::string& name) const {
    const std::size_t n = tokens.size();
    if (heads.size() != n) throw ValidationError(name + ": heads and tokens differ in length");
    for (std::size_t i = 0; i < n; ++i) {
        if (heads[i] != kRoot && (heads[i] < 0 || static_cast<std::size_t>(heads[i]) >= n)) {
            throw ValidationError(name + ": head of token " + std::to_string(i + 1) + " is out of range");
        }
    }
    // 0 = unvisited, 1 = on current path, 2 = known to reach the root
    std::vector<int> state(n, 0);
    for (std::size_t start = 0; start < n; ++start) {
        std::vector<std::size_t> path;
        int node = static_cast<int>(start);
        while (node != kRoot && state[node] == 0) {
            state[node] = 1;
            path.push_back(static_cast<std::size_t>(node));
            node = heads[node];
        }
        if (node != kRoot && state[node] == 1) {
            throw ValidationError(name + ": cycle through token " + std::to_string(node + 1));
        }
        for (auto p : path) state[p] = 2;
    }
}

std::vector<DependencyTree> parse_treebank(std::istream& in) {
    std::vector<DependencyTree> trees;
    PendingSentence pending;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = raw;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) {
            if (!pending.tokens.empty()) trees.push_back(finish(pending, trees.size() + 1));
            continue;
        }
        if (line.front() == '#') continue;
        const auto cols = split_tabs(line);
        if (cols.size() != 3) {
            throw ParseError("expected 3 tab-separated columns (ID, FORM, HEAD), found " + std::to_string(cols.size()),
                             line_no);
        }
        int id = 0, head = 0;
        if (!parse_int(cols[0], id)) throw ParseError("ID is not an integer: '" + std::string(cols[0]) + "'", line_no);
        if (id != static_cast<int>(pending.tokens.size()) + 1) {
            throw ParseError("expected ID " + std::to_string(pending.tokens.size() + 1) + ", found " +
                                 std::to_string(id),
                             line_no);
        }
        if (cols[1].empty()) throw ParseError("empty FORM", line_no);
        if (!parse_int(cols[2], head)) {
            throw ParseError("HEAD is not an integer: '" + std::string(cols[2]) + "'", line_no);
        }
        if (pending.tokens.empty()) pending.first_line = line_no;
        pending.tokens.emplace_back(cols[1]);
        pending.heads.push_back(head);
        pending.lines.push_back(line_no);
    }
    if (!pending.tokens.empty()) trees.push_back(finish(pending, trees.size() + 1));
    return trees;
}

std::vector<DependencyTree> parse_treebank(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse_treebank(in);
}

std::vector<DependencyTree> load_treebank(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open treebank '" + path + "'");
    return parse_treebank(in);
}

std::size_t extract_hint(const DependencyTree& tree, std::size_t t) {
    const std::size_t n = tree.size();
    if (n < 2 || t > n - 2) {
        throw ContractViolation("extract_hint: position " + std::to_string(t) + " has no successor in a sentence of " +
                                std::to_string(n) + " tokens");
    }
    const int next = static_cast<int>(t + 1);
    // The ancestor chain is a path, so the first hit is the nearest one.
    for (int node = tree.heads[next]; node != DependencyTree::kRoot; node = tree.heads[node]) {
        if (node < next) return static_cast<std::size_t>(node);
    }
    return t;
}

HintTargets build_hint_targets(const DependencyTree& tree) {
    const std::size_t n = tree.size();
    if (n < 2) throw ContractViolation("build_hint_targets: need at least 2 tokens, got " + std::to_string(n));
    HintTargets out;
    out.target_index.assign(n, 0);
    out.row_valid.assign(n, false);
    std::vector<double> ys(n * n, 0.0);
    for (std::size_t t = 0; t + 1 < n; ++t) {
        out.target_index[t] = extract_hint(tree, t);
        out.row_valid[t] = true;
        ys[t * n + out.target_index[t]] = 1.0;
    }
    out.y_s = Tensor::from({n, n}, std::move(ys));
    return out;
}

PointerLoss pointer_loss(const Tensor& attention, const HintTargets& targets) {
    if (attention.rank() != 2 || attention.rows() != targets.size() || attention.cols() != targets.size()) {
        throw DimensionError("pointer_loss: attention " + to_string(attention.shape()) + " vs " +
                             std::to_string(targets.size()) + " targets");
    }
    PointerLoss out;
    out.no_valid_rows = std::none_of(targets.row_valid.begin(), targets.row_valid.end(), [](bool v) { return v; });
    out.value = selected_log_loss(attention, targets.target_index, targets.row_valid, kPointerLogEps);
    return out;
}

Tensor total_loss(const Tensor& lm_loss, const std::vector<Tensor>& pointer_losses, double lambda_p) {
    if (!(lambda_p >= 0)) throw ConfigError("lambda_p must be non-negative");
    if (pointer_losses.empty() || lambda_p == 0.0) return lm_loss;
    Tensor acc = pointer_losses.front();
    for (std::size_t i = 1; i < pointer_losses.size(); ++i) acc = add(acc, pointer_losses[i]);
    return add(lm_loss, scale(reshape(acc, lm_loss.shape()), lambda_p));
}

}  // namespace bet
