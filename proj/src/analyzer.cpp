#include "bet/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "bet/errors.hpp"

namespace bet {

namespace {

std::string format_value(const std::optional<double>& v) {
    if (!v) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", *v);
    return buf;
}

std::optional<double> parse_value(const std::string& field) {
    if (field == "NA") return std::nullopt;
    return std::stod(field);
}

}  // namespace

void RunningMoments::add(double x) {
    ++count_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_);
}

void RunningMoments::merge(const RunningMoments& other) {
    if (other.count_ == 0) return;
    if (count_ == 0) {
        *this = other;
        return;
    }
    const double n_a = static_cast<double>(count_), n_b = static_cast<double>(other.count_);
    const double total = n_a + n_b;
    const double delta = other.mean_ - mean_;
    mean_ += delta * n_b / total;
    m2_ += other.m2_ + delta * delta * n_a * n_b / total;
    count_ += other.count_;
}

void StatsAccumulator::add_matrix(const Tensor& attention, bool include_first_row) {
    if (attention.rank() != 2 || attention.rows() != attention.cols()) {
        throw DimensionError("attention statistics need a square matrix, got " + to_string(attention.shape()));
    }
    const std::size_t n = attention.rows();
    const auto a = attention.data();
    for (std::size_t i = include_first_row ? 0 : 1; i < n; ++i) {
        diag_.add(a[i * n + i]);
        for (std::size_t j = 0; j < i; ++j) lower_.add(a[i * n + j]);
    }
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
    diag_.merge(other.diag_);
    lower_.merge(other.lower_);
}

AttnStats StatsAccumulator::finish(std::size_t layer, std::optional<std::size_t> head) const {
    AttnStats s;
    s.layer = layer;
    s.head = head;
    s.diag_count = diag_.count();
    s.lower_count = lower_.count();
    if (s.diag_count) s.ca = diag_.mean();
    if (s.lower_count) {
        s.ha_mean = lower_.mean();
        s.ha_std = std::sqrt(std::max(0.0, lower_.population_variance()));
    }
    if (s.ca && s.ha_mean && *s.ha_mean > 0) s.ratio = *s.ca / *s.ha_mean;
    return s;
}

AttnStats matrix_stats(const Tensor& attention, bool include_first_row) {
    if (attention.size() == 0) throw ContractViolation("matrix_stats: empty attention matrix");
    StatsAccumulator acc;
    acc.add_matrix(attention, include_first_row);
    AttnStats s = acc.finish(0, std::nullopt);

    const double rows = static_cast<double>(include_first_row ? attention.rows() : attention.rows() - 1);
    const double mass = s.ca.value_or(0.0) * static_cast<double>(s.diag_count) +
                        s.ha_mean.value_or(0.0) * static_cast<double>(s.lower_count);
    if (std::abs(mass - rows) > 1e-9) {
        throw ContractViolation("matrix_stats: diagonal plus lower-triangle mass " + std::to_string(mass) +
                                " != " + std::to_string(rows) + "; matrix is not causal row-stochastic");
    }
    return s;
}

std::vector<AttnStats> corpus_stats(const Model& model, const std::vector<std::vector<int>>& sequences,
                                    const CorpusStatsOptions& options) {
    const auto& cfg = model.config();
    if (options.layer && *options.layer >= cfg.n_layers) {
        throw ContractViolation("layer " + std::to_string(*options.layer) + " out of range (model has " +
                                std::to_string(cfg.n_layers) + ")");
    }
    if (options.head && *options.head >= cfg.n_heads) {
        throw ContractViolation("head " + std::to_string(*options.head) + " out of range (model has " +
                                std::to_string(cfg.n_heads) + ")");
    }
    std::vector<std::vector<StatsAccumulator>> per_head(cfg.n_layers, std::vector<StatsAccumulator>(cfg.n_heads));
    std::vector<StatsAccumulator> averaged(cfg.n_layers);

    NoGradGuard no_grad;
    for (const auto& seq : sequences) {
        if (seq.empty()) continue;
        const auto fwd = model.forward(seq);
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            for (std::size_t h = 0; h < cfg.n_heads; ++h)
                per_head[l][h].add_matrix(fwd.traces[l][h].weights(), options.include_first_row);
            averaged[l].add_matrix(head_averaged_attention(fwd.traces[l]), options.include_first_row);
        }
    }

    std::vector<AttnStats> out;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        if (options.layer && *options.layer != l) continue;
        if (options.head_mode != HeadMode::Averaged) {
            for (std::size_t h = 0; h < cfg.n_heads; ++h) {
                if (options.head && *options.head != h) continue;
                out.push_back(per_head[l][h].finish(l, h));
            }
        }
        if (options.head_mode != HeadMode::PerHead) out.push_back(averaged[l].finish(l, std::nullopt));
    }
    return out;
}

std::vector<AttendedToken> top_attended(const Tensor& attention, const BoolMask& mask, std::size_t row,
                                        std::size_t k) {
    if (attention.rank() != 2) throw DimensionError("top_attended: expected a matrix");
    if (row >= attention.rows()) {
        throw ContractViolation("top_attended: row " + std::to_string(row) + " out of range for " +
                                to_string(attention.shape()));
    }
    if (k == 0) throw ContractViolation("top_attended: k must be at least 1");
    if (mask.rows() != attention.rows() || mask.cols() != attention.cols()) {
        throw DimensionError("top_attended: mask does not match attention");
    }
    std::vector<AttendedToken> cands;
    for (std::size_t j = 0; j < attention.cols(); ++j)
        if (mask.visible(row, j)) cands.push_back({j, attention.at(row, j)});
    std::stable_sort(cands.begin(), cands.end(),
                     [](const AttendedToken& a, const AttendedToken& b) { return a.weight > b.weight; });
    if (cands.size() > k) cands.resize(k);
    return cands;
}

std::vector<AttendedToken> top_attended(const Tensor& attention, std::size_t row, std::size_t k) {
    return top_attended(attention, BoolMask::causal(attention.rows()), row, k);
}

std::string emit_stats_report(const std::vector<AttnStats>& stats) {
    std::ostringstream out;
    out << kStatsCsvHeader << '\n';
    for (const auto& s : stats) {
        out << s.layer << ',' << (s.head ? std::to_string(*s.head) : std::string("avg")) << ','
            << format_value(s.ca) << ',' << format_value(s.ha_mean) << ',' << format_value(s.ha_std) << ','
            << format_value(s.ratio) << ',' << s.diag_count << ',' << s.lower_count << '\n';
    }
    return out.str();
}

std::vector<AttnStats> parse_stats_report(std::string_view csv) {
    std::istringstream in{std::string(csv)};
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line) || line != kStatsCsvHeader) throw ParseError("missing stats header", line_no);
    std::vector<AttnStats> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream fields(line);
        std::string cell;
        while (std::getline(fields, cell, ',')) f.push_back(cell);
        if (f.size() != 8) throw ParseError("expected 8 fields", line_no);
        try {
            AttnStats s;
            s.layer = std::stoul(f[0]);
            if (f[1] != "avg") s.head = std::stoul(f[1]);
            s.ca = parse_value(f[2]);
            s.ha_mean = parse_value(f[3]);
            s.ha_std = parse_value(f[4]);
            s.ratio = parse_value(f[5]);
            s.diag_count = std::stoul(f[6]);
            s.lower_count = std::stoul(f[7]);
            out.push_back(s);
        } catch (const std::logic_error&) {
            throw ParseError("malformed number", line_no);
        }
    }
    return out;
}

nlohmann::json top_attended_report(std::size_t sequence_id, std::size_t layer, std::size_t row,
                                   std::span<const std::string> tokens, const std::vector<AttendedToken>& top) {
    nlohmann::json doc;
    doc["sequence_id"] = sequence_id;
    doc["layer"] = layer;
    doc["row"] = row;
    doc["predicted_index"] = row + 1;
    doc["predicted_token"] = row + 1 < tokens.size() ? nlohmann::json(tokens[row + 1]) : nlohmann::json();
    auto& list = doc["top"] = nlohmann::json::array();
    for (const auto& t : top) {
        list.push_back({{"position", t.position},
                        {"token", t.position < tokens.size() ? tokens[t.position] : std::string()},
                        {"weight", t.weight}});
    }
    return doc;
}

}  // namespace bet
