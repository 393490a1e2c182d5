#pragma once

// Attention diagnostics: how much weight each query puts on itself (current
// attention, the diagonal) versus on earlier tokens (historical attention,
// the strict lower triangle), and the most attended positions of a row.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "bet/model.hpp"
#include "bet/tensor.hpp"

namespace bet {

// Mergeable count/mean/M2 accumulator (Chan et al. pairwise update).
class RunningMoments {
public:
    void add(double x);
    void merge(const RunningMoments& other);

    std::size_t count() const { return count_; }
    double mean() const { return mean_; }
    double population_variance() const { return count_ ? m2_ / static_cast<double>(count_) : 0.0; }

private:
    std::size_t count_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

struct AttnStats {
    std::size_t layer = 0;
    std::optional<std::size_t> head;  // nullopt = head-averaged row
    std::optional<double> ca;         // undefined when no diagonal entry was pooled
    std::optional<double> ha_mean;    // undefined when no lower entry was pooled
    std::optional<double> ha_std;
    std::optional<double> ratio;      // ca / ha_mean, undefined unless ha_mean > 0
    std::size_t diag_count = 0;
    std::size_t lower_count = 0;
};

class StatsAccumulator {
public:
    // Pools the diagonal and strict lower triangle of a causal attention
    // matrix. Row 0 is skipped when include_first_row is false.
    void add_matrix(const Tensor& attention, bool include_first_row = true);
    void merge(const StatsAccumulator& other);

    AttnStats finish(std::size_t layer, std::optional<std::size_t> head) const;

private:
    RunningMoments diag_;
    RunningMoments lower_;
};

// Also asserts the row-mass identity ca·diag_count + Σ lower = rows pooled
// (within 1e-9); a matrix that is not row-stochastic and causal is rejected.
AttnStats matrix_stats(const Tensor& attention, bool include_first_row = true);

enum class HeadMode { PerHead, Averaged, Both };

struct CorpusStatsOptions {
    std::optional<std::size_t> layer;  // nullopt = all layers
    std::optional<std::size_t> head;   // restricts per-head rows
    HeadMode head_mode = HeadMode::Both;
    bool include_first_row = true;
};

// Statistics pooled over every entry of every sequence (not a mean of
// per-sequence means). Each sequence is a list of input token ids.
std::vector<AttnStats> corpus_stats(const Model& model, const std::vector<std::vector<int>>& sequences,
                                    const CorpusStatsOptions& options = {});

struct AttendedToken {
    std::size_t position = 0;
    double weight = 0.0;
};

// Up to k visible positions of `row`, heaviest first, ties to the smaller
// position.
std::vector<AttendedToken> top_attended(const Tensor& attention, const BoolMask& mask, std::size_t row, std::size_t k);
std::vector<AttendedToken> top_attended(const Tensor& attention, std::size_t row, std::size_t k);

inline constexpr std::string_view kStatsCsvHeader = "layer,head,ca,ha_mean,ha_std,ratio,diag_count,lower_count";

std::string emit_stats_report(const std::vector<AttnStats>& stats);
std::vector<AttnStats> parse_stats_report(std::string_view csv);

// One report document for a single analyzed row.
nlohmann::json top_attended_report(std::size_t sequence_id, std::size_t layer, std::size_t row,
                                   std::span<const std::string> tokens, const std::vector<AttendedToken>& top);

}  // namespace bet
