#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <vector>

#include "absparse/centroids.hpp"
#include "absparse/config.hpp"
#include "absparse/engine.hpp"
#include "absparse/workload.hpp"

namespace absparse {

// Mean attention recall per (head, candidate block size).
struct RecallTable {
    std::size_t num_heads = 0;
    std::vector<std::size_t> candidates;
    std::vector<double> recalls;  // num_heads x candidates, row-major
    std::size_t sample_count = 0;

    double at(std::size_t head, std::size_t candidate_index) const {
        return recalls[head * candidates.size() + candidate_index];
    }
    double& at(std::size_t head, std::size_t candidate_index) {
        return recalls[head * candidates.size() + candidate_index];
    }
};

struct CalibrationReport {
    BlockAssignment assignment;
    RecallTable normalized_recalls;
    std::vector<std::size_t> min_block_sizes;  // per-head coarsest size retaining tau * peak
    double avg_block_size = 0.0;
};

struct TransferReport {
    double adaptive_recall = 0.0;
    std::vector<std::size_t> candidates;
    std::vector<double> uniform_recalls;  // per candidate
    double avg_block_size = 0.0;
    std::size_t matched_candidate = 0;    // uniform baseline nearest the adaptive average
    double delta = 0.0;                   // adaptive minus matched uniform
};

// Fraction of total oracle attention mass falling on tokens inside the
// selected blocks, per head. The oracle output must carry weights.
std::vector<double> attention_recall(const AttentionOutput& oracle,
                                     const SelectionResult& selection,
                                     const BlockAssignment& assignment);

// Calibration samples are produced on demand (one materialized cache at a
// time; a 50-sample set of long contexts would not fit in memory otherwise).
using TraceProvider = std::function<Trace(std::size_t)>;

// For every candidate block size: build a uniform store over each sample's
// cache, run estimate -> select at the configured budget, and average
// per-head recall against the exact oracle. Samples with seq_len <=
// token_budget are skipped with a warning (their recall is trivially 1).
RecallTable profile_sensitivity(const TraceProvider& provider, std::size_t sample_count,
                                const EngineConfig& config);

// B_h* = max{ B : Recall(h, B) >= tau * Recall(h, B_min) }. Thresholds above
// 1 degenerate to B_min.
BlockAssignment assign_block_sizes(const RecallTable& table, double tau);

// Each row divided by its entry at the smallest candidate.
RecallTable normalized_recall(const RecallTable& table);

CalibrationReport make_report(const RecallTable& table, double tau);

// Holdout evaluation of an assignment against uniform baselines.
TransferReport transfer_check(const BlockAssignment& assignment, const TraceProvider& holdout,
                              std::size_t sample_count, const EngineConfig& config);

// Overlap |selected ∩ reference| / |reference| between block selections made
// under the same assignment, per head and averaged. With matched block sizes
// this equals Top-K page recall.
std::vector<double> topk_page_recall_per_head(const SelectionResult& selected,
                                              const SelectionResult& reference);
double topk_page_recall(const SelectionResult& selected, const SelectionResult& reference);

// CSV columns: head,layer,block_size,recall. The layer tag is a free-form
// label (single-layer runs write "0").
void write_recall_csv(const std::filesystem::path& path, const RecallTable& table,
                      const std::string& layer_tag);
void write_min_block_csv(const std::filesystem::path& path,
                         const std::vector<std::size_t>& min_block_sizes,
                         const std::string& layer_tag);

// Plain text, one "head_index block_size" line per head.
void write_assignment_file(const std::filesystem::path& path, const BlockAssignment& assignment);
BlockAssignment read_assignment_file(const std::filesystem::path& path);

}  // namespace absparse
