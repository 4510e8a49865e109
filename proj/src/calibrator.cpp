#include "absparse/calibrator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "absparse/quantizer.hpp"

namespace absparse {

namespace {

// One estimate -> select pass over a prepared store, honoring the configured
// quantization.
SelectionResult select_for_config(const PagedKVCache& cache, const CentroidStore& store,
                                  const BlockAssignment& assignment, const EngineConfig& config,
                                  std::span<const float> query) {
    std::vector<float> scores;
    if (config.quant) {
        const QuantizedCentroidStore qstore = quantize_store(store, *config.quant);
        scores = estimate_scores(query, qstore);
    } else {
        scores = estimate_scores(query, store);
    }
    return select_topk(scores, store.offsets, assignment, cache.seq_len(), config.token_budget);
}

void check_trace_dims(const Trace& trace, const EngineConfig& config, std::size_t index) {
    if (trace.num_heads != config.num_heads || trace.head_dim != config.head_dim) {
        throw std::invalid_argument("calibration sample " + std::to_string(index) +
                                    ": trace dimensions do not match the config");
    }
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

std::vector<double> attention_recall(const AttentionOutput& oracle,
                                     const SelectionResult& selection,
                                     const BlockAssignment& assignment) {
    if (oracle.weights.empty() || oracle.seq_len != selection.seq_len ||
        oracle.num_heads != selection.num_heads ||
        assignment.num_heads() != selection.num_heads) {
        throw std::invalid_argument("attention_recall: mismatched oracle/selection shapes");
    }
    const std::size_t n = oracle.seq_len;
    std::vector<double> recall(oracle.num_heads, 0.0);
    for (std::size_t h = 0; h < oracle.num_heads; ++h) {
        const std::size_t block_size = assignment.block_sizes[h];
        const std::size_t n_blocks = (n + block_size - 1) / block_size;
        std::vector<char> selected(n_blocks, 0);
        for (const std::size_t b : selection.blocks[h]) selected[b] = 1;
        const std::span<const double> w = oracle.head_weights(h);
        double acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            if (selected[t / block_size]) acc += w[t];
        }
        recall[h] = acc;
    }
    return recall;
}

RecallTable profile_sensitivity(const TraceProvider& provider, std::size_t sample_count,
                                const EngineConfig& config) {
    config.validate();
    if (sample_count == 0) {
        throw std::invalid_argument("profile_sensitivity: need at least one calibration sample");
    }
    RecallTable table;
    table.num_heads = config.num_heads;
    table.candidates = config.candidate_block_sizes;
    table.recalls.assign(config.num_heads * table.candidates.size(), 0.0);
    std::size_t used = 0;
    for (std::size_t i = 0; i < sample_count; ++i) {
        const Trace trace = provider(i);
        check_trace_dims(trace, config, i);
        if (trace.seq_len <= config.token_budget) {
            std::cerr << "profile_sensitivity: skipping sample " << i << " (seq_len "
                      << trace.seq_len << " <= budget " << config.token_budget
                      << ", recall is trivially 1)\n";
            continue;
        }
        const PagedKVCache cache = cache_from_trace(trace, config.page_size);
        const AttentionOutput oracle = full_attention_oracle(trace.queries, cache);
        for (std::size_t ci = 0; ci < table.candidates.size(); ++ci) {
            const BlockAssignment uniform =
                BlockAssignment::uniform(config.num_heads, table.candidates[ci]);
            const CentroidStore store =
                compute_block_centroids(cache, uniform, config.centroid_method);
            const SelectionResult sel =
                select_for_config(cache, store, uniform, config, trace.queries);
            const std::vector<double> recall = attention_recall(oracle, sel, uniform);
            for (std::size_t h = 0; h < config.num_heads; ++h) table.at(h, ci) += recall[h];
        }
        ++used;
    }
    if (used == 0) {
        throw std::runtime_error(
            "profile_sensitivity: no usable samples (every seq_len <= token_budget)");
    }
    for (double& r : table.recalls) r /= static_cast<double>(used);
    table.sample_count = used;
    return table;
}

BlockAssignment assign_block_sizes(const RecallTable& table, double tau) {
    if (table.candidates.empty() || table.num_heads == 0) {
        throw std::invalid_argument("assign_block_sizes: empty recall table");
    }
    if (!std::is_sorted(table.candidates.begin(), table.candidates.end())) {
        throw std::invalid_argument("assign_block_sizes: candidates must be ascending");
    }
    BlockAssignment assignment;
    assignment.block_sizes.resize(table.num_heads);
    for (std::size_t h = 0; h < table.num_heads; ++h) {
        const double peak = table.at(h, 0);
        if (peak <= 0.0) {
            throw std::invalid_argument("assign_block_sizes: head " + std::to_string(h) +
                                        " has zero recall at the minimum block size");
        }
        std::size_t best = table.candidates[0];  // B_min always well-defined
        for (std::size_t ci = 0; ci < table.candidates.size(); ++ci) {
            if (table.at(h, ci) >= tau * peak) {
                best = std::max(best, table.candidates[ci]);
            }
        }
        assignment.block_sizes[h] = best;
    }
    return assignment;
}

RecallTable normalized_recall(const RecallTable& table) {
    RecallTable out = table;
    for (std::size_t h = 0; h < table.num_heads; ++h) {
        const double peak = table.at(h, 0);
        if (peak <= 0.0) {
            throw std::invalid_argument("normalized_recall: zero recall at the minimum block size");
        }
        for (std::size_t ci = 0; ci < table.candidates.size(); ++ci) {
            out.at(h, ci) = table.at(h, ci) / peak;
        }
    }
    return out;
}

CalibrationReport make_report(const RecallTable& table, double tau) {
    CalibrationReport report;
    report.assignment = assign_block_sizes(table, tau);
    report.normalized_recalls = normalized_recall(table);
    report.min_block_sizes = report.assignment.block_sizes;
    report.avg_block_size = report.assignment.average_block_size();
    return report;
}

TransferReport transfer_check(const BlockAssignment& assignment, const TraceProvider& holdout,
                              std::size_t sample_count, const EngineConfig& config) {
    config.validate();
    assignment.validate(config);
    TransferReport report;
    report.candidates = config.candidate_block_sizes;
    report.uniform_recalls.assign(report.candidates.size(), 0.0);
    report.avg_block_size = assignment.average_block_size();
    std::size_t used = 0;
    for (std::size_t i = 0; i < sample_count; ++i) {
        const Trace trace = holdout(i);
        check_trace_dims(trace, config, i);
        if (trace.seq_len <= config.token_budget) {
            std::cerr << "transfer_check: skipping sample " << i << " (seq_len <= budget)\n";
            continue;
        }
        const PagedKVCache cache = cache_from_trace(trace, config.page_size);
        const AttentionOutput oracle = full_attention_oracle(trace.queries, cache);
        {
            const CentroidStore store =
                compute_block_centroids(cache, assignment, config.centroid_method);
            const SelectionResult sel =
                select_for_config(cache, store, assignment, config, trace.queries);
            const std::vector<double> recall = attention_recall(oracle, sel, assignment);
            for (const double r : recall) {
                report.adaptive_recall += r / static_cast<double>(config.num_heads);
            }
        }
        for (std::size_t ci = 0; ci < report.candidates.size(); ++ci) {
            const BlockAssignment uniform =
                BlockAssignment::uniform(config.num_heads, report.candidates[ci]);
            const CentroidStore store =
                compute_block_centroids(cache, uniform, config.centroid_method);
            const SelectionResult sel =
                select_for_config(cache, store, uniform, config, trace.queries);
            const std::vector<double> recall = attention_recall(oracle, sel, uniform);
            for (const double r : recall) {
                report.uniform_recalls[ci] += r / static_cast<double>(config.num_heads);
            }
        }
        ++used;
    }
    if (used == 0) {
        throw std::runtime_error("transfer_check: no usable holdout samples");
    }
    report.adaptive_recall /= static_cast<double>(used);
    for (double& r : report.uniform_recalls) r /= static_cast<double>(used);
    // uniform baseline at the matched average block size; ties go coarser
    std::size_t best_ci = 0;
    double best_gap = std::abs(static_cast<double>(report.candidates[0]) - report.avg_block_size);
    for (std::size_t ci = 1; ci < report.candidates.size(); ++ci) {
        const double gap =
            std::abs(static_cast<double>(report.candidates[ci]) - report.avg_block_size);
        if (gap <= best_gap) {
            best_gap = gap;
            best_ci = ci;
        }
    }
    report.matched_candidate = report.candidates[best_ci];
    report.delta = report.adaptive_recall - report.uniform_recalls[best_ci];
    return report;
}

std::vector<double> topk_page_recall_per_head(const SelectionResult& selected,
                                              const SelectionResult& reference) {
    if (selected.num_heads != reference.num_heads) {
        throw std::invalid_argument("topk_page_recall: head count mismatch");
    }
    std::vector<double> out(selected.num_heads, 0.0);
    for (std::size_t h = 0; h < selected.num_heads; ++h) {
        const std::set<std::size_t> ref(reference.blocks[h].begin(), reference.blocks[h].end());
        if (ref.empty()) {
            throw std::invalid_argument("topk_page_recall: empty reference selection");
        }
        std::size_t hit = 0;
        for (const std::size_t b : selected.blocks[h]) hit += ref.count(b);
        out[h] = static_cast<double>(hit) / static_cast<double>(ref.size());
    }
    return out;
}

double topk_page_recall(const SelectionResult& selected, const SelectionResult& reference) {
    const std::vector<double> per_head = topk_page_recall_per_head(selected, reference);
    double acc = 0.0;
    for (const double r : per_head) acc += r;
    return acc / static_cast<double>(per_head.size());
}

void write_recall_csv(const std::filesystem::path& path, const RecallTable& table,
                      const std::string& layer_tag) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_recall_csv: cannot open " + path.string());
    out << "head,layer,block_size,recall\n";
    for (std::size_t h = 0; h < table.num_heads; ++h) {
        for (std::size_t ci = 0; ci < table.candidates.size(); ++ci) {
            out << h << ',' << layer_tag << ',' << table.candidates[ci] << ','
                << format_double(table.at(h, ci)) << '\n';
        }
    }
}

void write_min_block_csv(const std::filesystem::path& path,
                         const std::vector<std::size_t>& min_block_sizes,
                         const std::string& layer_tag) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_min_block_csv: cannot open " + path.string());
    out << "head,layer,min_block_size\n";
    for (std::size_t h = 0; h < min_block_sizes.size(); ++h) {
        out << h << ',' << layer_tag << ',' << min_block_sizes[h] << '\n';
    }
}

void write_assignment_file(const std::filesystem::path& path, const BlockAssignment& assignment) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_assignment_file: cannot open " + path.string());
    for (std::size_t h = 0; h < assignment.num_heads(); ++h) {
        out << h << ' ' << assignment.block_sizes[h] << '\n';
    }
}

BlockAssignment read_assignment_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_assignment_file: cannot open " + path.string());
    BlockAssignment assignment;
    std::string line;
    std::size_t expected = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::size_t head = 0;
        std::size_t block = 0;
        if (!(row >> head >> block) || head != expected) {
            throw std::runtime_error("read_assignment_file: malformed line '" + line +
                                     "' (expected 'head block_size' with consecutive heads)");
        }
        std::string extra;
        if (row >> extra) {
            throw std::runtime_error("read_assignment_file: trailing tokens on line '" + line + "'");
        }
        assignment.block_sizes.push_back(block);
        ++expected;
    }
    if (assignment.block_sizes.empty()) {
        throw std::runtime_error("read_assignment_file: empty file " + path.string());
    }
    return assignment;
}

}  // namespace absparse
