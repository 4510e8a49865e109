#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "absparse/centroids.hpp"
#include "absparse/config.hpp"
#include "absparse/kv_cache.hpp"
#include "absparse/quantizer.hpp"

namespace absparse {

// Per-head Top-K selection under a shared token budget T. K_h = ceil(T / B_h)
// varies inversely with the assigned block size, so every head attends to the
// same number of tokens.
struct SelectionResult {
    std::size_t num_heads = 0;
    std::size_t seq_len = 0;
    BlockAssignment block_sizes;
    std::vector<std::size_t> budget_blocks;             // K_h per head
    std::vector<std::vector<std::size_t>> blocks;       // selected indices, score-descending
    std::vector<std::vector<PageSpan>> page_spans;      // parallel to blocks once populated
};

struct AttentionOutput {
    std::size_t num_heads = 0;
    std::size_t head_dim = 0;
    std::size_t seq_len = 0;
    std::vector<float> output;    // num_heads * head_dim
    std::vector<double> weights;  // oracle only: per-token softmax weights, num_heads * seq_len

    const float* head_output(std::size_t head) const { return output.data() + head * head_dim; }
    std::span<const double> head_weights(std::size_t head) const {
        return {weights.data() + head * seq_len, seq_len};
    }
};

// -- Kernel 1: segmented query-centroid estimation ---------------------------
//
// One flattened pass over all heads' centroid segments (OpenMP across the
// flat index). Scores are raw q . c dot products: the 1/sqrt(d) factor and
// softmax are monotone, so Top-K selection is unchanged without them. The
// *_naive variants loop over heads sequentially and exist as the reference
// and benchmark baseline.
std::vector<float> estimate_scores(std::span<const float> query, const CentroidStore& store);
std::vector<float> estimate_scores(std::span<const float> query,
                                   const QuantizedCentroidStore& store);
std::vector<float> estimate_scores_naive(std::span<const float> query, const CentroidStore& store);
std::vector<float> estimate_scores_naive(std::span<const float> query,
                                         const QuantizedCentroidStore& store);

// -- Kernel 2: budgeted per-head Top-K ---------------------------------------
//
// Selects the K_h highest-scoring blocks per head (all blocks when N_h <=
// K_h). The trailing block is always included and counted against K_h; ties
// break toward the lower block index. select_topk runs heads in parallel,
// select_topk_naive sequentially with a full sort; both return identical
// selections.
SelectionResult select_topk(const std::vector<float>& scores,
                            const std::vector<std::size_t>& offsets,
                            const BlockAssignment& assignment, std::size_t seq_len,
                            std::size_t token_budget);
SelectionResult select_topk_naive(const std::vector<float>& scores,
                                  const std::vector<std::size_t>& offsets,
                                  const BlockAssignment& assignment, std::size_t seq_len,
                                  std::size_t token_budget);

// Resolves each selected block to its physical pages.
void populate_page_spans(SelectionResult& selection, const PagedKVCache& cache);

// -- Kernel 3: heterogeneous paged attention ---------------------------------
//
// Softmax attention (max-subtracted, fp32) restricted to the selected blocks,
// reading K/V through page spans with no gather. sparse_attention_gather is
// the naive baseline: it materializes selected blocks contiguously first
// (bumping the gather-copy counter), then runs the same arithmetic.
AttentionOutput sparse_attention(std::span<const float> query, const PagedKVCache& cache,
                                 const SelectionResult& selection);
AttentionOutput sparse_attention_gather(std::span<const float> query, const PagedKVCache& cache,
                                        const SelectionResult& selection);

// Exact attention over all tokens with 64-bit accumulation, returning the
// full per-token weight vector per head for recall computation.
AttentionOutput full_attention_oracle(std::span<const float> query, const PagedKVCache& cache);

// -- Decode orchestration ----------------------------------------------------

struct StepResult {
    AttentionOutput output;
    SelectionResult selection;
    bool full_attention_fallback = false;
};

// Owns the cache, centroid store and (optionally) its quantized mirror, and
// runs the estimate -> select -> attend pipeline per decoding step. While
// seq_len <= token_budget the output falls back to the exact oracle.
class DecodeEngine {
  public:
    DecodeEngine(const EngineConfig& config, const BlockAssignment& assignment,
                 std::size_t capacity_tokens);

    // keys/values in head-major [head][token][channel] order; builds the
    // centroid store once over the prefilled cache.
    void prefill(std::span<const float> keys, std::span<const float> values,
                 std::size_t num_tokens);

    // keys/values/query hold num_heads * head_dim floats each.
    StepResult step(std::span<const float> keys, std::span<const float> values,
                    std::span<const float> query);

    const EngineConfig& config() const { return config_; }
    const BlockAssignment& assignment() const { return assignment_; }
    const PagedKVCache& cache() const { return cache_; }
    const CentroidStore& centroids() const { return store_; }
    const QuantizedCentroidStore* quantized() const {
        return qstore_ ? &*qstore_ : nullptr;
    }

  private:
    EngineConfig config_;
    BlockAssignment assignment_;
    PagedKVCache cache_;
    CentroidStore store_;
    std::optional<QuantizedCentroidStore> qstore_;
    std::vector<std::size_t> all_heads_;
    bool prefilled_ = false;
};

}  // namespace absparse
