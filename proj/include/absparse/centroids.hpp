#pragma once

#include <cstddef>
#include <vector>

#include "absparse/config.hpp"
#include "absparse/kv_cache.hpp"

namespace absparse {

// Per-head block sizes B_h.
struct BlockAssignment {
    std::vector<std::size_t> block_sizes;

    static BlockAssignment uniform(std::size_t num_heads, std::size_t block_size);

    std::size_t num_heads() const { return block_sizes.size(); }
    double average_block_size() const;

    // Every B_h must be one of the config's candidates (and therefore a
    // multiple of page_size).
    void validate(const EngineConfig& config) const;
};

// offsets[0] = 0, offsets[h+1] = offsets[h] + ceil(seq_len / B_h)
std::vector<std::size_t> build_offsets(std::size_t seq_len, const BlockAssignment& assignment);

// Flattened per-head centroid segments delimited by a prefix-sum offsets
// array, so heads with different block sizes batch into one kernel pass
// without padding. The mean method stores one vector per block; maxmin stores
// two parallel arrays (per-channel max and min) sharing the same offsets.
struct CentroidStore {
    CentroidMethod method = CentroidMethod::kMean;
    std::size_t num_heads = 0;
    std::size_t head_dim = 0;
    std::size_t seq_len = 0;
    BlockAssignment block_sizes;
    std::vector<std::size_t> offsets;  // length num_heads + 1
    std::vector<float> values;         // mean centroids, or maxmin max-array
    std::vector<float> values_min;     // maxmin min-array; empty for mean

    std::size_t total_centroids() const { return offsets.back(); }
    std::size_t num_centroids(std::size_t head) const {
        return offsets[head + 1] - offsets[head];
    }
    const float* centroid(std::size_t head, std::size_t index) const {
        return values.data() + (offsets[head] + index) * head_dim;
    }
    const float* centroid_min(std::size_t head, std::size_t index) const {
        return values_min.data() + (offsets[head] + index) * head_dim;
    }
};

// Builds the full store from the cache contents. Trailing partial blocks use
// only their valid rows. Throws if the cache is empty.
CentroidStore compute_block_centroids(const PagedKVCache& cache, const BlockAssignment& assignment,
                                      CentroidMethod method);

// Decode-time maintenance: reconcile one head's segment with the cache after
// appends. Recomputes the centroid of the (possibly partial) trailing block
// and inserts new segment entries when new blocks started, shifting the
// offsets of all later heads. Does not touch store.seq_len; use
// refresh_tail_centroids to reconcile every head and sync it.
void refresh_tail_centroid(CentroidStore& store, const PagedKVCache& cache, std::size_t head);

void refresh_tail_centroids(CentroidStore& store, const PagedKVCache& cache);

}  // namespace absparse
