#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "absparse/config.hpp"

namespace absparse {

// Contiguous run of physical pages backing one logical block of one head.
struct PageSpan {
    std::size_t head = 0;
    std::vector<std::uint32_t> page_ids;  // ordered, stride = block_size / page_size entries
    std::size_t valid_tokens = 0;         // < block_size only for the trailing partial block
};

// Paged KV cache with uniform physical pages, one page pool per head.
//
// Layout per head: a preallocated pool of ceil(capacity / page_size) pages,
// each page holding page_size rows of head_dim floats. The page table lists
// physical page ids in logical order; pages are handed out sequentially, but
// every read goes through the table so the block-to-page stride mapping is
// exercised for real. Rows past seq_len stay zero-filled and are never read.
class PagedKVCache {
  public:
    PagedKVCache(std::size_t num_heads, std::size_t head_dim, std::size_t page_size,
                 std::size_t capacity_tokens);

    // keys/values: num_heads * head_dim floats, head-major. Returns the token
    // index written. Throws std::runtime_error once capacity is reached.
    std::size_t append(std::span<const float> keys, std::span<const float> values);

    std::size_t num_heads() const { return num_heads_; }
    std::size_t head_dim() const { return head_dim_; }
    std::size_t page_size() const { return page_size_; }
    std::size_t seq_len() const { return seq_len_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t num_blocks(std::size_t block_size) const;  // ceil(seq_len / block_size)

    const std::vector<std::uint32_t>& page_table(std::size_t head) const;

    // Raw page storage, page_size * head_dim floats per page.
    const float* key_page(std::size_t head, std::uint32_t page_id) const;
    const float* value_page(std::size_t head, std::uint32_t page_id) const;

    // Row accessors resolving a logical token index through the page table.
    const float* key_row(std::size_t head, std::size_t token) const;
    const float* value_row(std::size_t head, std::size_t token) const;

    // block_to_pages for this cache: the stride = block_size / page_size
    // consecutive page table entries covering the block, truncated at the
    // table end for the trailing partial block.
    PageSpan block_span(std::size_t head, std::size_t block_index, std::size_t block_size) const;

  private:
    std::size_t num_heads_;
    std::size_t head_dim_;
    std::size_t page_size_;
    std::size_t capacity_;
    std::size_t capacity_pages_;
    std::size_t seq_len_ = 0;
    std::vector<std::vector<float>> key_pools_;    // per head
    std::vector<std::vector<float>> value_pools_;  // per head
    std::vector<std::vector<std::uint32_t>> page_tables_;
};

// Validates config (page_size must divide every candidate block size) and
// returns an empty cache preallocated for capacity_tokens.
PagedKVCache init_cache(const EngineConfig& config, std::size_t capacity_tokens);

// Pure stride mapping used by PagedKVCache::block_span. Exposed for direct
// testing against the gather path.
PageSpan block_to_pages(std::size_t block_index, std::size_t block_size, std::size_t page_size,
                        const std::vector<std::uint32_t>& page_table, std::size_t seq_len,
                        std::size_t head);

// Materialized copy of a block's valid rows. Reference path only: the test
// oracle for the strided view and the naive-kernel baseline in benchmarks.
// Every call bumps the gather-copy counter by the number of rows copied.
struct GatheredBlock {
    std::vector<float> keys;    // rows * head_dim
    std::vector<float> values;  // rows * head_dim
    std::size_t rows = 0;
};
GatheredBlock gather_block_naive(const PagedKVCache& cache, std::size_t head,
                                 std::size_t block_index, std::size_t block_size);

// Instrumentation for the zero-copy claim on the strided attention path.
std::size_t gather_copy_rows();
void reset_gather_copy_rows();

}  // namespace absparse
