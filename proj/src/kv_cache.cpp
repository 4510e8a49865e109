#include "absparse/kv_cache.hpp"

#include <atomic>
#include <cstring>
#include <stdexcept>
#include <string>

namespace absparse {

namespace {
std::atomic<std::size_t> g_gather_copy_rows{0};

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }
}  // namespace

std::size_t gather_copy_rows() { return g_gather_copy_rows.load(); }
void reset_gather_copy_rows() { g_gather_copy_rows.store(0); }

PagedKVCache::PagedKVCache(std::size_t num_heads, std::size_t head_dim, std::size_t page_size,
                           std::size_t capacity_tokens)
    : num_heads_(num_heads), head_dim_(head_dim), page_size_(page_size),
      capacity_(capacity_tokens) {
    if (num_heads == 0 || head_dim == 0) {
        throw std::invalid_argument("PagedKVCache: num_heads and head_dim must be positive");
    }
    if (page_size == 0) {
        throw std::invalid_argument("PagedKVCache: page_size must be >= 1");
    }
    if (capacity_tokens == 0) {
        throw std::invalid_argument("PagedKVCache: capacity must be positive");
    }
    capacity_pages_ = ceil_div(capacity_, page_size_);
    key_pools_.resize(num_heads_);
    value_pools_.resize(num_heads_);
    page_tables_.resize(num_heads_);
    const std::size_t pool_floats = capacity_pages_ * page_size_ * head_dim_;
    for (std::size_t h = 0; h < num_heads_; ++h) {
        key_pools_[h].assign(pool_floats, 0.0f);   // zero-filled; partial pages stay zero
        value_pools_[h].assign(pool_floats, 0.0f);
        page_tables_[h].reserve(capacity_pages_);
    }
}

std::size_t PagedKVCache::append(std::span<const float> keys, std::span<const float> values) {
    if (keys.size() != num_heads_ * head_dim_ || values.size() != num_heads_ * head_dim_) {
        throw std::invalid_argument("append: expected num_heads * head_dim floats per tensor");
    }
    if (seq_len_ >= capacity_) {
        throw std::runtime_error("append: kv cache at capacity (" + std::to_string(capacity_) +
                                 " tokens)");
    }
    const std::size_t token = seq_len_;
    const std::size_t row = token % page_size_;
    if (row == 0) {
        // crossing a page boundary: hand out the next physical page per head
        const auto page_id = static_cast<std::uint32_t>(token / page_size_);
        for (std::size_t h = 0; h < num_heads_; ++h) {
            page_tables_[h].push_back(page_id);
        }
    }
    for (std::size_t h = 0; h < num_heads_; ++h) {
        const std::uint32_t page_id = page_tables_[h].back();
        float* kdst = key_pools_[h].data() + (static_cast<std::size_t>(page_id) * page_size_ + row) * head_dim_;
        float* vdst = value_pools_[h].data() + (static_cast<std::size_t>(page_id) * page_size_ + row) * head_dim_;
        std::memcpy(kdst, keys.data() + h * head_dim_, head_dim_ * sizeof(float));
        std::memcpy(vdst, values.data() + h * head_dim_, head_dim_ * sizeof(float));
    }
    ++seq_len_;
    return token;
}

std::size_t PagedKVCache::num_blocks(std::size_t block_size) const {
    if (block_size == 0) {
        throw std::invalid_argument("num_blocks: block_size must be positive");
    }
    return ceil_div(seq_len_, block_size);
}

const std::vector<std::uint32_t>& PagedKVCache::page_table(std::size_t head) const {
    if (head >= num_heads_) {
        throw std::out_of_range("page_table: head index out of range");
    }
    return page_tables_[head];
}

const float* PagedKVCache::key_page(std::size_t head, std::uint32_t page_id) const {
    return key_pools_[head].data() + static_cast<std::size_t>(page_id) * page_size_ * head_dim_;
}

const float* PagedKVCache::value_page(std::size_t head, std::uint32_t page_id) const {
    return value_pools_[head].data() + static_cast<std::size_t>(page_id) * page_size_ * head_dim_;
}

const float* PagedKVCache::key_row(std::size_t head, std::size_t token) const {
    if (head >= num_heads_ || token >= seq_len_) {
        throw std::out_of_range("key_row: head or token out of range");
    }
    const std::uint32_t page_id = page_tables_[head][token / page_size_];
    return key_page(head, page_id) + (token % page_size_) * head_dim_;
}

const float* PagedKVCache::value_row(std::size_t head, std::size_t token) const {
    if (head >= num_heads_ || token >= seq_len_) {
        throw std::out_of_range("value_row: head or token out of range");
    }
    const std::uint32_t page_id = page_tables_[head][token / page_size_];
    return value_page(head, page_id) + (token % page_size_) * head_dim_;
}

PageSpan PagedKVCache::block_span(std::size_t head, std::size_t block_index,
                                  std::size_t block_size) const {
    if (head >= num_heads_) {
        throw std::out_of_range("block_span: head index out of range");
    }
    return block_to_pages(block_index, block_size, page_size_, page_tables_[head], seq_len_, head);
}

PageSpan block_to_pages(std::size_t block_index, std::size_t block_size, std::size_t page_size,
                        const std::vector<std::uint32_t>& page_table, std::size_t seq_len,
                        std::size_t head) {
    if (block_size == 0 || page_size == 0 || block_size % page_size != 0) {
        throw std::invalid_argument("block_to_pages: block_size must be a positive multiple of page_size");
    }
    const std::size_t num_blocks = ceil_div(seq_len, block_size);
    if (block_index >= num_blocks) {
        throw std::out_of_range("block_to_pages: block index " + std::to_string(block_index) +
                                " out of range (have " + std::to_string(num_blocks) + " blocks)");
    }
    const std::size_t stride = block_size / page_size;
    const std::size_t first = block_index * stride;
    PageSpan span;
    span.head = head;
    span.valid_tokens = std::min(block_size, seq_len - block_index * block_size);
    const std::size_t last = std::min(first + stride, page_table.size());
    span.page_ids.assign(page_table.begin() + static_cast<std::ptrdiff_t>(first),
                         page_table.begin() + static_cast<std::ptrdiff_t>(last));
    return span;
}

GatheredBlock gather_block_naive(const PagedKVCache& cache, std::size_t head,
                                 std::size_t block_index, std::size_t block_size) {
    const PageSpan span = cache.block_span(head, block_index, block_size);
    const std::size_t d = cache.head_dim();
    const std::size_t page_size = cache.page_size();
    GatheredBlock out;
    out.rows = span.valid_tokens;
    out.keys.resize(out.rows * d);
    out.values.resize(out.rows * d);
    std::size_t row = 0;
    for (const std::uint32_t page_id : span.page_ids) {
        const std::size_t take = std::min(page_size, span.valid_tokens - row);
        std::memcpy(out.keys.data() + row * d, cache.key_page(head, page_id), take * d * sizeof(float));
        std::memcpy(out.values.data() + row * d, cache.value_page(head, page_id), take * d * sizeof(float));
        row += take;
        if (row == span.valid_tokens) break;
    }
    g_gather_copy_rows.fetch_add(out.rows);
    return out;
}

PagedKVCache init_cache(const EngineConfig& config, std::size_t capacity_tokens) {
    config.validate();
    if (capacity_tokens == 0) {
        throw std::invalid_argument("init_cache: capacity must be positive");
    }
    return PagedKVCache(config.num_heads, config.head_dim, config.page_size, capacity_tokens);
}

}  // namespace absparse
