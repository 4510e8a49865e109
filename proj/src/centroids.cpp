#include "absparse/centroids.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace absparse {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Computes one block centroid over the block's valid rows, reading through
// the page table. Shared by the from-scratch build and the tail refresh so
// the two paths are bitwise identical.
void compute_one_centroid(const PagedKVCache& cache, std::size_t head, std::size_t block_index,
                          std::size_t block_size, CentroidMethod method, float* out_main,
                          float* out_min) {
    const std::size_t d = cache.head_dim();
    const std::size_t begin = block_index * block_size;
    const std::size_t end = std::min(begin + block_size, cache.seq_len());
    if (method == CentroidMethod::kMean) {
        std::vector<double> acc(d, 0.0);
        for (std::size_t t = begin; t < end; ++t) {
            const float* row = cache.key_row(head, t);
            for (std::size_t c = 0; c < d; ++c) acc[c] += row[c];
        }
        const double inv = 1.0 / static_cast<double>(end - begin);
        for (std::size_t c = 0; c < d; ++c) out_main[c] = static_cast<float>(acc[c] * inv);
    } else {
        std::fill_n(out_main, d, -std::numeric_limits<float>::infinity());
        std::fill_n(out_min, d, std::numeric_limits<float>::infinity());
        for (std::size_t t = begin; t < end; ++t) {
            const float* row = cache.key_row(head, t);
            for (std::size_t c = 0; c < d; ++c) {
                out_main[c] = std::max(out_main[c], row[c]);
                out_min[c] = std::min(out_min[c], row[c]);
            }
        }
    }
}

}  // namespace

BlockAssignment BlockAssignment::uniform(std::size_t num_heads, std::size_t block_size) {
    BlockAssignment a;
    a.block_sizes.assign(num_heads, block_size);
    return a;
}

double BlockAssignment::average_block_size() const {
    if (block_sizes.empty()) return 0.0;
    const std::size_t sum = std::accumulate(block_sizes.begin(), block_sizes.end(), std::size_t{0});
    return static_cast<double>(sum) / static_cast<double>(block_sizes.size());
}

void BlockAssignment::validate(const EngineConfig& config) const {
    if (block_sizes.size() != config.num_heads) {
        throw std::invalid_argument("assignment covers " + std::to_string(block_sizes.size()) +
                                    " heads, config has " + std::to_string(config.num_heads));
    }
    for (std::size_t h = 0; h < block_sizes.size(); ++h) {
        const std::size_t b = block_sizes[h];
        const auto& cands = config.candidate_block_sizes;
        if (std::find(cands.begin(), cands.end(), b) == cands.end()) {
            throw std::invalid_argument("head " + std::to_string(h) + ": block size " +
                                        std::to_string(b) + " is not a candidate");
        }
        if (b % config.page_size != 0) {
            throw std::invalid_argument("head " + std::to_string(h) + ": block size " +
                                        std::to_string(b) + " is not a multiple of page_size");
        }
    }
}

std::vector<std::size_t> build_offsets(std::size_t seq_len, const BlockAssignment& assignment) {
    std::vector<std::size_t> offsets(assignment.num_heads() + 1, 0);
    for (std::size_t h = 0; h < assignment.num_heads(); ++h) {
        offsets[h + 1] = offsets[h] + ceil_div(seq_len, assignment.block_sizes[h]);
    }
    return offsets;
}

CentroidStore compute_block_centroids(const PagedKVCache& cache, const BlockAssignment& assignment,
                                      CentroidMethod method) {
    if (cache.seq_len() == 0) {
        throw std::invalid_argument("compute_block_centroids: cache is empty");
    }
    if (assignment.num_heads() != cache.num_heads()) {
        throw std::invalid_argument("compute_block_centroids: assignment/cache head count mismatch");
    }
    CentroidStore store;
    store.method = method;
    store.num_heads = cache.num_heads();
    store.head_dim = cache.head_dim();
    store.seq_len = cache.seq_len();
    store.block_sizes = assignment;
    store.offsets = build_offsets(store.seq_len, assignment);
    const std::size_t d = store.head_dim;
    store.values.assign(store.total_centroids() * d, 0.0f);
    if (method == CentroidMethod::kMaxMin) {
        store.values_min.assign(store.total_centroids() * d, 0.0f);
    }

    #pragma omp parallel for schedule(dynamic)
    for (std::size_t h = 0; h < store.num_heads; ++h) {
        const std::size_t block_size = assignment.block_sizes[h];
        const std::size_t n_blocks = store.num_centroids(h);
        for (std::size_t b = 0; b < n_blocks; ++b) {
            float* main = store.values.data() + (store.offsets[h] + b) * d;
            float* lo = method == CentroidMethod::kMaxMin
                            ? store.values_min.data() + (store.offsets[h] + b) * d
                            : nullptr;
            compute_one_centroid(cache, h, b, block_size, method, main, lo);
        }
    }
    return store;
}

void refresh_tail_centroid(CentroidStore& store, const PagedKVCache& cache, std::size_t head) {
    if (head >= store.num_heads) {
        throw std::out_of_range("refresh_tail_centroid: head index out of range");
    }
    const std::size_t d = store.head_dim;
    const std::size_t block_size = store.block_sizes.block_sizes[head];
    const std::size_t n_new = ceil_div(cache.seq_len(), block_size);
    const std::size_t n_old = store.num_centroids(head);
    if (n_new < n_old) {
        throw std::invalid_argument("refresh_tail_centroid: cache shrank below store");
    }
    const std::size_t inserted = n_new - n_old;
    if (inserted > 0) {
        const auto at = static_cast<std::ptrdiff_t>((store.offsets[head] + n_old) * d);
        store.values.insert(store.values.begin() + at, inserted * d, 0.0f);
        if (store.method == CentroidMethod::kMaxMin) {
            store.values_min.insert(store.values_min.begin() + at, inserted * d, 0.0f);
        }
        for (std::size_t h = head + 1; h <= store.num_heads; ++h) {
            store.offsets[h] += inserted;
        }
    }
    if (n_new == 0) return;
    // recompute every block whose contents changed: the previous tail (if it
    // was partial) plus any newly started blocks
    std::size_t first_dirty = n_old;
    if (n_old > 0 && store.seq_len % block_size != 0) first_dirty = n_old - 1;
    for (std::size_t b = first_dirty; b < n_new; ++b) {
        float* main = store.values.data() + (store.offsets[head] + b) * d;
        float* lo = store.method == CentroidMethod::kMaxMin
                        ? store.values_min.data() + (store.offsets[head] + b) * d
                        : nullptr;
        compute_one_centroid(cache, head, b, block_size, store.method, main, lo);
    }
}

void refresh_tail_centroids(CentroidStore& store, const PagedKVCache& cache) {
    for (std::size_t h = 0; h < store.num_heads; ++h) {
        refresh_tail_centroid(store, cache, h);
    }
    store.seq_len = cache.seq_len();
}

}  // namespace absparse
