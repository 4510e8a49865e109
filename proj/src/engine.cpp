#include "absparse/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace absparse {

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::size_t head_of_flat_index(const std::vector<std::size_t>& offsets, std::size_t flat) {
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
    return static_cast<std::size_t>(it - offsets.begin()) - 1;
}

inline float centroid_score(const CentroidStore& store, const float* q, std::size_t flat) {
    const std::size_t d = store.head_dim;
    const float* hi = store.values.data() + flat * d;
    float acc = 0.0f;
    if (store.method == CentroidMethod::kMean) {
        for (std::size_t c = 0; c < d; ++c) acc += q[c] * hi[c];
    } else {
        const float* lo = store.values_min.data() + flat * d;
        for (std::size_t c = 0; c < d; ++c) acc += std::max(q[c] * hi[c], q[c] * lo[c]);
    }
    return acc;
}

inline float dequant(std::uint8_t code, float scale, float zero_point, const QuantSpec& spec,
                     int mid) {
    if (spec.mode == QuantMode::kAsymmetric) {
        return zero_point + static_cast<float>(code) * scale;
    }
    return static_cast<float>(static_cast<int>(code) - mid) * scale;
}

// Dequantization fused into the scoring loop; no dequantized centroid is
// materialized.
inline float centroid_score(const QuantizedCentroidStore& store, const float* q, std::size_t flat,
                            std::size_t head) {
    const std::size_t d = store.head_dim;
    const int mid = store.spec.sym_mid();
    const std::uint8_t* hi = store.codes.data() + flat * d;
    const float* sc = store.scales.data() + head * d;
    const float* zp = store.zero_points.data() + head * d;
    float acc = 0.0f;
    if (store.method == CentroidMethod::kMean) {
        for (std::size_t c = 0; c < d; ++c) {
            acc += q[c] * dequant(hi[c], sc[c], zp[c], store.spec, mid);
        }
    } else {
        const std::uint8_t* lo = store.codes_min.data() + flat * d;
        const float* sc_min = store.scales_min.data() + head * d;
        const float* zp_min = store.zero_points_min.data() + head * d;
        for (std::size_t c = 0; c < d; ++c) {
            const float a = q[c] * dequant(hi[c], sc[c], zp[c], store.spec, mid);
            const float b = q[c] * dequant(lo[c], sc_min[c], zp_min[c], store.spec, mid);
            acc += std::max(a, b);
        }
    }
    return acc;
}

template <typename Store>
void check_query(std::span<const float> query, const Store& store) {
    if (store.seq_len == 0) {
        throw std::invalid_argument("estimate_scores: store represents an empty sequence");
    }
    if (query.size() != store.num_heads * store.head_dim) {
        throw std::invalid_argument("estimate_scores: query dimension mismatch");
    }
}

template <typename Store>
std::vector<float> estimate_batched(std::span<const float> query, const Store& store) {
    check_query(query, store);
    const std::size_t total = store.total_centroids();
    const std::size_t d = store.head_dim;
    std::vector<float> scores(total);
    const float* qbase = query.data();
    const auto& offsets = store.offsets;
    #pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < total; ++i) {
        const std::size_t head = head_of_flat_index(offsets, i);
        if constexpr (std::is_same_v<Store, QuantizedCentroidStore>) {
            scores[i] = centroid_score(store, qbase + head * d, i, head);
        } else {
            scores[i] = centroid_score(store, qbase + head * d, i);
        }
    }
    return scores;
}

template <typename Store>
std::vector<float> estimate_per_head(std::span<const float> query, const Store& store) {
    check_query(query, store);
    const std::size_t d = store.head_dim;
    std::vector<float> scores(store.total_centroids());
    for (std::size_t h = 0; h < store.num_heads; ++h) {
        const float* q = query.data() + h * d;
        for (std::size_t i = store.offsets[h]; i < store.offsets[h + 1]; ++i) {
            if constexpr (std::is_same_v<Store, QuantizedCentroidStore>) {
                scores[i] = centroid_score(store, q, i, h);
            } else {
                scores[i] = centroid_score(store, q, i);
            }
        }
    }
    return scores;
}

enum class TopKMode { kPartialSort, kFullSort };

void select_head(const std::vector<float>& scores, const std::vector<std::size_t>& offsets,
                 std::size_t head, std::size_t num_blocks, std::size_t budget_blocks,
                 TopKMode mode, std::vector<std::size_t>& out) {
    const std::size_t base = offsets[head];
    const auto better = [&](std::size_t a, std::size_t b) {
        const float sa = scores[base + a];
        const float sb = scores[base + b];
        if (sa != sb) return sa > sb;
        return a < b;  // deterministic tie-break toward the lower block index
    };
    out.resize(num_blocks);
    std::iota(out.begin(), out.end(), std::size_t{0});
    if (num_blocks <= budget_blocks) {
        std::sort(out.begin(), out.end(), better);
        return;
    }
    if (mode == TopKMode::kPartialSort) {
        std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(budget_blocks),
                          out.end(), better);
    } else {
        std::sort(out.begin(), out.end(), better);
    }
    out.resize(budget_blocks);
    // the trailing block carries the current local context and is always kept
    const std::size_t trailing = num_blocks - 1;
    if (std::find(out.begin(), out.end(), trailing) == out.end()) {
        out.back() = trailing;
        std::sort(out.begin(), out.end(), better);
    }
}

SelectionResult select_impl(const std::vector<float>& scores,
                            const std::vector<std::size_t>& offsets,
                            const BlockAssignment& assignment, std::size_t seq_len,
                            std::size_t token_budget, TopKMode mode, bool parallel) {
    const std::size_t num_heads = assignment.num_heads();
    if (offsets.size() != num_heads + 1 || scores.size() != offsets.back()) {
        throw std::invalid_argument("select_topk: scores/offsets malformed");
    }
    if (offsets != build_offsets(seq_len, assignment)) {
        throw std::invalid_argument("select_topk: offsets inconsistent with seq_len/assignment");
    }
    if (token_budget == 0) {
        throw std::invalid_argument("select_topk: token budget must be positive");
    }
    SelectionResult sel;
    sel.num_heads = num_heads;
    sel.seq_len = seq_len;
    sel.block_sizes = assignment;
    sel.budget_blocks.resize(num_heads);
    sel.blocks.resize(num_heads);
    sel.page_spans.resize(num_heads);
    #pragma omp parallel for schedule(dynamic) if (parallel)
    for (std::size_t h = 0; h < num_heads; ++h) {
        const std::size_t n_blocks = offsets[h + 1] - offsets[h];
        sel.budget_blocks[h] = ceil_div(token_budget, assignment.block_sizes[h]);
        select_head(scores, offsets, h, n_blocks, sel.budget_blocks[h], mode, sel.blocks[h]);
    }
    return sel;
}

inline float dot_f32(const float* a, const float* b, std::size_t d) {
    float acc = 0.0f;
    for (std::size_t c = 0; c < d; ++c) acc += a[c] * b[c];
    return acc;
}

// Shared softmax-attend arithmetic: pass 1 collects logits through a row
// visitor, passes 2/3 are identical for the strided and gathered paths so
// the two stay numerically aligned.
template <typename KeyRowFn, typename ValueRowFn>
void attend_rows(const float* q, std::size_t d, std::size_t rows, float inv_sqrt_d,
                 KeyRowFn key_row, ValueRowFn value_row, float* out) {
    std::vector<float> w(rows);
    float max_logit = -std::numeric_limits<float>::infinity();
    for (std::size_t r = 0; r < rows; ++r) {
        const float z = dot_f32(q, key_row(r), d) * inv_sqrt_d;
        w[r] = z;
        max_logit = std::max(max_logit, z);
    }
    float denom = 0.0f;
    for (std::size_t r = 0; r < rows; ++r) {
        w[r] = std::exp(w[r] - max_logit);
        denom += w[r];
    }
    std::fill_n(out, d, 0.0f);
    for (std::size_t r = 0; r < rows; ++r) {
        const float a = w[r] / denom;
        const float* v = value_row(r);
        for (std::size_t c = 0; c < d; ++c) out[c] += a * v[c];
    }
}

void check_selection(const PagedKVCache& cache, const SelectionResult& selection,
                     std::span<const float> query, bool need_spans) {
    if (selection.num_heads != cache.num_heads()) {
        throw std::invalid_argument("sparse_attention: selection/cache head count mismatch");
    }
    if (selection.seq_len != cache.seq_len() || cache.seq_len() == 0) {
        throw std::invalid_argument("sparse_attention: selection/cache length mismatch");
    }
    if (query.size() != cache.num_heads() * cache.head_dim()) {
        throw std::invalid_argument("sparse_attention: query dimension mismatch");
    }
    for (std::size_t h = 0; h < selection.num_heads; ++h) {
        if (selection.blocks[h].empty()) {
            throw std::invalid_argument("sparse_attention: empty selection for head " +
                                        std::to_string(h));
        }
        if (need_spans && selection.page_spans[h].size() != selection.blocks[h].size()) {
            throw std::invalid_argument("sparse_attention: page spans not populated");
        }
    }
}

}  // namespace

std::vector<float> estimate_scores(std::span<const float> query, const CentroidStore& store) {
    return estimate_batched(query, store);
}

std::vector<float> estimate_scores(std::span<const float> query,
                                   const QuantizedCentroidStore& store) {
    return estimate_batched(query, store);
}

std::vector<float> estimate_scores_naive(std::span<const float> query,
                                         const CentroidStore& store) {
    return estimate_per_head(query, store);
}

std::vector<float> estimate_scores_naive(std::span<const float> query,
                                         const QuantizedCentroidStore& store) {
    return estimate_per_head(query, store);
}

SelectionResult select_topk(const std::vector<float>& scores,
                            const std::vector<std::size_t>& offsets,
                            const BlockAssignment& assignment, std::size_t seq_len,
                            std::size_t token_budget) {
    return select_impl(scores, offsets, assignment, seq_len, token_budget,
                       TopKMode::kPartialSort, true);
}

SelectionResult select_topk_naive(const std::vector<float>& scores,
                                  const std::vector<std::size_t>& offsets,
                                  const BlockAssignment& assignment, std::size_t seq_len,
                                  std::size_t token_budget) {
    return select_impl(scores, offsets, assignment, seq_len, token_budget, TopKMode::kFullSort,
                       false);
}

void populate_page_spans(SelectionResult& selection, const PagedKVCache& cache) {
    if (selection.seq_len != cache.seq_len()) {
        throw std::invalid_argument("populate_page_spans: selection/cache length mismatch");
    }
    for (std::size_t h = 0; h < selection.num_heads; ++h) {
        const std::size_t block_size = selection.block_sizes.block_sizes[h];
        selection.page_spans[h].clear();
        selection.page_spans[h].reserve(selection.blocks[h].size());
        for (const std::size_t b : selection.blocks[h]) {
            selection.page_spans[h].push_back(cache.block_span(h, b, block_size));
        }
    }
}

AttentionOutput sparse_attention(std::span<const float> query, const PagedKVCache& cache,
                                 const SelectionResult& selection) {
    check_selection(cache, selection, query, /*need_spans=*/true);
    const std::size_t d = cache.head_dim();
    const std::size_t page_size = cache.page_size();
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));
    AttentionOutput out;
    out.num_heads = cache.num_heads();
    out.head_dim = d;
    out.seq_len = cache.seq_len();
    out.output.assign(out.num_heads * d, 0.0f);
    #pragma omp parallel for schedule(dynamic)
    for (std::size_t h = 0; h < out.num_heads; ++h) {
        const auto& spans = selection.page_spans[h];
        std::size_t rows = 0;
        for (const auto& span : spans) rows += span.valid_tokens;
        // strided row lookup: (span, page, row-in-page) resolved per logical row
        struct RowRef {
            const float* key;
            const float* value;
        };
        std::vector<RowRef> refs;
        refs.reserve(rows);
        for (const auto& span : spans) {
            std::size_t taken = 0;
            for (const std::uint32_t page_id : span.page_ids) {
                const std::size_t take = std::min(page_size, span.valid_tokens - taken);
                const float* kp = cache.key_page(h, page_id);
                const float* vp = cache.value_page(h, page_id);
                for (std::size_t r = 0; r < take; ++r) {
                    refs.push_back({kp + r * d, vp + r * d});
                }
                taken += take;
                if (taken == span.valid_tokens) break;
            }
        }
        attend_rows(
            query.data() + h * d, d, refs.size(), inv_sqrt_d,
            [&](std::size_t r) { return refs[r].key; }, [&](std::size_t r) { return refs[r].value; },
            out.output.data() + h * d);
    }
    return out;
}

AttentionOutput sparse_attention_gather(std::span<const float> query, const PagedKVCache& cache,
                                        const SelectionResult& selection) {
    check_selection(cache, selection, query, /*need_spans=*/false);
    const std::size_t d = cache.head_dim();
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));
    AttentionOutput out;
    out.num_heads = cache.num_heads();
    out.head_dim = d;
    out.seq_len = cache.seq_len();
    out.output.assign(out.num_heads * d, 0.0f);
    for (std::size_t h = 0; h < out.num_heads; ++h) {
        std::vector<float> keys;
        std::vector<float> values;
        for (const std::size_t b : selection.blocks[h]) {
            GatheredBlock block =
                gather_block_naive(cache, h, b, selection.block_sizes.block_sizes[h]);
            keys.insert(keys.end(), block.keys.begin(), block.keys.end());
            values.insert(values.end(), block.values.begin(), block.values.end());
        }
        const std::size_t rows = keys.size() / d;
        attend_rows(
            query.data() + h * d, d, rows, inv_sqrt_d,
            [&](std::size_t r) { return keys.data() + r * d; },
            [&](std::size_t r) { return values.data() + r * d; }, out.output.data() + h * d);
    }
    return out;
}

AttentionOutput full_attention_oracle(std::span<const float> query, const PagedKVCache& cache) {
    if (cache.seq_len() == 0) {
        throw std::invalid_argument("full_attention_oracle: empty cache");
    }
    if (query.size() != cache.num_heads() * cache.head_dim()) {
        throw std::invalid_argument("full_attention_oracle: query dimension mismatch");
    }
    const std::size_t d = cache.head_dim();
    const std::size_t n = cache.seq_len();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    AttentionOutput out;
    out.num_heads = cache.num_heads();
    out.head_dim = d;
    out.seq_len = n;
    out.output.assign(out.num_heads * d, 0.0f);
    out.weights.assign(out.num_heads * n, 0.0);
    #pragma omp parallel for schedule(dynamic)
    for (std::size_t h = 0; h < out.num_heads; ++h) {
        const float* q = query.data() + h * d;
        double* w = out.weights.data() + h * n;
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < n; ++t) {
            const float* k = cache.key_row(h, t);
            double z = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                z += static_cast<double>(q[c]) * static_cast<double>(k[c]);
            }
            z *= inv_sqrt_d;
            w[t] = z;
            max_logit = std::max(max_logit, z);
        }
        double denom = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            w[t] = std::exp(w[t] - max_logit);
            denom += w[t];
        }
        std::vector<double> acc(d, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            w[t] /= denom;
            const float* v = cache.value_row(h, t);
            for (std::size_t c = 0; c < d; ++c) acc[c] += w[t] * static_cast<double>(v[c]);
        }
        float* o = out.output.data() + h * d;
        for (std::size_t c = 0; c < d; ++c) o[c] = static_cast<float>(acc[c]);
    }
    return out;
}

DecodeEngine::DecodeEngine(const EngineConfig& config, const BlockAssignment& assignment,
                           std::size_t capacity_tokens)
    : config_(config), assignment_(assignment),
      cache_(init_cache(config, capacity_tokens)) {
    assignment_.validate(config_);
    all_heads_.resize(config_.num_heads);
    std::iota(all_heads_.begin(), all_heads_.end(), std::size_t{0});
}

void DecodeEngine::prefill(std::span<const float> keys, std::span<const float> values,
                           std::size_t num_tokens) {
    if (prefilled_) throw std::logic_error("prefill: engine already prefilled");
    const std::size_t h_count = config_.num_heads;
    const std::size_t d = config_.head_dim;
    if (num_tokens == 0 || keys.size() < h_count * num_tokens * d ||
        values.size() < h_count * num_tokens * d) {
        throw std::invalid_argument("prefill: tensor smaller than num_tokens");
    }
    std::vector<float> krow(h_count * d);
    std::vector<float> vrow(h_count * d);
    const std::size_t head_stride = keys.size() / h_count;  // tokens available per head
    for (std::size_t t = 0; t < num_tokens; ++t) {
        for (std::size_t h = 0; h < h_count; ++h) {
            const float* ksrc = keys.data() + h * head_stride + t * d;
            const float* vsrc = values.data() + h * head_stride + t * d;
            std::copy_n(ksrc, d, krow.data() + h * d);
            std::copy_n(vsrc, d, vrow.data() + h * d);
        }
        cache_.append(krow, vrow);
    }
    store_ = compute_block_centroids(cache_, assignment_, config_.centroid_method);
    if (config_.quant) {
        qstore_ = quantize_store(store_, *config_.quant);
    }
    prefilled_ = true;
}

StepResult DecodeEngine::step(std::span<const float> keys, std::span<const float> values,
                              std::span<const float> query) {
    if (!prefilled_) throw std::logic_error("step: call prefill first");
    cache_.append(keys, values);
    refresh_tail_centroids(store_, cache_);
    if (qstore_) {
        requantize_heads(*qstore_, store_, all_heads_);
    }
    StepResult result;
    std::vector<float> scores =
        qstore_ ? estimate_scores(query, *qstore_) : estimate_scores(query, store_);
    result.selection = select_topk(scores, store_.offsets, assignment_, cache_.seq_len(),
                                   config_.token_budget);
    populate_page_spans(result.selection, cache_);
    if (cache_.seq_len() <= config_.token_budget) {
        result.output = full_attention_oracle(query, cache_);
        result.full_attention_fallback = true;
    } else {
        result.output = sparse_attention(query, cache_, result.selection);
    }
    return result;
}

}  // namespace absparse
