#include "absparse/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace absparse {

namespace {

constexpr float kRangeFloor = 1e-8f;  // keeps scale positive on constant channels

// Quantizes one head's segment: per-channel statistics pooled over the
// head's centroids, then codes. Deterministic given the segment, so the
// offline build and decode-time requantization agree bitwise.
void quantize_segment(const float* src, std::size_t n_centroids, std::size_t d,
                      const QuantSpec& spec, float* scales, float* zero_points,
                      std::uint8_t* codes) {
    const auto levels = static_cast<float>(spec.levels());
    const int mid = spec.sym_mid();
    for (std::size_t c = 0; c < d; ++c) {
        float scale;
        float zp;
        if (spec.mode == QuantMode::kAsymmetric) {
            float lo = src[c];
            float hi = src[c];
            for (std::size_t i = 1; i < n_centroids; ++i) {
                const float v = src[i * d + c];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            scale = std::max(hi - lo, kRangeFloor) / levels;
            zp = lo;
        } else {
            float absmax = 0.0f;
            for (std::size_t i = 0; i < n_centroids; ++i) {
                absmax = std::max(absmax, std::fabs(src[i * d + c]));
            }
            scale = std::max(absmax, kRangeFloor) / static_cast<float>(mid);
            zp = 0.0f;
        }
        scales[c] = scale;
        zero_points[c] = zp;
    }
    for (std::size_t i = 0; i < n_centroids; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            const float v = src[i * d + c];
            int q;
            if (spec.mode == QuantMode::kAsymmetric) {
                q = static_cast<int>(std::round((v - zero_points[c]) / scales[c]));
                q = std::clamp(q, 0, spec.levels());
            } else {
                q = static_cast<int>(std::round(v / scales[c]));
                q = std::clamp(q, -mid, mid) + mid;
            }
            codes[i * d + c] = static_cast<std::uint8_t>(q);
        }
    }
}

void quantize_one_head(QuantizedCentroidStore& q, const CentroidStore& store, std::size_t head) {
    const std::size_t d = store.head_dim;
    const std::size_t n = store.num_centroids(head);
    const std::size_t seg = store.offsets[head] * d;
    if (n == 0) return;
    quantize_segment(store.values.data() + seg, n, d, q.spec, q.scales.data() + head * d,
                     q.zero_points.data() + head * d, q.codes.data() + seg);
    if (store.method == CentroidMethod::kMaxMin) {
        quantize_segment(store.values_min.data() + seg, n, d, q.spec,
                         q.scales_min.data() + head * d, q.zero_points_min.data() + head * d,
                         q.codes_min.data() + seg);
    }
}

float dequant(std::uint8_t code, float scale, float zero_point, const QuantSpec& spec) {
    if (spec.mode == QuantMode::kAsymmetric) {
        return zero_point + static_cast<float>(code) * scale;
    }
    return static_cast<float>(static_cast<int>(code) - spec.sym_mid()) * scale;
}

}  // namespace

QuantizedCentroidStore quantize_store(const CentroidStore& store, const QuantSpec& spec) {
    spec.validate();
    if (store.total_centroids() == 0) {
        throw std::invalid_argument("quantize_store: centroid store is empty");
    }
    QuantizedCentroidStore q;
    q.spec = spec;
    q.method = store.method;
    q.num_heads = store.num_heads;
    q.head_dim = store.head_dim;
    q.seq_len = store.seq_len;
    q.block_sizes = store.block_sizes;
    q.offsets = store.offsets;
    const std::size_t d = store.head_dim;
    q.codes.assign(store.total_centroids() * d, 0);
    q.scales.assign(store.num_heads * d, 0.0f);
    q.zero_points.assign(store.num_heads * d, 0.0f);
    if (store.method == CentroidMethod::kMaxMin) {
        q.codes_min.assign(store.total_centroids() * d, 0);
        q.scales_min.assign(store.num_heads * d, 0.0f);
        q.zero_points_min.assign(store.num_heads * d, 0.0f);
    }
    #pragma omp parallel for schedule(dynamic)
    for (std::size_t h = 0; h < store.num_heads; ++h) {
        quantize_one_head(q, store, h);
    }
    return q;
}

void requantize_heads(QuantizedCentroidStore& qstore, const CentroidStore& store,
                      std::span<const std::size_t> heads) {
    const std::size_t d = store.head_dim;
    std::vector<bool> listed(store.num_heads, false);
    for (std::size_t h : heads) {
        if (h >= store.num_heads) {
            throw std::out_of_range("requantize_heads: head index out of range");
        }
        listed[h] = true;
    }
    if (qstore.offsets != store.offsets) {
        std::vector<std::uint8_t> codes(store.total_centroids() * d, 0);
        std::vector<std::uint8_t> codes_min(
            store.method == CentroidMethod::kMaxMin ? store.total_centroids() * d : 0, 0);
        for (std::size_t h = 0; h < store.num_heads; ++h) {
            if (listed[h]) continue;
            if (qstore.num_centroids(h) != store.num_centroids(h)) {
                throw std::invalid_argument("requantize_heads: head " + std::to_string(h) +
                                            " changed shape but was not listed");
            }
            const std::size_t n = store.num_centroids(h) * d;
            std::copy_n(qstore.codes.data() + qstore.offsets[h] * d, n,
                        codes.data() + store.offsets[h] * d);
            if (store.method == CentroidMethod::kMaxMin) {
                std::copy_n(qstore.codes_min.data() + qstore.offsets[h] * d, n,
                            codes_min.data() + store.offsets[h] * d);
            }
        }
        qstore.codes = std::move(codes);
        qstore.codes_min = std::move(codes_min);
        qstore.offsets = store.offsets;
    }
    qstore.seq_len = store.seq_len;
    qstore.block_sizes = store.block_sizes;
    for (std::size_t h = 0; h < store.num_heads; ++h) {
        if (listed[h]) quantize_one_head(qstore, store, h);
    }
}

float dequantize_value(std::uint8_t code, float scale, float zero_point, const QuantSpec& spec) {
    spec.validate();
    const int max_code = spec.mode == QuantMode::kAsymmetric ? spec.levels() : 2 * spec.sym_mid();
    if (static_cast<int>(code) > max_code) {
        throw std::out_of_range("dequantize_value: code " + std::to_string(code) +
                                " out of range for " + quant_spec_name(spec));
    }
    return dequant(code, scale, zero_point, spec);
}

float quantized_score(std::span<const float> query, const QuantizedCentroidStore& store,
                      std::size_t head, std::size_t centroid_index) {
    if (head >= store.num_heads) {
        throw std::out_of_range("quantized_score: head index out of range");
    }
    if (centroid_index >= store.num_centroids(head)) {
        throw std::out_of_range("quantized_score: centroid index out of range");
    }
    if (query.size() != store.head_dim) {
        throw std::invalid_argument("quantized_score: query dimension mismatch");
    }
    const std::size_t d = store.head_dim;
    const std::size_t base = (store.offsets[head] + centroid_index) * d;
    const float* sc = store.scales.data() + head * d;
    const float* zp = store.zero_points.data() + head * d;
    float acc = 0.0f;
    if (store.method == CentroidMethod::kMean) {
        for (std::size_t c = 0; c < d; ++c) {
            acc += query[c] * dequant(store.codes[base + c], sc[c], zp[c], store.spec);
        }
    } else {
        const float* sc_min = store.scales_min.data() + head * d;
        const float* zp_min = store.zero_points_min.data() + head * d;
        for (std::size_t c = 0; c < d; ++c) {
            const float hi = query[c] * dequant(store.codes[base + c], sc[c], zp[c], store.spec);
            const float lo =
                query[c] * dequant(store.codes_min[base + c], sc_min[c], zp_min[c], store.spec);
            acc += std::max(hi, lo);
        }
    }
    return acc;
}

}  // namespace absparse
