#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "absparse/centroids.hpp"
#include "absparse/config.hpp"

namespace absparse {

// Integer-coded centroid store. Quantization is per (head, channel): the
// scale/zero-point for channel c of head h pool statistics over all of that
// head's centroids in channel c, matching the tight column-wise clustering of
// centroid values. maxmin stores quantize the max-array and min-array with
// independent parameters.
struct QuantizedCentroidStore {
    QuantSpec spec;
    CentroidMethod method = CentroidMethod::kMean;
    std::size_t num_heads = 0;
    std::size_t head_dim = 0;
    std::size_t seq_len = 0;
    BlockAssignment block_sizes;
    std::vector<std::size_t> offsets;

    std::vector<std::uint8_t> codes;      // one code per byte; maxmin max-array
    std::vector<std::uint8_t> codes_min;  // maxmin min-array
    std::vector<float> scales;            // num_heads * head_dim, strictly positive
    std::vector<float> zero_points;       // all zero when mode == symmetric
    std::vector<float> scales_min;
    std::vector<float> zero_points_min;

    std::size_t total_centroids() const { return offsets.back(); }
    std::size_t num_centroids(std::size_t head) const {
        return offsets[head + 1] - offsets[head];
    }
};

// Pure function of (store, spec): quantizing twice yields identical codes.
// Degenerate constant channels are handled by a 1e-8 scale floor and
// reconstruct exactly.
QuantizedCentroidStore quantize_store(const CentroidStore& store, const QuantSpec& spec);

// Re-derives layout and parameters of the given heads from the float store;
// used after decode-time tail refreshes, where an updated tail centroid can
// move a whole head's per-channel range. Heads not listed keep their codes,
// but their segment positions follow the store's offsets.
void requantize_heads(QuantizedCentroidStore& qstore, const CentroidStore& store,
                      std::span<const std::size_t> heads);

// Scalar dequantization primitive that the estimation kernel inlines.
// Asymmetric: zero_point + code * scale; symmetric: (code - mid) * scale.
// Throws on a code outside the spec's stored range.
float dequantize_value(std::uint8_t code, float scale, float zero_point, const QuantSpec& spec);

// Fused query-centroid importance score: the dot product of the query with
// the dequantized centroid, without materializing a dequantized store. For
// maxmin it is sum_j max(q_j * deq(max_j), q_j * deq(min_j)).
float quantized_score(std::span<const float> query, const QuantizedCentroidStore& store,
                      std::size_t head, std::size_t centroid_index);

}  // namespace absparse
