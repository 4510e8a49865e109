#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace absparse {

enum class CentroidMethod { kMean, kMaxMin };

enum class QuantMode { kSymmetric, kAsymmetric };

// Integer coding of centroid stores. Codes are stored one per byte;
// bit-packing would sit behind the same interface.
struct QuantSpec {
    int bits = 4;                               // one of {2, 4, 8}
    QuantMode mode = QuantMode::kAsymmetric;

    int levels() const { return (1 << bits) - 1; }        // asymmetric code range [0, levels]
    int sym_mid() const { return (1 << (bits - 1)) - 1; } // stored-offset midpoint
    bool operator==(const QuantSpec&) const = default;

    void validate() const;
};

std::string quant_spec_name(const QuantSpec& spec);
QuantSpec parse_quant_spec(const std::string& name);          // "int4xasym" etc.
std::string centroid_method_name(CentroidMethod method);
CentroidMethod parse_centroid_method(const std::string& name);

// Engine-wide configuration. token_budget is the total number of tokens each
// head may attend to sparsely; per-head block counts derive from it as
// ceil(token_budget / block_size).
struct EngineConfig {
    std::size_t num_heads = 8;
    std::size_t head_dim = 64;
    std::size_t page_size = 16;
    std::vector<std::size_t> candidate_block_sizes = {16, 32, 64};
    std::size_t token_budget = 4096;
    double recall_threshold = 0.98;
    CentroidMethod centroid_method = CentroidMethod::kMean;
    std::optional<QuantSpec> quant;             // nullopt = full precision

    std::size_t min_candidate() const;
    std::size_t max_candidate() const;

    // Throws std::invalid_argument on any violated precondition, in
    // particular a page_size that does not divide some candidate block size.
    void validate() const;
};

}  // namespace absparse
