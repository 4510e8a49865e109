#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "absparse/kv_cache.hpp"

namespace absparse {

enum class ProfileKind { kClustered, kScattered, kUniform };

// Controls where a head's critical (hot) tokens sit in the sequence:
// densely clustered runs, sparsely scattered singletons, or none.
struct HeadProfile {
    ProfileKind kind = ProfileKind::kUniform;
    std::size_t cluster_count = 0;
    std::size_t cluster_width = 0;
    std::size_t hot_token_count = 0;

    static HeadProfile clustered(std::size_t count, std::size_t width);
    static HeadProfile scattered(std::size_t hot_tokens);
    static HeadProfile uniform();
};

struct WorkloadSpec {
    std::size_t seq_len = 0;
    std::size_t num_heads = 0;
    std::size_t head_dim = 0;
    std::vector<HeadProfile> head_profiles;  // one per head
    double signal_strength = 8.0;            // logit gap between hot and cold tokens
    std::uint64_t seed = 0;
    // Scattered hot tokens keep at least this distance, so no block of this
    // size (or finer) ever captures two of them.
    std::size_t scatter_gap = 64;

    void validate() const;
};

// One decode sample: keys/values for the context plus one query per head.
// Tensors are head-major, token-major 32-bit floats.
struct Trace {
    std::uint32_t version = 1;
    std::size_t num_heads = 0;
    std::size_t head_dim = 0;
    std::size_t seq_len = 0;
    std::uint64_t seed = 0;
    std::vector<float> keys;     // num_heads * seq_len * head_dim
    std::vector<float> values;   // num_heads * seq_len * head_dim
    std::vector<float> queries;  // num_heads * head_dim

    bool operator==(const Trace&) const = default;
};

// Deterministic in spec.seed (per-head derived sub-seeds, so generation may
// run per head in parallel without changing a single byte). Hot keys point
// along the head's query direction with magnitude signal_strength plus small
// noise; cold keys and all values are isotropic standard noise.
Trace generate_synthetic(const WorkloadSpec& spec);

// Hot token positions the generator used for one head (test/debug hook).
std::vector<std::size_t> workload_hot_positions(const WorkloadSpec& spec, std::size_t head);

// Binary trace format, bit-exact round trip:
//   magic "ABSP" | u32 version | u32 num_heads | u32 head_dim | u64 seq_len |
//   u64 seed | keys | values | queries   (all little-endian)
void save_trace(const Trace& trace, const std::filesystem::path& path);
Trace load_trace(const std::filesystem::path& path);

// Appends the trace contents into a fresh cache with room for
// extra_capacity more tokens.
PagedKVCache cache_from_trace(const Trace& trace, std::size_t page_size,
                              std::size_t extra_capacity = 0);

}  // namespace absparse
