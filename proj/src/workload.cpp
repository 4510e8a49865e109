#include "absparse/workload.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "absparse/rng.hpp"

namespace absparse {

namespace {

constexpr char kMagic[4] = {'A', 'B', 'S', 'P'};
constexpr std::uint32_t kTraceVersion = 1;

// Sorted sample of `count` starts in [0, limit), spaced so that consecutive
// picks stay at least `spacing` apart after the shift trick.
std::vector<std::size_t> spaced_positions(Rng& rng, std::size_t count, std::size_t spacing,
                                          std::size_t seq_len) {
    const std::size_t needed = (count - 1) * spacing + 1;
    if (needed > seq_len) {
        throw std::invalid_argument("workload: " + std::to_string(count) +
                                    " hot positions with spacing " + std::to_string(spacing) +
                                    " do not fit in seq_len " + std::to_string(seq_len));
    }
    const std::size_t slack = seq_len - needed + 1;  // choices for each base point
    std::vector<std::size_t> base(count);
    for (auto& b : base) b = rng.bounded(slack);
    std::sort(base.begin(), base.end());
    for (std::size_t i = 0; i < count; ++i) base[i] += i * spacing;
    return base;
}

// Throws the placement errors up front so the parallel generation loop below
// never throws.
void check_profile_fits(const WorkloadSpec& spec, const HeadProfile& profile) {
    if (profile.kind == ProfileKind::kClustered) {
        const std::size_t total = profile.cluster_count * profile.cluster_width;
        if (total > spec.seq_len ||
            (profile.cluster_count - 1) * profile.cluster_width + profile.cluster_width >
                spec.seq_len) {
            throw std::invalid_argument("workload: clustered hot tokens exceed seq_len");
        }
    } else if (profile.kind == ProfileKind::kScattered) {
        if ((profile.hot_token_count - 1) * spec.scatter_gap + 1 > spec.seq_len) {
            throw std::invalid_argument("workload: scattered hot tokens exceed seq_len at gap " +
                                        std::to_string(spec.scatter_gap));
        }
    }
}

struct HeadPlan {
    std::vector<float> direction;        // unit hot direction (empty for uniform heads)
    std::vector<std::size_t> hot;        // sorted hot token positions
};

// Replays the exact per-head stream prefix: direction first, positions next.
HeadPlan plan_head(const WorkloadSpec& spec, std::size_t head, Rng& rng) {
    const HeadProfile& profile = spec.head_profiles[head];
    HeadPlan plan;
    const std::size_t d = spec.head_dim;
    plan.direction.resize(d);
    double norm_sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        plan.direction[c] = static_cast<float>(rng.gaussian());
        norm_sq += static_cast<double>(plan.direction[c]) * plan.direction[c];
    }
    const auto inv_norm = static_cast<float>(1.0 / std::sqrt(norm_sq));
    for (auto& x : plan.direction) x *= inv_norm;
    switch (profile.kind) {
        case ProfileKind::kClustered: {
            const std::size_t total = profile.cluster_count * profile.cluster_width;
            if (total > spec.seq_len) {
                throw std::invalid_argument("workload: clustered hot tokens exceed seq_len");
            }
            std::vector<std::size_t> starts = spaced_positions(
                rng, profile.cluster_count, profile.cluster_width, spec.seq_len - profile.cluster_width + 1);
            for (const std::size_t s : starts) {
                for (std::size_t i = 0; i < profile.cluster_width; ++i) plan.hot.push_back(s + i);
            }
            break;
        }
        case ProfileKind::kScattered:
            plan.hot = spaced_positions(rng, profile.hot_token_count, spec.scatter_gap, spec.seq_len);
            break;
        case ProfileKind::kUniform:
            break;
    }
    return plan;
}

void write_bytes(std::ofstream& out, const void* data, std::size_t size,
                 const std::filesystem::path& path) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) {
        throw std::runtime_error("save_trace: write failed for " + path.string());
    }
}

void write_u32(std::ofstream& out, std::uint32_t v, const std::filesystem::path& path) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    write_bytes(out, b, 4, path);
}

void write_u64(std::ofstream& out, std::uint64_t v, const std::filesystem::path& path) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(out, b, 8, path);
}

void write_f32_array(std::ofstream& out, const std::vector<float>& data,
                     const std::filesystem::path& path) {
    for (const float x : data) {
        write_u32(out, std::bit_cast<std::uint32_t>(x), path);
    }
}

void read_bytes(std::ifstream& in, void* data, std::size_t size, const std::string& section) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (in.gcount() != static_cast<std::streamsize>(size)) {
        throw std::runtime_error("load_trace: truncated file in section '" + section + "'");
    }
}

std::uint32_t read_u32(std::ifstream& in, const std::string& section) {
    unsigned char b[4];
    read_bytes(in, b, 4, section);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::ifstream& in, const std::string& section) {
    std::uint64_t v = 0;
    unsigned char b[8];
    read_bytes(in, b, 8, section);
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void read_f32_array(std::ifstream& in, std::vector<float>& data, std::size_t count,
                    const std::string& section) {
    data.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        data[i] = std::bit_cast<float>(read_u32(in, section));
    }
}

}  // namespace

HeadProfile HeadProfile::clustered(std::size_t count, std::size_t width) {
    HeadProfile p;
    p.kind = ProfileKind::kClustered;
    p.cluster_count = count;
    p.cluster_width = width;
    return p;
}

HeadProfile HeadProfile::scattered(std::size_t hot_tokens) {
    HeadProfile p;
    p.kind = ProfileKind::kScattered;
    p.hot_token_count = hot_tokens;
    return p;
}

HeadProfile HeadProfile::uniform() { return HeadProfile{}; }

void WorkloadSpec::validate() const {
    if (seq_len == 0 || num_heads == 0 || head_dim == 0) {
        throw std::invalid_argument("workload spec: dimensions must be positive");
    }
    if (head_profiles.size() != num_heads) {
        throw std::invalid_argument("workload spec: need one head profile per head");
    }
    if (signal_strength <= 0.0) {
        throw std::invalid_argument("workload spec: signal_strength must be positive");
    }
    for (const HeadProfile& p : head_profiles) {
        if (p.kind == ProfileKind::kClustered && (p.cluster_count == 0 || p.cluster_width == 0)) {
            throw std::invalid_argument("workload spec: clustered profile needs count and width >= 1");
        }
        if (p.kind == ProfileKind::kScattered && p.hot_token_count == 0) {
            throw std::invalid_argument("workload spec: scattered profile needs hot_token_count >= 1");
        }
    }
}

Trace generate_synthetic(const WorkloadSpec& spec) {
    spec.validate();
    const std::size_t n = spec.seq_len;
    const std::size_t d = spec.head_dim;
    const std::size_t h_count = spec.num_heads;
    Trace trace;
    trace.version = kTraceVersion;
    trace.num_heads = h_count;
    trace.head_dim = d;
    trace.seq_len = n;
    trace.seed = spec.seed;
    trace.keys.resize(h_count * n * d);
    trace.values.resize(h_count * n * d);
    trace.queries.resize(h_count * d);
    for (const HeadProfile& profile : spec.head_profiles) {
        check_profile_fits(spec, profile);
    }

    #pragma omp parallel for schedule(dynamic)
    for (std::size_t h = 0; h < h_count; ++h) {
        Rng rng(mix_seed(spec.seed, h));
        const HeadPlan plan = plan_head(spec, h, rng);
        const bool has_hot = spec.head_profiles[h].kind != ProfileKind::kUniform;
        const auto signal = static_cast<float>(spec.signal_strength);
        float* keys = trace.keys.data() + h * n * d;
        float* values = trace.values.data() + h * n * d;
        float* query = trace.queries.data() + h * d;

        std::size_t next_hot = 0;
        for (std::size_t t = 0; t < n; ++t) {
            float* row = keys + t * d;
            const bool hot = next_hot < plan.hot.size() && plan.hot[next_hot] == t;
            if (hot) ++next_hot;
            if (hot) {
                for (std::size_t c = 0; c < d; ++c) {
                    row[c] = plan.direction[c] * signal +
                             0.1f * static_cast<float>(rng.gaussian());
                }
            } else {
                for (std::size_t c = 0; c < d; ++c) {
                    row[c] = static_cast<float>(rng.gaussian());
                }
            }
        }
        for (std::size_t i = 0; i < n * d; ++i) {
            values[i] = static_cast<float>(rng.gaussian());
        }
        if (has_hot) {
            // query aligned with the hot direction; |q| = sqrt(d) keeps cold
            // logits ~ N(0,1) and the hot-cold gap ~ signal_strength
            const auto scale = static_cast<float>(std::sqrt(static_cast<double>(d)));
            for (std::size_t c = 0; c < d; ++c) query[c] = plan.direction[c] * scale;
        } else {
            for (std::size_t c = 0; c < d; ++c) query[c] = static_cast<float>(rng.gaussian());
        }
    }
    return trace;
}

std::vector<std::size_t> workload_hot_positions(const WorkloadSpec& spec, std::size_t head) {
    spec.validate();
    if (head >= spec.num_heads) {
        throw std::out_of_range("workload_hot_positions: head index out of range");
    }
    Rng rng(mix_seed(spec.seed, head));
    return plan_head(spec, head, rng).hot;
}

void save_trace(const Trace& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("save_trace: cannot open " + path.string());
    }
    write_bytes(out, kMagic, 4, path);
    write_u32(out, trace.version, path);
    write_u32(out, static_cast<std::uint32_t>(trace.num_heads), path);
    write_u32(out, static_cast<std::uint32_t>(trace.head_dim), path);
    write_u64(out, trace.seq_len, path);
    write_u64(out, trace.seed, path);
    write_f32_array(out, trace.keys, path);
    write_f32_array(out, trace.values, path);
    write_f32_array(out, trace.queries, path);
}

Trace load_trace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("load_trace: cannot open " + path.string());
    }
    char magic[4];
    read_bytes(in, magic, 4, "header");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("load_trace: format error, bad magic bytes");
    }
    Trace trace;
    trace.version = read_u32(in, "header");
    if (trace.version != kTraceVersion) {
        throw std::runtime_error("load_trace: version mismatch (file " +
                                 std::to_string(trace.version) + ", expected " +
                                 std::to_string(kTraceVersion) + ")");
    }
    trace.num_heads = read_u32(in, "header");
    trace.head_dim = read_u32(in, "header");
    trace.seq_len = read_u64(in, "header");
    trace.seed = read_u64(in, "header");
    if (trace.num_heads == 0 || trace.head_dim == 0 || trace.seq_len == 0) {
        throw std::runtime_error("load_trace: dimension inconsistency in header");
    }
    const std::size_t per_tensor = trace.num_heads * trace.seq_len * trace.head_dim;
    read_f32_array(in, trace.keys, per_tensor, "keys");
    read_f32_array(in, trace.values, per_tensor, "values");
    read_f32_array(in, trace.queries, trace.num_heads * trace.head_dim, "queries");
    in.peek();
    if (!in.eof()) {
        throw std::runtime_error("load_trace: trailing bytes after queries section");
    }
    return trace;
}

PagedKVCache cache_from_trace(const Trace& trace, std::size_t page_size,
                              std::size_t extra_capacity) {
    PagedKVCache cache(trace.num_heads, trace.head_dim, page_size,
                       trace.seq_len + extra_capacity);
    const std::size_t d = trace.head_dim;
    std::vector<float> krow(trace.num_heads * d);
    std::vector<float> vrow(trace.num_heads * d);
    for (std::size_t t = 0; t < trace.seq_len; ++t) {
        for (std::size_t h = 0; h < trace.num_heads; ++h) {
            const float* ksrc = trace.keys.data() + (h * trace.seq_len + t) * d;
            const float* vsrc = trace.values.data() + (h * trace.seq_len + t) * d;
            std::copy_n(ksrc, d, krow.data() + h * d);
            std::copy_n(vsrc, d, vrow.data() + h * d);
        }
        cache.append(krow, vrow);
    }
    return cache;
}

}  // namespace absparse
