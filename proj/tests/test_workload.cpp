#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "absparse/calibrator.hpp"
#include "absparse/engine.hpp"
#include "absparse/workload.hpp"
#include "test_util.hpp"

using namespace absparse;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

WorkloadSpec base_spec(std::uint64_t seed) {
    WorkloadSpec spec;
    spec.seq_len = 512;
    spec.num_heads = 3;
    spec.head_dim = 16;
    spec.head_profiles = {HeadProfile::clustered(1, 64), HeadProfile::scattered(4),
                          HeadProfile::uniform()};
    spec.signal_strength = 8.0;
    spec.seed = seed;
    return spec;
}

// mean attention recall of an estimate->select pass at uniform block size B
double recall_at(const Trace& trace, std::size_t block_size, std::size_t budget) {
    const PagedKVCache cache = cache_from_trace(trace, 16);
    const BlockAssignment assignment = BlockAssignment::uniform(trace.num_heads, block_size);
    const CentroidStore store = compute_block_centroids(cache, assignment, CentroidMethod::kMean);
    const std::vector<float> scores = estimate_scores(trace.queries, store);
    const SelectionResult sel =
        select_topk(scores, store.offsets, assignment, cache.seq_len(), budget);
    const AttentionOutput oracle = full_attention_oracle(trace.queries, cache);
    const std::vector<double> recall = attention_recall(oracle, sel, assignment);
    double mean = 0.0;
    for (const double r : recall) mean += r / static_cast<double>(recall.size());
    return mean;
}

}  // namespace

TEST_SUITE_BEGIN("workload");

TEST_CASE("identical spec and seed give bitwise identical traces") {
    const Trace a = generate_synthetic(base_spec(99));
    const Trace b = generate_synthetic(base_spec(99));
    CHECK(a == b);
    const Trace c = generate_synthetic(base_spec(100));
    CHECK(a.keys != c.keys);
}

TEST_CASE("hot token placement respects profile structure") {
    WorkloadSpec spec = base_spec(7);
    SUBCASE("clustered tokens form contiguous runs") {
        const auto hot = workload_hot_positions(spec, 0);
        REQUIRE(hot.size() == 64);
        for (std::size_t i = 1; i < hot.size(); ++i) CHECK(hot[i] == hot[i - 1] + 1);
    }
    SUBCASE("scattered tokens stay at least one max-size block apart") {
        const auto hot = workload_hot_positions(spec, 1);
        REQUIRE(hot.size() == 4);
        for (std::size_t i = 1; i < hot.size(); ++i) CHECK(hot[i] - hot[i - 1] >= 64);
        CHECK(hot.back() < spec.seq_len);
    }
    SUBCASE("uniform heads have none") {
        CHECK(workload_hot_positions(spec, 2).empty());
    }
}

TEST_CASE("hot tokens that cannot fit raise an error") {
    WorkloadSpec spec = base_spec(8);
    spec.head_profiles[0] = HeadProfile::clustered(10, 64);  // 640 > 512
    CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
    spec = base_spec(8);
    spec.head_profiles[1] = HeadProfile::scattered(9);  // needs 8*64+1 > 512
    CHECK_THROWS_AS(generate_synthetic(spec), std::invalid_argument);
}

TEST_CASE("hot logits exceed cold logits by roughly signal_strength") {
    WorkloadSpec spec = base_spec(9);
    spec.seq_len = 1024;
    spec.head_profiles = {HeadProfile::scattered(8), HeadProfile::scattered(8),
                          HeadProfile::scattered(8)};
    const Trace trace = generate_synthetic(spec);
    const PagedKVCache cache = cache_from_trace(trace, 16);
    const AttentionOutput oracle = full_attention_oracle(trace.queries, cache);
    // hot tokens should dominate the attention mass
    for (std::size_t h = 0; h < 3; ++h) {
        const auto hot = workload_hot_positions(spec, h);
        double hot_mass = 0.0;
        for (const std::size_t t : hot) hot_mass += oracle.head_weights(h)[t];
        CHECK(hot_mass > 0.9);
    }
}

TEST_CASE("uniform workload: any budget-equal selection recalls about T/n") {
    WorkloadSpec spec = base_spec(10);
    spec.seq_len = 2048;
    spec.head_profiles.assign(3, HeadProfile::uniform());
    const Trace trace = generate_synthetic(spec);
    const double recall = recall_at(trace, 32, 256);
    // budget fraction is 1/8; structure-free attention keeps recall near it
    CHECK(recall > 0.06);
    CHECK(recall < 0.35);
}

TEST_CASE("one coarse block captures a cluster: recall survives B=64") {
    WorkloadSpec spec = base_spec(11);
    spec.seq_len = 2048;
    spec.head_profiles.assign(3, HeadProfile::clustered(1, 64));
    spec.signal_strength = 10.0;
    const Trace trace = generate_synthetic(spec);
    const double fine = recall_at(trace, 16, 256);
    const double coarse = recall_at(trace, 64, 256);
    CHECK(coarse >= 0.98 * fine);
}

TEST_CASE("scattered hot tokens: coarse blocks waste budget") {
    WorkloadSpec spec = base_spec(12);
    spec.seq_len = 8192;
    spec.num_heads = 2;
    spec.head_dim = 32;
    spec.head_profiles.assign(2, HeadProfile::scattered(128));
    spec.signal_strength = 10.0;
    const Trace trace = generate_synthetic(spec);
    const double fine = recall_at(trace, 16, 512);
    const double coarse = recall_at(trace, 64, 512);
    CHECK(fine > coarse);
}

TEST_CASE("save then load round-trips bitwise") {
    const Trace trace = generate_synthetic(base_spec(13));
    const auto path = temp_path("absparse_roundtrip.trace");
    save_trace(trace, path);
    const Trace loaded = load_trace(path);
    CHECK(loaded == trace);
    std::filesystem::remove(path);
}

TEST_CASE("truncated file names the missing section") {
    const Trace trace = generate_synthetic(base_spec(14));
    const auto path = temp_path("absparse_truncated.trace");
    save_trace(trace, path);
    const auto full_size = std::filesystem::file_size(path);
    // cut inside the values tensor
    std::filesystem::resize_file(path, full_size - trace.queries.size() * 4 - 10);
    try {
        load_trace(path);
        FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("values") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("wrong magic bytes raise a format error") {
    const auto path = temp_path("absparse_magic.trace");
    std::ofstream out(path, std::ios::binary);
    out << "NOPE" << std::string(64, '\0');
    out.close();
    try {
        load_trace(path);
        FAIL("expected a format error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("future format versions are rejected") {
    const Trace trace = generate_synthetic(base_spec(15));
    const auto path = temp_path("absparse_version.trace");
    save_trace(trace, path);
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const unsigned char version2[4] = {2, 0, 0, 0};
    f.write(reinterpret_cast<const char*>(version2), 4);
    f.close();
    try {
        load_trace(path);
        FAIL("expected a version error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST_CASE("cache_from_trace preserves rows exactly") {
    const Trace trace = generate_synthetic(base_spec(16));
    const PagedKVCache cache = cache_from_trace(trace, 16);
    REQUIRE(cache.seq_len() == trace.seq_len);
    for (std::size_t h = 0; h < trace.num_heads; ++h) {
        for (std::size_t t = 0; t < trace.seq_len; ++t) {
            const float* k = cache.key_row(h, t);
            for (std::size_t c = 0; c < trace.head_dim; ++c) {
                CHECK(k[c] == trace.keys[(h * trace.seq_len + t) * trace.head_dim + c]);
            }
        }
    }
}

TEST_SUITE_END();
