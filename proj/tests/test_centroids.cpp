#include <doctest.h>

#include <stdexcept>
#include <vector>

#include "absparse/centroids.hpp"
#include "absparse/rng.hpp"
#include "test_util.hpp"

using namespace absparse;

namespace {

PagedKVCache cache_from_rows(const std::vector<std::vector<float>>& rows, std::size_t page_size,
                             std::size_t extra_capacity = 0) {
    PagedKVCache cache(1, rows[0].size(), page_size, rows.size() + extra_capacity);
    for (const auto& row : rows) cache.append(row, row);
    return cache;
}

}  // namespace

TEST_SUITE_BEGIN("centroids");

TEST_CASE("mean centroid of one block is the arithmetic mean") {
    PagedKVCache cache = cache_from_rows({{1.0f, 3.0f}, {3.0f, 1.0f}}, 2);
    const CentroidStore store =
        compute_block_centroids(cache, BlockAssignment::uniform(1, 2), CentroidMethod::kMean);
    REQUIRE(store.total_centroids() == 1);
    CHECK(store.values[0] == 2.0f);
    CHECK(store.values[1] == 2.0f);
}

TEST_CASE("maxmin centroid keeps per-channel extremes") {
    PagedKVCache cache = cache_from_rows({{1.0f, 3.0f}, {3.0f, 1.0f}}, 2);
    const CentroidStore store =
        compute_block_centroids(cache, BlockAssignment::uniform(1, 2), CentroidMethod::kMaxMin);
    CHECK(store.values[0] == 3.0f);
    CHECK(store.values[1] == 3.0f);
    CHECK(store.values_min[0] == 1.0f);
    CHECK(store.values_min[1] == 1.0f);
}

TEST_CASE("block size 1 with mean reproduces the keys exactly") {
    PagedKVCache cache = testutil::random_cache(2, 4, 1, 37, 5);
    const CentroidStore store =
        compute_block_centroids(cache, BlockAssignment::uniform(2, 1), CentroidMethod::kMean);
    REQUIRE(store.total_centroids() == 2 * 37);
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t t = 0; t < 37; ++t) {
            const float* key = cache.key_row(h, t);
            const float* c = store.centroid(h, t);
            for (std::size_t j = 0; j < 4; ++j) CHECK(c[j] == key[j]);
        }
    }
}

TEST_CASE("compute_block_centroids rejects an empty cache") {
    PagedKVCache cache(1, 2, 4, 8);
    CHECK_THROWS_AS(
        compute_block_centroids(cache, BlockAssignment::uniform(1, 4), CentroidMethod::kMean),
        std::invalid_argument);
}

TEST_CASE("build_offsets is the prefix sum of per-head ceil counts") {
    BlockAssignment assignment;
    assignment.block_sizes = {32, 64, 16};
    SUBCASE("seq_len 128") {
        const std::vector<std::size_t> offsets = build_offsets(128, assignment);
        CHECK(offsets == std::vector<std::size_t>{0, 4, 6, 14});
    }
    SUBCASE("seq_len 0") {
        const std::vector<std::size_t> offsets = build_offsets(0, assignment);
        CHECK(offsets == std::vector<std::size_t>{0, 0, 0, 0});
    }
    SUBCASE("trailing partial block counted") {
        BlockAssignment one;
        one.block_sizes = {32};
        const std::vector<std::size_t> offsets = build_offsets(100, one);
        CHECK(offsets == std::vector<std::size_t>{0, 4});
    }
}

TEST_CASE("offsets are non-decreasing and end at the total over random shapes") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t H = 1 + rng.bounded(6);
        BlockAssignment assignment;
        const std::size_t sizes[3] = {16, 32, 64};
        for (std::size_t h = 0; h < H; ++h) {
            assignment.block_sizes.push_back(sizes[rng.bounded(3)]);
        }
        const std::size_t n = rng.bounded(500);
        const auto offsets = build_offsets(n, assignment);
        REQUIRE(offsets.size() == H + 1);
        CHECK(offsets[0] == 0);
        std::size_t total = 0;
        for (std::size_t h = 0; h < H; ++h) {
            CHECK(offsets[h + 1] >= offsets[h]);
            total += (n + assignment.block_sizes[h] - 1) / assignment.block_sizes[h];
        }
        CHECK(offsets[H] == total);
    }
}

TEST_CASE("refresh recomputes a running tail mean") {
    // one block of B=2: [2,2] alone, then [4,4] joins -> mean [3,3]
    PagedKVCache cache = cache_from_rows({{2.0f, 2.0f}}, 2, 1);
    CentroidStore store =
        compute_block_centroids(cache, BlockAssignment::uniform(1, 2), CentroidMethod::kMean);
    CHECK(store.values[0] == 2.0f);
    const std::vector<float> next{4.0f, 4.0f};
    cache.append(next, next);
    refresh_tail_centroids(store, cache);
    REQUIRE(store.total_centroids() == 1);
    CHECK(store.values[0] == 3.0f);
    CHECK(store.values[1] == 3.0f);
    CHECK(store.seq_len == 2);
}

TEST_CASE("append crossing a block boundary adds one centroid") {
    PagedKVCache cache = testutil::random_cache(1, 2, 16, 32, 6, 1);
    CentroidStore store =
        compute_block_centroids(cache, BlockAssignment::uniform(1, 32), CentroidMethod::kMean);
    CHECK(store.num_centroids(0) == 1);
    const std::vector<float> row{1.0f, -1.0f};
    cache.append(row, row);
    refresh_tail_centroids(store, cache);
    CHECK(store.num_centroids(0) == 2);
    // the new block holds a single row, so its mean is that row
    CHECK(store.centroid(0, 1)[0] == 1.0f);
    CHECK(store.centroid(0, 1)[1] == -1.0f);
}

TEST_CASE("refresh rejects an out-of-range head") {
    PagedKVCache cache = testutil::random_cache(1, 2, 16, 20, 7);
    CentroidStore store =
        compute_block_centroids(cache, BlockAssignment::uniform(1, 16), CentroidMethod::kMean);
    CHECK_THROWS_AS(refresh_tail_centroid(store, cache, 1), std::out_of_range);
}

TEST_CASE("interleaved append+refresh equals a from-scratch rebuild elementwise") {
    for (const CentroidMethod method : {CentroidMethod::kMean, CentroidMethod::kMaxMin}) {
        for (const std::uint64_t seed : {41, 42, 43}) {
            Rng rng(seed);
            const std::size_t H = 3, d = 5;
            const std::size_t n0 = 1 + rng.bounded(90);
            const std::size_t steps = 1 + rng.bounded(150);
            BlockAssignment assignment;
            const std::size_t sizes[3] = {16, 32, 64};
            for (std::size_t h = 0; h < H; ++h) {
                assignment.block_sizes.push_back(sizes[rng.bounded(3)]);
            }
            PagedKVCache cache(H, d, 16, n0 + steps);
            for (std::size_t t = 0; t < n0; ++t) {
                const auto k = testutil::random_vec(rng, H * d);
                cache.append(k, k);
            }
            CentroidStore incremental = compute_block_centroids(cache, assignment, method);
            for (std::size_t s = 0; s < steps; ++s) {
                const auto k = testutil::random_vec(rng, H * d);
                cache.append(k, k);
                refresh_tail_centroids(incremental, cache);
            }
            const CentroidStore rebuilt = compute_block_centroids(cache, assignment, method);
            CHECK(incremental.offsets == rebuilt.offsets);
            CHECK(incremental.seq_len == rebuilt.seq_len);
            REQUIRE(incremental.values.size() == rebuilt.values.size());
            for (std::size_t i = 0; i < rebuilt.values.size(); ++i) {
                CHECK(incremental.values[i] == rebuilt.values[i]);
            }
            REQUIRE(incremental.values_min.size() == rebuilt.values_min.size());
            for (std::size_t i = 0; i < rebuilt.values_min.size(); ++i) {
                CHECK(incremental.values_min[i] == rebuilt.values_min[i]);
            }
        }
    }
}

TEST_CASE("mean centroids stay inside the per-channel min/max envelope") {
    PagedKVCache cache = testutil::random_cache(2, 6, 16, 210, 77);
    BlockAssignment assignment;
    assignment.block_sizes = {32, 64};
    const CentroidStore mean = compute_block_centroids(cache, assignment, CentroidMethod::kMean);
    const CentroidStore extremes =
        compute_block_centroids(cache, assignment, CentroidMethod::kMaxMin);
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t b = 0; b < mean.num_centroids(h); ++b) {
            for (std::size_t c = 0; c < 6; ++c) {
                CHECK(mean.centroid(h, b)[c] <= extremes.centroid(h, b)[c]);
                CHECK(mean.centroid(h, b)[c] >= extremes.centroid_min(h, b)[c]);
            }
        }
    }
}

TEST_CASE("maxmin max vector dominates min vector per channel") {
    PagedKVCache cache = testutil::random_cache(3, 4, 16, 130, 13);
    const CentroidStore store =
        compute_block_centroids(cache, BlockAssignment::uniform(3, 32), CentroidMethod::kMaxMin);
    for (std::size_t i = 0; i < store.values.size(); ++i) {
        CHECK(store.values[i] >= store.values_min[i]);
    }
}

TEST_SUITE_END();
