#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "absparse/calibrator.hpp"
#include "absparse/config.hpp"
#include "absparse/workload.hpp"

namespace absparse::cli {

// Full run configuration: engine settings plus the synthetic workload
// template and command defaults. Loaded from a flat key = value file;
// unknown and duplicate keys are rejected.
struct RunConfig {
    EngineConfig engine;
    std::size_t seq_len = 8192;
    std::vector<HeadProfile> head_profiles;  // sized to engine.num_heads
    double signal_strength = 8.0;
    std::size_t scatter_gap = 64;
    std::uint64_t seed = 42;
    std::size_t calibration_samples = 50;
    std::size_t holdout_samples = 20;
    std::size_t decode_steps = 32;

    WorkloadSpec workload_spec(std::uint64_t sample_seed) const;
    void validate() const;
};

RunConfig default_run_config();

// Command-line overrides applied on top of the config file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<double> tau;
    std::optional<std::size_t> budget;
    std::optional<std::string> quant;  // "none" or int{2,4,8}x{sym,asym}
};

RunConfig parse_config_file(const std::filesystem::path& path);
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const Overrides& overrides);

// "clustered(2,48)*8,scattered(96)*8" -> one profile per head. A single
// unrepeated entry broadcasts to all heads.
std::vector<HeadProfile> parse_head_profiles(const std::string& text, std::size_t num_heads);

// Seed families keep calibration, holdout and decode workloads disjoint
// while staying a pure function of (seed, family, index).
std::uint64_t family_seed(std::uint64_t base, std::uint64_t family, std::uint64_t index);
inline constexpr std::uint64_t kCalibrationFamily = 0;
inline constexpr std::uint64_t kHoldoutFamily = 1;
inline constexpr std::uint64_t kDecodeFamily = 2;

// "uniform:B" or a path to an assignment file.
BlockAssignment resolve_assignment(const std::string& spec, const EngineConfig& config);

// calibrate: writes assignment.txt, recall.csv, recall_normalized.csv and
// min_block_size.csv into out_dir.
void cmd_calibrate(const RunConfig& config, const std::filesystem::path& out_dir);

// decode: runs decode steps over the trailing decode_steps tokens of the
// trace (generated from the config when trace_path is empty), one engine per
// assignment spec, and writes per-step per-head recall to out_csv plus the
// raw outputs to <out_csv>.outputs.csv.
void cmd_decode(const RunConfig& config, const std::vector<std::string>& assignment_specs,
                const std::optional<std::filesystem::path>& trace_path,
                const std::optional<std::filesystem::path>& save_trace_path,
                const std::filesystem::path& out_csv);

// ablate-quant: Top-K page recall of every quantization spec against the
// full-precision selection, one CSV row per spec.
void cmd_ablate_quant(const RunConfig& config, const std::string& assignment_spec,
                      const std::optional<std::filesystem::path>& trace_path,
                      const std::filesystem::path& out_csv);

// bench: equal-output gates, then median-of-5 timings of batched vs naive
// estimation, batched vs sequential Top-K, and strided vs gather attention.
void cmd_bench(const RunConfig& config, const std::vector<std::size_t>& sizes,
               const std::filesystem::path& out_csv);

// Median wall time of fn over `reps` timed runs after `warmup` untimed ones.
double time_median_ms(const std::function<void()>& fn, int reps = 5, int warmup = 1);

}  // namespace absparse::cli
