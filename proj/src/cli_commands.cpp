#include "absparse/cli_commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "absparse/engine.hpp"
#include "absparse/quantizer.hpp"
#include "absparse/rng.hpp"

namespace absparse::cli {

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string format_float(float v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_top_level(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string current;
    int depth = 0;
    for (const char ch : text) {
        if (ch == '(') ++depth;
        if (ch == ')') --depth;
        if (ch == sep && depth == 0) {
            parts.push_back(trim(current));
            current.clear();
        } else {
            current.push_back(ch);
        }
    }
    parts.push_back(trim(current));
    return parts;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected an unsigned integer, got '" +
                                    value + "'");
    }
}

double parse_double_value(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected a number, got '" + value +
                                    "'");
    }
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    for (const std::string& part : split_top_level(value, ',')) {
        out.push_back(parse_size(key, part));
    }
    return out;
}

void apply_quant_string(EngineConfig& engine, const std::string& value) {
    if (value == "none") {
        engine.quant.reset();
    } else {
        engine.quant = parse_quant_spec(value);
    }
}

struct BenchCase {
    std::string op;
    std::string path;
    double median_ms = 0.0;
};

void sink(const void* p) { asm volatile("" : : "g"(p) : "memory"); }

}  // namespace

std::uint64_t family_seed(std::uint64_t base, std::uint64_t family, std::uint64_t index) {
    return mix_seed(mix_seed(base, family), index);
}

WorkloadSpec RunConfig::workload_spec(std::uint64_t sample_seed) const {
    WorkloadSpec spec;
    spec.seq_len = seq_len;
    spec.num_heads = engine.num_heads;
    spec.head_dim = engine.head_dim;
    spec.head_profiles = head_profiles;
    spec.signal_strength = signal_strength;
    spec.seed = sample_seed;
    spec.scatter_gap = scatter_gap;
    return spec;
}

void RunConfig::validate() const {
    engine.validate();
    workload_spec(0).validate();
    if (calibration_samples == 0) {
        throw std::invalid_argument("calibration_samples must be >= 1");
    }
    if (holdout_samples == 0) {
        throw std::invalid_argument("holdout_samples must be >= 1");
    }
    if (decode_steps == 0 || decode_steps >= seq_len) {
        throw std::invalid_argument("decode_steps must be in [1, seq_len)");
    }
}

RunConfig default_run_config() {
    RunConfig config;
    config.engine.num_heads = 16;
    config.engine.head_dim = 64;
    config.engine.token_budget = 512;
    config.head_profiles =
        parse_head_profiles("clustered(2,48)*8,scattered(96)*8", config.engine.num_heads);
    config.signal_strength = 8.0;
    return config;
}

std::vector<HeadProfile> parse_head_profiles(const std::string& text, std::size_t num_heads) {
    std::vector<HeadProfile> profiles;
    const std::vector<std::string> entries = split_top_level(text, ',');
    for (const std::string& raw : entries) {
        if (raw.empty()) {
            throw std::invalid_argument("head_profiles: empty entry");
        }
        std::string body = raw;
        std::size_t repeat = 1;
        if (const auto star = raw.rfind('*'); star != std::string::npos && raw.find(')', star) == std::string::npos) {
            body = trim(raw.substr(0, star));
            repeat = parse_size("head_profiles repeat", trim(raw.substr(star + 1)));
            if (repeat == 0) throw std::invalid_argument("head_profiles: repeat must be >= 1");
        }
        HeadProfile profile;
        if (body == "uniform") {
            profile = HeadProfile::uniform();
        } else if (body.starts_with("clustered(") && body.ends_with(")")) {
            const std::string args = body.substr(10, body.size() - 11);
            const std::vector<std::string> parts = split_top_level(args, ',');
            if (parts.size() != 2) {
                throw std::invalid_argument("head_profiles: clustered(count,width) takes two args");
            }
            profile = HeadProfile::clustered(parse_size("clustered count", parts[0]),
                                             parse_size("clustered width", parts[1]));
        } else if (body.starts_with("scattered(") && body.ends_with(")")) {
            const std::string args = body.substr(10, body.size() - 11);
            profile = HeadProfile::scattered(parse_size("scattered hot tokens", args));
        } else {
            throw std::invalid_argument("head_profiles: unknown entry '" + body + "'");
        }
        for (std::size_t i = 0; i < repeat; ++i) profiles.push_back(profile);
    }
    if (profiles.size() == 1 && num_heads > 1) {
        profiles.assign(num_heads, profiles[0]);
    }
    if (profiles.size() != num_heads) {
        throw std::invalid_argument("head_profiles: " + std::to_string(profiles.size()) +
                                    " entries for " + std::to_string(num_heads) + " heads");
    }
    return profiles;
}

RunConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("config: cannot open " + path.string());
    }
    RunConfig config = default_run_config();
    std::map<std::string, std::string> seen;
    std::string profiles_text;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": empty key or value");
        }
        if (!seen.emplace(key, value).second) {
            throw std::invalid_argument("config: duplicate key '" + key + "'");
        }
        if (key == "num_heads") {
            config.engine.num_heads = parse_size(key, value);
        } else if (key == "head_dim") {
            config.engine.head_dim = parse_size(key, value);
        } else if (key == "page_size") {
            config.engine.page_size = parse_size(key, value);
        } else if (key == "candidate_block_sizes") {
            config.engine.candidate_block_sizes = parse_size_list(key, value);
        } else if (key == "token_budget") {
            config.engine.token_budget = parse_size(key, value);
        } else if (key == "recall_threshold") {
            config.engine.recall_threshold = parse_double_value(key, value);
        } else if (key == "centroid_method") {
            config.engine.centroid_method = parse_centroid_method(value);
        } else if (key == "quant") {
            apply_quant_string(config.engine, value);
        } else if (key == "seq_len") {
            config.seq_len = parse_size(key, value);
        } else if (key == "signal_strength") {
            config.signal_strength = parse_double_value(key, value);
        } else if (key == "head_profiles") {
            profiles_text = value;
        } else if (key == "scatter_gap") {
            config.scatter_gap = parse_size(key, value);
        } else if (key == "seed") {
            config.seed = parse_size(key, value);
        } else if (key == "calibration_samples") {
            config.calibration_samples = parse_size(key, value);
        } else if (key == "holdout_samples") {
            config.holdout_samples = parse_size(key, value);
        } else if (key == "decode_steps") {
            config.decode_steps = parse_size(key, value);
        } else {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    if (!profiles_text.empty()) {
        config.head_profiles = parse_head_profiles(profiles_text, config.engine.num_heads);
    } else if (config.head_profiles.size() != config.engine.num_heads) {
        config.head_profiles.assign(config.engine.num_heads, HeadProfile::uniform());
    }
    return config;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const Overrides& overrides) {
    RunConfig config = path ? parse_config_file(*path) : default_run_config();
    if (overrides.seed) config.seed = *overrides.seed;
    if (overrides.tau) config.engine.recall_threshold = *overrides.tau;
    if (overrides.budget) config.engine.token_budget = *overrides.budget;
    if (overrides.quant) apply_quant_string(config.engine, *overrides.quant);
    config.validate();
    return config;
}

BlockAssignment resolve_assignment(const std::string& spec, const EngineConfig& config) {
    BlockAssignment assignment;
    if (spec.starts_with("uniform:")) {
        const std::size_t block = parse_size("assignment", spec.substr(8));
        assignment = BlockAssignment::uniform(config.num_heads, block);
    } else {
        assignment = read_assignment_file(spec);
    }
    assignment.validate(config);
    return assignment;
}

void cmd_calibrate(const RunConfig& config, const std::filesystem::path& out_dir) {
    config.validate();
    std::filesystem::create_directories(out_dir);
    const TraceProvider provider = [&config](std::size_t i) {
        return generate_synthetic(
            config.workload_spec(family_seed(config.seed, kCalibrationFamily, i)));
    };
    const RecallTable table =
        profile_sensitivity(provider, config.calibration_samples, config.engine);
    const CalibrationReport report = make_report(table, config.engine.recall_threshold);
    write_assignment_file(out_dir / "assignment.txt", report.assignment);
    write_recall_csv(out_dir / "recall.csv", table, "0");
    write_recall_csv(out_dir / "recall_normalized.csv", report.normalized_recalls, "0");
    write_min_block_csv(out_dir / "min_block_size.csv", report.min_block_sizes, "0");
    std::cout << "calibrate: " << table.num_heads << " heads, " << table.sample_count
              << " samples, tau " << format_double(config.engine.recall_threshold)
              << ", average block size " << format_double(report.avg_block_size) << "\n";
}

void cmd_decode(const RunConfig& config, const std::vector<std::string>& assignment_specs,
                const std::optional<std::filesystem::path>& trace_path,
                const std::optional<std::filesystem::path>& save_trace_path,
                const std::filesystem::path& out_csv) {
    config.validate();
    if (assignment_specs.empty()) {
        throw std::invalid_argument("decode: need at least one --assignment");
    }
    Trace trace = trace_path ? load_trace(*trace_path)
                             : generate_synthetic(config.workload_spec(
                                   family_seed(config.seed, kDecodeFamily, 0)));
    if (trace.num_heads != config.engine.num_heads || trace.head_dim != config.engine.head_dim) {
        throw std::invalid_argument("decode: trace dimensions (" + std::to_string(trace.num_heads) +
                                    " heads, dim " + std::to_string(trace.head_dim) +
                                    ") do not match the config");
    }
    if (save_trace_path) save_trace(trace, *save_trace_path);
    if (config.decode_steps >= trace.seq_len) {
        throw std::invalid_argument("decode: decode_steps must be smaller than the trace length");
    }
    const std::size_t prefill_count = trace.seq_len - config.decode_steps;
    const std::size_t h_count = trace.num_heads;
    const std::size_t d = trace.head_dim;

    std::ofstream recall_out(out_csv, std::ios::trunc);
    if (!recall_out) throw std::runtime_error("decode: cannot open " + out_csv.string());
    std::filesystem::path outputs_path = out_csv;
    outputs_path.replace_extension(".outputs.csv");
    std::ofstream values_out(outputs_path, std::ios::trunc);
    if (!values_out) throw std::runtime_error("decode: cannot open " + outputs_path.string());
    recall_out << "assignment,step,head,block_size,recall\n";
    values_out << "assignment,step,head,channel,value\n";

    std::vector<float> krow(h_count * d);
    std::vector<float> vrow(h_count * d);
    for (const std::string& spec : assignment_specs) {
        const BlockAssignment assignment = resolve_assignment(spec, config.engine);
        DecodeEngine engine(config.engine, assignment, trace.seq_len);
        engine.prefill(trace.keys, trace.values, prefill_count);
        for (std::size_t s = 0; s < config.decode_steps; ++s) {
            const std::size_t t = prefill_count + s;
            for (std::size_t h = 0; h < h_count; ++h) {
                std::copy_n(trace.keys.data() + (h * trace.seq_len + t) * d, d,
                            krow.data() + h * d);
                std::copy_n(trace.values.data() + (h * trace.seq_len + t) * d, d,
                            vrow.data() + h * d);
            }
            const StepResult result = engine.step(krow, vrow, trace.queries);
            const AttentionOutput oracle = full_attention_oracle(trace.queries, engine.cache());
            const std::vector<double> recalls =
                attention_recall(oracle, result.selection, assignment);
            for (std::size_t h = 0; h < h_count; ++h) {
                recall_out << spec << ',' << s << ',' << h << ',' << assignment.block_sizes[h]
                           << ',' << format_double(recalls[h]) << '\n';
                for (std::size_t c = 0; c < d; ++c) {
                    values_out << spec << ',' << s << ',' << h << ',' << c << ','
                               << format_float(result.output.output[h * d + c]) << '\n';
                }
            }
        }
    }
    std::cout << "decode: " << assignment_specs.size() << " assignment(s), "
              << config.decode_steps << " steps, reports in " << out_csv.string() << "\n";
}

void cmd_ablate_quant(const RunConfig& config, const std::string& assignment_spec,
                      const std::optional<std::filesystem::path>& trace_path,
                      const std::filesystem::path& out_csv) {
    config.validate();
    const Trace trace = trace_path ? load_trace(*trace_path)
                                   : generate_synthetic(config.workload_spec(
                                         family_seed(config.seed, kDecodeFamily, 0)));
    if (trace.num_heads != config.engine.num_heads || trace.head_dim != config.engine.head_dim) {
        throw std::invalid_argument("ablate-quant: trace dimensions do not match the config");
    }
    std::string spec_text = assignment_spec;
    if (spec_text.empty()) {
        const auto& cands = config.engine.candidate_block_sizes;
        spec_text = "uniform:" + std::to_string(cands[(cands.size() - 1) / 2]);
    }
    const BlockAssignment assignment = resolve_assignment(spec_text, config.engine);
    const PagedKVCache cache = cache_from_trace(trace, config.engine.page_size);
    const CentroidStore store =
        compute_block_centroids(cache, assignment, config.engine.centroid_method);
    const std::vector<float> ref_scores = estimate_scores(trace.queries, store);
    const SelectionResult ref_sel = select_topk(ref_scores, store.offsets, assignment,
                                                cache.seq_len(), config.engine.token_budget);

    std::ofstream out(out_csv, std::ios::trunc);
    if (!out) throw std::runtime_error("ablate-quant: cannot open " + out_csv.string());
    out << "spec,bits,mode,page_recall\n";
    out << "none,0,none," << format_double(topk_page_recall(ref_sel, ref_sel)) << '\n';
    for (const int bits : {2, 4, 8}) {
        for (const QuantMode mode : {QuantMode::kSymmetric, QuantMode::kAsymmetric}) {
            const QuantSpec spec{bits, mode};
            const QuantizedCentroidStore qstore = quantize_store(store, spec);
            const std::vector<float> scores = estimate_scores(trace.queries, qstore);
            const SelectionResult sel = select_topk(scores, store.offsets, assignment,
                                                    cache.seq_len(), config.engine.token_budget);
            out << quant_spec_name(spec) << ',' << bits << ','
                << (mode == QuantMode::kSymmetric ? "sym" : "asym") << ','
                << format_double(topk_page_recall(sel, ref_sel)) << '\n';
        }
    }
    std::cout << "ablate-quant: report in " << out_csv.string() << "\n";
}

double time_median_ms(const std::function<void()>& fn, int reps, int warmup) {
    for (int i = 0; i < warmup; ++i) fn();
    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(reps));
    for (int i = 0; i < reps; ++i) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const auto stop = std::chrono::steady_clock::now();
        samples.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
    }
    std::sort(samples.begin(), samples.end());
    return samples[samples.size() / 2];
}

void cmd_bench(const RunConfig& config, const std::vector<std::size_t>& sizes,
               const std::filesystem::path& out_csv) {
    config.validate();
    if (sizes.empty()) {
        throw std::invalid_argument("bench: need at least one context size");
    }
    std::ofstream out(out_csv, std::ios::trunc);
    if (!out) throw std::runtime_error("bench: cannot open " + out_csv.string());
    out << "op,path,seq_len,num_heads,median_ms\n";
    const EngineConfig& engine = config.engine;
    for (const std::size_t n : sizes) {
        if (n <= engine.token_budget) {
            throw std::invalid_argument("bench: context size " + std::to_string(n) +
                                        " must exceed the token budget");
        }
        // heterogeneous assignment cycling the candidates
        BlockAssignment assignment;
        assignment.block_sizes.resize(engine.num_heads);
        for (std::size_t h = 0; h < engine.num_heads; ++h) {
            assignment.block_sizes[h] =
                engine.candidate_block_sizes[h % engine.candidate_block_sizes.size()];
        }
        WorkloadSpec wspec = config.workload_spec(family_seed(config.seed, 3, n));
        wspec.seq_len = n;
        wspec.head_profiles.assign(engine.num_heads, HeadProfile::uniform());
        const Trace trace = generate_synthetic(wspec);
        const PagedKVCache cache = cache_from_trace(trace, engine.page_size);
        const CentroidStore store =
            compute_block_centroids(cache, assignment, engine.centroid_method);

        // correctness gates: timing a wrong kernel is worthless
        const std::vector<float> scores = estimate_scores(trace.queries, store);
        const std::vector<float> scores_naive = estimate_scores_naive(trace.queries, store);
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (std::fabs(scores[i] - scores_naive[i]) > 1e-6f) {
                throw std::runtime_error("bench: batched/naive estimation mismatch at size " +
                                         std::to_string(n));
            }
        }
        SelectionResult sel =
            select_topk(scores, store.offsets, assignment, cache.seq_len(), engine.token_budget);
        const SelectionResult sel_naive = select_topk_naive(scores, store.offsets, assignment,
                                                            cache.seq_len(), engine.token_budget);
        if (sel.blocks != sel_naive.blocks) {
            throw std::runtime_error("bench: batched/naive top-k mismatch at size " +
                                     std::to_string(n));
        }
        populate_page_spans(sel, cache);
        const AttentionOutput strided = sparse_attention(trace.queries, cache, sel);
        const AttentionOutput gathered = sparse_attention_gather(trace.queries, cache, sel);
        for (std::size_t i = 0; i < strided.output.size(); ++i) {
            if (std::fabs(strided.output[i] - gathered.output[i]) > 1e-6f) {
                throw std::runtime_error("bench: strided/gather attention mismatch at size " +
                                         std::to_string(n));
            }
        }
        reset_gather_copy_rows();
        sink(sparse_attention(trace.queries, cache, sel).output.data());
        if (gather_copy_rows() != 0) {
            throw std::runtime_error("bench: strided attention copied KV rows");
        }

        std::vector<BenchCase> cases;
        cases.push_back({"estimate", "batched", time_median_ms([&] {
                             const auto s = estimate_scores(trace.queries, store);
                             sink(s.data());
                         })});
        cases.push_back({"estimate", "naive", time_median_ms([&] {
                             const auto s = estimate_scores_naive(trace.queries, store);
                             sink(s.data());
                         })});
        cases.push_back({"topk", "batched", time_median_ms([&] {
                             const auto s = select_topk(scores, store.offsets, assignment,
                                                        cache.seq_len(), engine.token_budget);
                             sink(s.blocks.data());
                         })});
        cases.push_back({"topk", "naive", time_median_ms([&] {
                             const auto s = select_topk_naive(scores, store.offsets, assignment,
                                                              cache.seq_len(),
                                                              engine.token_budget);
                             sink(s.blocks.data());
                         })});
        cases.push_back({"attention", "strided", time_median_ms([&] {
                             const auto o = sparse_attention(trace.queries, cache, sel);
                             sink(o.output.data());
                         })});
        cases.push_back({"attention", "gather", time_median_ms([&] {
                             const auto o = sparse_attention_gather(trace.queries, cache, sel);
                             sink(o.output.data());
                         })});
        for (const BenchCase& c : cases) {
            out << c.op << ',' << c.path << ',' << n << ',' << engine.num_heads << ','
                << format_double(c.median_ms) << '\n';
            std::cout << "bench: " << c.op << '/' << c.path << " n=" << n << " "
                      << format_double(c.median_ms) << " ms\n";
        }
    }
}

}  // namespace absparse::cli
