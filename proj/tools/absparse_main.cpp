// absparse: adaptive block-sparse attention decode engine.
//
// Subcommands: calibrate | decode | ablate-quant | bench. All runs are
// deterministic given (--config, --seed).

#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "absparse/cli_commands.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    double tau = 0.0;
    std::size_t budget = 0;
    std::string quant;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key = value config file");
    cmd->add_option("--seed", args.seed, "base RNG seed override");
    cmd->add_option("--tau", args.tau, "recall retention threshold override");
    cmd->add_option("--budget", args.budget, "token budget override");
    cmd->add_option("--quant", args.quant,
                    "centroid quantization override: none or int{2,4,8}x{sym,asym}");
}

absparse::cli::RunConfig resolve(const CLI::App* cmd, const CommonArgs& args) {
    absparse::cli::Overrides overrides;
    if (cmd->count("--seed") > 0) overrides.seed = args.seed;
    if (cmd->count("--tau") > 0) overrides.tau = args.tau;
    if (cmd->count("--budget") > 0) overrides.budget = args.budget;
    if (cmd->count("--quant") > 0) overrides.quant = args.quant;
    std::optional<std::filesystem::path> path;
    if (cmd->count("--config") > 0) path = args.config_path;
    return absparse::cli::load_run_config(path, overrides);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptive block-sparse attention decode engine"};
    app.require_subcommand(1);

    CommonArgs calibrate_args;
    std::string calibrate_out;
    CLI::App* calibrate = app.add_subcommand("calibrate", "profile recall and assign block sizes");
    add_common(calibrate, calibrate_args);
    calibrate->add_option("--out", calibrate_out, "output directory")->required();

    CommonArgs decode_args;
    std::vector<std::string> decode_assignments;
    std::string decode_trace;
    std::string decode_save_trace;
    std::string decode_out;
    CLI::App* decode = app.add_subcommand("decode", "run decode steps and report recall");
    add_common(decode, decode_args);
    decode->add_option("--assignment", decode_assignments,
                       "assignment file path or uniform:B (repeatable)")
        ->required();
    decode->add_option("--trace", decode_trace, "trace file (generated from config when omitted)");
    decode->add_option("--save-trace", decode_save_trace, "persist the workload trace here");
    decode->add_option("--out", decode_out, "recall report CSV")->required();

    CommonArgs ablate_args;
    std::string ablate_assignment;
    std::string ablate_trace;
    std::string ablate_out;
    CLI::App* ablate = app.add_subcommand("ablate-quant", "quantization fidelity ablation");
    add_common(ablate, ablate_args);
    ablate->add_option("--assignment", ablate_assignment,
                       "assignment file path or uniform:B (default: uniform at middle candidate)");
    ablate->add_option("--trace", ablate_trace, "trace file (generated from config when omitted)");
    ablate->add_option("--out", ablate_out, "report CSV")->required();

    CommonArgs bench_args;
    std::vector<std::size_t> bench_sizes{8192, 32768};
    std::string bench_out;
    CLI::App* bench = app.add_subcommand("bench", "naive vs batched kernel timings");
    add_common(bench, bench_args);
    bench->add_option("--sizes", bench_sizes, "context lengths to benchmark");
    bench->add_option("--out", bench_out, "timing CSV")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*calibrate) {
            absparse::cli::cmd_calibrate(resolve(calibrate, calibrate_args), calibrate_out);
        } else if (*decode) {
            std::optional<std::filesystem::path> trace;
            if (!decode_trace.empty()) trace = decode_trace;
            std::optional<std::filesystem::path> save;
            if (!decode_save_trace.empty()) save = decode_save_trace;
            absparse::cli::cmd_decode(resolve(decode, decode_args), decode_assignments, trace,
                                      save, decode_out);
        } else if (*ablate) {
            std::optional<std::filesystem::path> trace;
            if (!ablate_trace.empty()) trace = ablate_trace;
            absparse::cli::cmd_ablate_quant(resolve(ablate, ablate_args), ablate_assignment, trace,
                                            ablate_out);
        } else if (*bench) {
            absparse::cli::cmd_bench(resolve(bench, bench_args), bench_sizes, bench_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
