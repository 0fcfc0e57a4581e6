// SPDX-License-Identifier: Apache-2.0
//
// tuka: command-line front end for training, evaluation, reference runs,
// gradient checks, image degradation and reports.
//
// Exit codes: 0 success, 1 invalid arguments or configuration, 2 failure
// while running.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tuka/degrade.hpp"
#include "tuka/error.hpp"
#include "tuka/experiment.hpp"

namespace fs = std::filesystem;
using namespace tuka;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct ConfigArgs {
    std::string config_file;
    std::vector<std::string> sets;
    std::string output;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args, bool with_output = true) {
    cmd->add_option("-c,--config", args.config_file, "key = value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("-s,--set", args.sets, "override one setting, key=value (repeatable)");
    if (with_output) cmd->add_option("-o,--output", args.output, "run directory (default: $TUKA_OUTPUT_ROOT/<config hash>)");
}

std::pair<std::string, std::string> split_setting(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv + ": expected key=value");
    auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t") + 1);
        return s;
    };
    return {trim(kv.substr(0, eq)), trim(kv.substr(eq + 1))};
}

// File values first, then --set overrides, then validation. Nothing touches
// the disk before this returns.
ExperimentConfig resolve_config(const ConfigArgs& args) {
    ExperimentConfig c = args.config_file.empty() ? ExperimentConfig{} : load_config(args.config_file);
    for (const auto& kv : args.sets) {
        const auto [k, v] = split_setting(kv);
        apply_setting(c, k, v);
    }
    validate(c);
    if (!args.output.empty()) c.output_dir = args.output;
    if (c.output_dir.empty()) c.output_dir = output_root() / config_hash(c);
    return c;
}

void print_scores(const EvalOutcome& out) {
    std::printf("%-6s %7s %7s %7s\n", "task", "SR", "SPL", "OSR");
    double sr = 0, sp = 0, os = 0;
    for (const auto& s : out.scores) {
        std::printf("%-6zu %7.1f %7.1f %7.1f\n", s.task, 100 * s.sr, 100 * s.spl, 100 * s.osr);
        sr += s.sr;
        sp += s.spl;
        os += s.osr;
    }
    const double n = static_cast<double>(out.scores.size());
    std::printf("%-6s %7.1f %7.1f %7.1f\n", "avg", 100 * sr / n, 100 * sp / n, 100 * os / n);
    if (out.queries) std::printf("retrieval accuracy %.4f over %zu queries\n", out.retrieval_accuracy(), out.queries);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TuKA lifelong adaptation experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "tuka 1.0");

    ConfigArgs train_args, ref_args, grad_args;
    std::optional<std::size_t> stop_after;
    bool verbose = false;
    auto* train = app.add_subcommand("train", "train sequentially over the task stream (resumes if interrupted)");
    add_config_options(train, train_args);
    train->add_option("--stop-after", stop_after, "stop once this many tasks are complete");
    train->add_flag("-v,--verbose", verbose, "print per-epoch losses");

    std::string eval_dir;
    bool oracle = false, retrieved = false;
    auto* eval = app.add_subcommand("eval", "score every trained task of a run");
    eval->add_option("run", eval_dir, "run directory")->required();
    auto* oracle_flag = eval->add_flag("--oracle", oracle, "use the true expert ids");
    eval->add_flag("--retrieval", retrieved, "use retrieved expert ids")->excludes(oracle_flag);

    auto* reference = app.add_subcommand("reference", "compute or load the per-task reference scores");
    add_config_options(reference, ref_args);

    double h = 1e-3, tolerance = 1e-4;
    auto* grad = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
    add_config_options(grad, grad_args, false);
    grad->add_option("--step", h, "finite-difference step")->check(CLI::PositiveNumber);
    grad->add_option("--tolerance", tolerance, "maximum relative error")->check(CLI::PositiveNumber);

    std::string mode = "scattering", in_dir, out_dir, depth_dir;
    std::uint64_t seed = 0;
    std::vector<std::string> degrade_sets;
    auto* degrade = app.add_subcommand("degrade", "synthesize degraded copies of a directory of PPM images");
    degrade->add_option("-m,--mode", mode, "scattering, lowlight or overexposure")
        ->check(CLI::IsMember({"scattering", "lowlight", "overexposure"}));
    degrade->add_option("-i,--input", in_dir, "directory of .ppm images")->required()->check(CLI::ExistingDirectory);
    degrade->add_option("-o,--output", out_dir, "output directory")->required();
    degrade->add_option("-d,--depth", depth_dir, "directory of <stem>.pgm depth maps")->check(CLI::ExistingDirectory);
    degrade->add_option("--seed", seed, "noise seed");
    degrade->add_option("-s,--set", degrade_sets, "override one parameter, key=value (repeatable)");

    std::string report_dir;
    auto* report = app.add_subcommand("report", "write report tables for an evaluated run");
    report->add_option("run", report_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (*train) {
            const ExperimentConfig c = resolve_config(train_args);
            const std::size_t done = cmd_train(c, {stop_after, !verbose});
            std::printf("%zu/%zu tasks complete in %s\n", done, c.tasks, c.output_dir.string().c_str());
        } else if (*eval) {
            std::optional<bool> use_retrieval;
            if (oracle) use_retrieval = false;
            if (retrieved) use_retrieval = true;
            print_scores(cmd_eval(eval_dir, use_retrieval));
        } else if (*reference) {
            const ExperimentConfig c = resolve_config(ref_args);
            const auto r = cmd_reference(c);
            std::printf("reference %s (%s)\n", r.cache_hit ? "loaded from cache" : "computed",
                        (c.output_dir / "reference.json").string().c_str());
            print_scores(EvalOutcome{r.scores, 0, 0});
        } else if (*grad) {
            const ExperimentConfig c = resolve_config(grad_args);
            bool ok = true;
            for (const auto& e : gradcheck(c, h, tolerance)) {
                std::printf("%-4s %-16s %-15s %6zu entries  max rel error %.3e\n", e.pass ? "ok" : "FAIL",
                            e.block.c_str(), e.setting.c_str(), e.entries, e.max_rel_error);
                ok = ok && e.pass;
            }
            if (!ok) {
                std::fprintf(stderr, "gradcheck: some blocks exceed the tolerance %.1e\n", tolerance);
                return kRuntimeError;
            }
        } else if (*degrade) {
            DegradeJob job;
            job.mode = parse_degrade_mode(mode);
            for (const auto& kv : degrade_sets) {
                const auto [k, v] = split_setting(kv);
                apply_degrade_setting(job, k, v);
            }
            job.input_dir = in_dir;
            job.output_dir = out_dir;
            if (!depth_dir.empty()) job.depth_dir = fs::path(depth_dir);
            job.seed = seed;
            const auto manifest = run_degrade(job);
            std::printf("%zu images written to %s\n", manifest.at("outputs").size(), out_dir.c_str());
        } else if (*report) {
            std::fputs(report_text(cmd_report(report_dir)).c_str(), stdout);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsageError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntimeError;
    }
    return 0;
}
