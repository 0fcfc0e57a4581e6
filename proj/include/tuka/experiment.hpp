// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration shared by the CLI, the acceptance binary and the
// Python module: configuration, sequential training over a task stream,
// checkpoint/resume, evaluation with retrieved or oracle experts, and the
// reference-run cache used by the forgetting rates.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tuka/dkil.hpp"
#include "tuka/metrics.hpp"
#include "tuka/taskgen.hpp"

namespace tuka {

struct ExperimentConfig {
    AdapterKind adapter = AdapterKind::tuka;
    std::vector<std::size_t> ranks;  // empty: per-kind default
    std::size_t moe_experts = 4;
    std::size_t tasks = 20;
    std::size_t n_train = 128;
    std::size_t n_test = 100;
    bool retrieval = true;  // eval with retrieved expert ids; false = oracle ids
    SplConvention spl = SplConvention::standard;
    DkilHyper hyper;
    WorldConfig world;  // scenes/envs/instrs here are M, N, P
    std::uint64_t stream_seed = 1;
    std::uint64_t init_seed = 1;
    std::filesystem::path output_dir;  // not part of the hash
};

/// Desk-scale ranks: tuka (4,4,8,8), tuka3 (4,4,8), tuka5 (4,4,8,8,4),
/// lora/moe (8), abc (8,4).
std::vector<std::size_t> default_ranks(AdapterKind kind);

/// Adapter spec for layer 0 dims; layer_spec() adapts it per layer.
AdapterSpec base_spec(const ExperimentConfig& config);

/// Throws ConfigError naming the offending field.
void validate(const ExperimentConfig& config);

/// key = value lines, '#' comments. Unknown keys and bad values throw
/// ConfigError naming the key.
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every setting except output_dir, one "key = value" per line in a fixed
/// order. parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& config);
std::map<std::string, std::string> to_settings(const ExperimentConfig& config);

/// 16 hex digits of FNV-1a over to_text(config).
std::string config_hash(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// In-memory pipeline

struct Experiment {
    ExperimentConfig config;
    World world;
    std::vector<TaskDescriptor> stream;

    explicit Experiment(const ExperimentConfig& config);

    TaskData task_data(std::size_t t) const;
    DkilState initial_state() const;
};

struct EvalOutcome {
    std::vector<TaskScore> scores;
    std::size_t queries = 0;
    std::size_t correct_retrievals = 0;  // (scene, env) matched the true pair

    double retrieval_accuracy() const {
        return queries ? static_cast<double>(correct_retrievals) / static_cast<double>(queries) : 1.0;
    }
};

/// Scores the given tasks' test episodes under `state`. With retrieval on,
/// each episode's expert ids come from search_experts on its query.
EvalOutcome evaluate(const Experiment& ex, const DkilState& state, const std::vector<std::size_t>& tasks,
                     const std::vector<TaskData>& data, bool retrieval);

/// Sequential run kept in memory: trains every task, records each task's
/// score right after training it (the reference M-X values) and the final
/// scores of all tasks with m_* filled in.
struct StreamRun {
    DkilState state;
    std::vector<TaskScore> reference;
    EvalOutcome final;
};

StreamRun run_stream(const Experiment& ex, const std::function<void(const EpochLog&)>& on_epoch = {});

// ---------------------------------------------------------------------------
// On-disk commands

struct TrainOptions {
    std::optional<std::size_t> stop_after;  // stop once this many tasks are complete
    bool quiet = true;
};

/// Trains into config.output_dir, resuming from the manifest when it matches
/// the config hash. Returns the number of completed tasks.
std::size_t cmd_train(const ExperimentConfig& config, const TrainOptions& options = {});

/// Loads the final checkpoint under `dir` and scores every task.
EvalOutcome cmd_eval(const std::filesystem::path& dir, std::optional<bool> retrieval = std::nullopt);

/// Reference M-X per task, cached in output_dir/reference.json keyed by the
/// config hash. A missing, stale or corrupt cache is recomputed.
struct ReferenceResult {
    std::vector<TaskScore> scores;
    bool cache_hit = false;
};
ReferenceResult cmd_reference(const ExperimentConfig& config);

struct GradcheckEntry {
    std::string block;  // "layer0.core", ...
    std::string setting;
    std::size_t entries = 0;
    double max_rel_error = 0.0;
    bool pass = true;
};

/// Fourth-order central differences of loss_total (step h) against its
/// analytic gradient on every trainable block, with all four terms active.
std::vector<GradcheckEntry> gradcheck(const ExperimentConfig& config, double h = 1e-3, double tolerance = 1e-4);

/// Combines eval scores with the reference cache and writes report files
/// under `dir`.
Report cmd_report(const std::filesystem::path& dir);

/// Output root: $TUKA_OUTPUT_ROOT or "runs".
std::filesystem::path output_root();

}  // namespace tuka
