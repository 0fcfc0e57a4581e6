// SPDX-License-Identifier: Apache-2.0
#include "tuka/experiment.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "tuka/archive.hpp"
#include "tuka/error.hpp"
#include "tuka/retrieval.hpp"

namespace tuka {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError(key + ": expected a finite number, got '" + v + "'");
    return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

struct Setting {
    const char* key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define TUKA_DOUBLE(KEY, FIELD)                                                             \
    Setting {                                                                               \
        KEY, [](const ExperimentConfig& c) { return fmt_double(c.FIELD); },                 \
            [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_double(KEY, v); } \
    }
#define TUKA_UINT(KEY, FIELD)                                                                             \
    Setting {                                                                                             \
        KEY, [](const ExperimentConfig& c) { return std::to_string(c.FIELD); },                           \
            [](ExperimentConfig& c, const std::string& v) { c.FIELD = static_cast<decltype(c.FIELD)>(parse_uint(KEY, v)); } \
    }

const std::vector<Setting>& settings() {
    static const std::vector<Setting> table = {
        {"adapter", [](const ExperimentConfig& c) { return std::string(to_string(c.adapter)); },
         [](ExperimentConfig& c, const std::string& v) {
             try {
                 c.adapter = parse_adapter_kind(v);
             } catch (const std::exception&) {
                 throw ConfigError("adapter: unknown kind '" + v + "' (tuka, tuka3, tuka5, lora, moe, abc)");
             }
         }},
        {"ranks",
         [](const ExperimentConfig& c) {
             std::string s;
             for (std::size_t i = 0; i < c.ranks.size(); ++i) s += (i ? "," : "") + std::to_string(c.ranks[i]);
             return s.empty() ? std::string("default") : s;
         },
         [](ExperimentConfig& c, const std::string& v) {
             c.ranks.clear();
             if (v == "default" || v.empty()) return;
             std::stringstream ss(v);
             std::string item;
             while (std::getline(ss, item, ',')) c.ranks.push_back(parse_uint("ranks", trim(item)));
         }},
        TUKA_UINT("moe_experts", moe_experts),
        TUKA_UINT("tasks", tasks),
        TUKA_UINT("n_train", n_train),
        TUKA_UINT("n_test", n_test),
        {"eval", [](const ExperimentConfig& c) { return std::string(c.retrieval ? "retrieval" : "oracle"); },
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "retrieval") c.retrieval = true;
             else if (v == "oracle") c.retrieval = false;
             else throw ConfigError("eval: expected 'retrieval' or 'oracle', got '" + v + "'");
         }},
        {"spl", [](const ExperimentConfig& c) { return std::string(c.spl == SplConvention::standard ? "standard" : "literal"); },
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "standard") c.spl = SplConvention::standard;
             else if (v == "literal") c.spl = SplConvention::literal;
             else throw ConfigError("spl: expected 'standard' or 'literal', got '" + v + "'");
         }},
        TUKA_DOUBLE("lambda1", hyper.lambda1),
        TUKA_DOUBLE("lambda2", hyper.lambda2),
        TUKA_DOUBLE("lambda3", hyper.lambda3),
        TUKA_DOUBLE("omega", hyper.omega),
        TUKA_DOUBLE("lr", hyper.lr),
        TUKA_DOUBLE("beta1", hyper.beta1),
        TUKA_DOUBLE("beta2", hyper.beta2),
        TUKA_DOUBLE("adam_eps", hyper.adam_eps),
        TUKA_DOUBLE("fisher_fraction", hyper.fisher_fraction),
        TUKA_UINT("epochs", hyper.epochs),
        TUKA_UINT("batch", hyper.batch),
        TUKA_UINT("scenes", world.scenes),
        TUKA_UINT("envs", world.envs),
        TUKA_UINT("instrs", world.instrs),
        TUKA_UINT("obs_dim", world.dims.obs_dim),
        TUKA_UINT("instr_dim", world.dims.instr_dim),
        TUKA_UINT("hidden", world.dims.hidden),
        TUKA_UINT("layers", world.dims.layers),
        TUKA_DOUBLE("scene_radius", world.scene_radius),
        TUKA_DOUBLE("env_radius", world.env_radius),
        TUKA_DOUBLE("obs_noise", world.obs_noise),
        TUKA_DOUBLE("instr_radius", world.instr_radius),
        TUKA_DOUBLE("instr_noise", world.instr_noise),
        TUKA_UINT("teacher_rank", world.teacher_rank),
        TUKA_DOUBLE("shared_scale", world.shared_scale),
        TUKA_DOUBLE("scene_scale", world.scene_scale),
        TUKA_DOUBLE("env_scale", world.env_scale),
        TUKA_DOUBLE("instr_scale", world.instr_scale),
        TUKA_DOUBLE("forward_bias", world.forward_bias),
        TUKA_DOUBLE("stop_bias", world.stop_bias),
        TUKA_UINT("horizon", world.horizon),
        TUKA_DOUBLE("step_length", world.step_length),
        TUKA_DOUBLE("turn_degrees", world.turn_degrees),
        TUKA_DOUBLE("epsilon", world.epsilon),
        TUKA_UINT("query_steps", world.query_steps),
        TUKA_UINT("world_seed", world.seed),
        TUKA_UINT("stream_seed", stream_seed),
        TUKA_UINT("init_seed", init_seed),
    };
    return table;
}

#undef TUKA_DOUBLE
#undef TUKA_UINT

}  // namespace

std::vector<std::size_t> default_ranks(AdapterKind kind) {
    switch (kind) {
        case AdapterKind::tuka: return {4, 4, 8, 8};
        case AdapterKind::tuka3: return {4, 4, 8};
        case AdapterKind::tuka5: return {4, 4, 8, 8, 4};
        case AdapterKind::lora:
        case AdapterKind::moe: return {8};
        case AdapterKind::abc: return {8, 4};
    }
    return {};
}

AdapterSpec base_spec(const ExperimentConfig& c) {
    AdapterSpec s;
    s.kind = c.adapter;
    s.ranks = c.ranks.empty() ? default_ranks(c.adapter) : c.ranks;
    s.scenes = c.world.scenes;
    s.envs = c.world.envs;
    s.instrs = c.world.instrs;
    s.experts = c.moe_experts;
    s.out_dim = c.world.dims.layer_out(0);
    s.in_dim = c.world.dims.layer_in(0);
    return s;
}

void validate(const ExperimentConfig& c) {
    const auto& w = c.world;
    if (w.scenes == 0) throw ConfigError("scenes: must be >= 1");
    if (w.envs == 0) throw ConfigError("envs: must be >= 1");
    if (w.instrs == 0) throw ConfigError("instrs: must be >= 1");
    if (c.tasks == 0) throw ConfigError("tasks: must be >= 1");
    if (c.tasks > w.scenes * w.envs)
        throw ConfigError("tasks: " + std::to_string(c.tasks) + " exceeds the " + std::to_string(w.scenes * w.envs) +
                          " distinct (scene, env) pairs the adapter capacity covers");
    if (c.n_train == 0) throw ConfigError("n_train: must be >= 1");
    if (c.n_test == 0) throw ConfigError("n_test: must be >= 1");
    if (c.moe_experts == 0) throw ConfigError("moe_experts: must be >= 1");
    if (w.dims.layers == 0) throw ConfigError("layers: must be >= 1");
    if (w.dims.hidden == 0) throw ConfigError("hidden: must be >= 1");
    if (w.dims.obs_dim < 3) throw ConfigError("obs_dim: must be >= 3");
    if (w.dims.instr_dim == 0) throw ConfigError("instr_dim: must be >= 1");
    if (w.scenes > w.dims.obs_dim / 3) throw ConfigError("scenes: at most obs_dim/3 scene clusters fit");
    if (w.envs > w.dims.obs_dim / 3) throw ConfigError("envs: at most obs_dim/3 environment clusters fit");
    if (w.instrs > w.dims.instr_dim) throw ConfigError("instrs: at most instr_dim instruction clusters fit");
    if (w.teacher_rank == 0) throw ConfigError("teacher_rank: must be >= 1");
    if (w.horizon == 0) throw ConfigError("horizon: must be >= 1");
    if (w.query_steps == 0 || w.query_steps > w.horizon) throw ConfigError("query_steps: must lie in [1, horizon]");
    if (!(w.epsilon > 0)) throw ConfigError("epsilon: must be positive");
    if (!(w.step_length > 0)) throw ConfigError("step_length: must be positive");
    if (w.obs_noise < 0) throw ConfigError("obs_noise: must be >= 0");
    if (w.instr_noise < 0) throw ConfigError("instr_noise: must be >= 0");
    try {
        validate(base_spec(c));
    } catch (const std::exception& e) {
        throw ConfigError(std::string("ranks: ") + e.what());
    }
    validate(c.hyper);  // messages already name the fields
}

void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value) {
    for (const auto& s : settings()) {
        if (key == s.key) {
            s.set(config, value);
            return;
        }
    }
    if (key == "output_dir") {
        config.output_dir = value;
        return;
    }
    throw ConfigError(key + ": unknown setting");
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + t + "'");
        apply_setting(base, trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
    }
    return base;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::map<std::string, std::string> to_settings(const ExperimentConfig& config) {
    std::map<std::string, std::string> out;
    for (const auto& s : settings()) out[s.key] = s.get(config);
    return out;
}

std::string to_text(const ExperimentConfig& config) {
    std::string out;
    for (const auto& s : settings()) out += std::string(s.key) + " = " + s.get(config) + "\n";
    return out;
}

std::string config_hash(const ExperimentConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_text(config)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

fs::path output_root() {
    if (const char* env = std::getenv("TUKA_OUTPUT_ROOT"); env && *env) return env;
    return "runs";
}

// ---------------------------------------------------------------------------
// In-memory pipeline

Experiment::Experiment(const ExperimentConfig& c) : config(c) {
    validate(config);
    world = make_world(config.world);
    stream = gen_stream(config.world.scenes, config.world.envs, config.tasks, config.stream_seed, config.world.instrs);
}

TaskData Experiment::task_data(std::size_t t) const {
    return gen_task_data(world, stream.at(t), config.n_train, config.n_test);
}

DkilState Experiment::initial_state() const { return init_state(world.config.dims, base_spec(config), config.init_seed); }

EvalOutcome evaluate(const Experiment& ex, const DkilState& state, const std::vector<std::size_t>& tasks,
                     const std::vector<TaskData>& data, bool retrieval) {
    EvalOutcome out;
    const bool instr_keys = kind_of(state.adapters.at(0)) == AdapterKind::tuka5;
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::vector<Matrix>> weight_cache;
    for (std::size_t t : tasks) {
        const TaskData& d = data.at(t);
        if (d.test.empty()) throw std::invalid_argument("task " + std::to_string(t) + " has an empty test set");
        std::vector<EpisodeRecord> records;
        records.reserve(d.test.size());
        for (const auto& ep : d.test) {
            TaskKey key = ep.key;
            if (retrieval) {
                const auto q = episode_query(ep, ex.config.world.query_steps);
                const ExpertMatch m = instr_keys ? search_experts(state.store, q, ep.instr) : search_experts(state.store, q);
                key = {m.scene, m.env, m.instr.value_or(ep.key.instr)};
                ++out.queries;
                if (m.scene == ep.key.scene && m.env == ep.key.env) ++out.correct_retrievals;
            }
            auto [it, fresh] = weight_cache.try_emplace({key.scene, key.env, key.instr});
            if (fresh) it->second = merged_weights(ex.world.backbone, layer_deltas(state.adapters, key));
            records.push_back(rollout(ex.world, it->second, ep));
        }
        out.scores.push_back(score_episodes(t, records, ex.config.spl));
    }
    return out;
}

StreamRun run_stream(const Experiment& ex, const std::function<void(const EpochLog&)>& on_epoch) {
    StreamRun run;
    run.state = ex.initial_state();
    std::vector<TaskData> data;
    for (std::size_t t = 0; t < ex.stream.size(); ++t) {
        data.push_back(ex.task_data(t));
        train_task(run.state, ex.world.backbone, ex.stream[t], data.back().train, ex.config.hyper,
                   ex.config.world.query_steps, on_epoch);
        run.reference.push_back(evaluate(ex, run.state, {t}, data, ex.config.retrieval).scores.at(0));
    }
    std::vector<std::size_t> all(ex.stream.size());
    for (std::size_t t = 0; t < all.size(); ++t) all[t] = t;
    run.final = evaluate(ex, run.state, all, data, ex.config.retrieval);
    for (std::size_t t = 0; t < all.size(); ++t) {
        run.final.scores[t].m_sr = run.reference[t].sr;
        run.final.scores[t].m_spl = run.reference[t].spl;
        run.final.scores[t].m_osr = run.reference[t].osr;
    }
    return run;
}

// ---------------------------------------------------------------------------
// On-disk commands

namespace {

fs::path checkpoint_path(const fs::path& dir, std::size_t t) {
    char name[32];
    std::snprintf(name, sizeof name, "task_%03zu.tka", t);
    return dir / "checkpoints" / name;
}

json stream_json(const std::vector<TaskDescriptor>& stream) {
    json arr = json::array();
    for (const auto& t : stream)
        arr.push_back({{"index", t.index}, {"scene", t.scene}, {"env", t.env}, {"instr", t.instr}, {"seed", t.seed}});
    return arr;
}

json read_json(const fs::path& path) { return json::parse(read_file(path)); }

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

json score_json(const TaskScore& s) {
    json j = {{"task", s.task}, {"episodes", s.episodes}, {"sr", s.sr}, {"spl", s.spl}, {"osr", s.osr}};
    return j;
}

TaskScore score_from_json(const json& j) {
    TaskScore s;
    s.task = j.at("task").get<std::size_t>();
    s.episodes = j.at("episodes").get<std::size_t>();
    s.sr = j.at("sr").get<double>();
    s.spl = j.at("spl").get<double>();
    s.osr = j.at("osr").get<double>();
    return s;
}

// Keeps log records of tasks before `task`; an interrupted task leaves
// partial records that the rerun replaces.
void truncate_log(const fs::path& log, std::size_t task) {
    if (!fs::exists(log)) return;
    std::ifstream in(log);
    std::string line, kept;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            if (json::parse(line).at("task").get<std::size_t>() < task) kept += line + "\n";
        } catch (const std::exception&) {
            // a torn final line from an interrupted write
        }
    }
    in.close();
    write_file_atomic(log, kept);
}

}  // namespace

std::size_t cmd_train(const ExperimentConfig& config, const TrainOptions& options) {
    validate(config);
    if (config.output_dir.empty()) throw ConfigError("output_dir: must be set");
    const Experiment ex(config);
    const fs::path dir = config.output_dir;
    const std::string hash = config_hash(config);
    const fs::path manifest_path = dir / "manifest.json";

    std::size_t done = 0;
    DkilState state;
    if (fs::exists(manifest_path)) {
        const json m = read_json(manifest_path);
        if (m.value("config_hash", "") != hash)
            throw std::runtime_error(dir.string() + " holds a different experiment (config hash " +
                                     m.value("config_hash", "?") + ", expected " + hash + ")");
        done = m.at("tasks_completed").get<std::size_t>();
    }
    if (done > 0) {
        state = load_state(checkpoint_path(dir, done - 1));
        if (state.tasks_done != done) throw std::runtime_error("checkpoint does not match the manifest task count");
    } else {
        state = ex.initial_state();
    }

    fs::create_directories(dir / "checkpoints");
    write_file_atomic(dir / "config.txt", to_text(config));
    const fs::path log_path = dir / "log.jsonl";
    truncate_log(log_path, done);

    auto write_manifest = [&](std::size_t completed) {
        json ckpts = json::array();
        for (std::size_t t = 0; t < completed; ++t) ckpts.push_back(checkpoint_path(dir, t).lexically_relative(dir).string());
        write_json(manifest_path, {{"format", "tuka-experiment"},
                                   {"version", 1},
                                   {"config_hash", hash},
                                   {"config_file", "config.txt"},
                                   {"tasks_total", ex.stream.size()},
                                   {"tasks_completed", completed},
                                   {"stream", stream_json(ex.stream)},
                                   {"checkpoints", ckpts},
                                   {"store", completed ? json("store.tka") : json(nullptr)},
                                   {"log", "log.jsonl"}});
    };
    if (!fs::exists(manifest_path)) write_manifest(0);

    std::ofstream log(log_path, std::ios::app);
    for (std::size_t t = done; t < ex.stream.size(); ++t) {
        if (options.stop_after && t >= *options.stop_after) break;
        const TaskData data = ex.task_data(t);
        train_task(state, ex.world.backbone, ex.stream[t], data.train, config.hyper, config.world.query_steps,
                   [&](const EpochLog& e) {
                       log << to_json(e).dump() << "\n";
                       log.flush();
                       if (!options.quiet)
                           std::cerr << "task " << e.task << " epoch " << e.epoch << " loss " << e.loss.total() << "\n";
                   });
        save_state(checkpoint_path(dir, t), state, {{"config_hash", hash}, {"task", t}});
        save_store(dir / "store.tka", state.store);
        done = t + 1;
        write_manifest(done);
    }
    return done;
}

namespace {

struct LoadedRun {
    ExperimentConfig config;
    json manifest;
};

LoadedRun load_run(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) throw std::runtime_error("no manifest.json in " + dir.string() + "; run train first");
    LoadedRun r;
    r.manifest = read_json(mpath);
    r.config = load_config(dir / "config.txt");
    r.config.output_dir = dir;
    if (config_hash(r.config) != r.manifest.value("config_hash", ""))
        throw std::runtime_error("config.txt in " + dir.string() + " does not match its manifest");
    return r;
}

}  // namespace

EvalOutcome cmd_eval(const fs::path& dir, std::optional<bool> retrieval) {
    const LoadedRun run = load_run(dir);
    const std::size_t done = run.manifest.at("tasks_completed").get<std::size_t>();
    if (done == 0) throw std::runtime_error("no completed task checkpoint in " + dir.string());
    if (!fs::exists(dir / "store.tka")) throw std::runtime_error("retrieval store missing in " + dir.string());
    const Experiment ex(run.config);
    DkilState state = load_state(checkpoint_path(dir, done - 1));
    state.store = load_store(dir / "store.tka");
    std::vector<TaskData> data;
    std::vector<std::size_t> tasks;
    for (std::size_t t = 0; t < done; ++t) {
        data.push_back(ex.task_data(t));
        tasks.push_back(t);
    }
    const bool use_retrieval = retrieval.value_or(run.config.retrieval);
    EvalOutcome out = evaluate(ex, state, tasks, data, use_retrieval);
    json scores = json::array();
    for (const auto& s : out.scores) scores.push_back(score_json(s));
    write_json(dir / "scores.json", {{"config_hash", config_hash(run.config)},
                                     {"eval", use_retrieval ? "retrieval" : "oracle"},
                                     {"tasks_evaluated", done},
                                     {"retrieval_accuracy", out.retrieval_accuracy()},
                                     {"scores", scores}});
    return out;
}

ReferenceResult cmd_reference(const ExperimentConfig& config) {
    validate(config);
    if (config.output_dir.empty()) throw ConfigError("output_dir: must be set");
    const fs::path cache = config.output_dir / "reference.json";
    const std::string hash = config_hash(config);
    ReferenceResult result;
    if (fs::exists(cache)) {
        try {
            const json j = read_json(cache);
            if (j.at("config_hash").get<std::string>() == hash) {
                for (const auto& s : j.at("scores")) result.scores.push_back(score_from_json(s));
                if (result.scores.size() == config.tasks) {
                    result.cache_hit = true;
                    return result;
                }
            }
        } catch (const std::exception& e) {
            std::cerr << "warning: reference cache " << cache.string() << " is unreadable (" << e.what()
                      << "); recomputing\n";
        }
        result.scores.clear();
    }

    // Checkpoint t holds exactly the state after training tasks 0..t, so the
    // prefix run's reference is that checkpoint evaluated on task t.
    cmd_train(config);
    const Experiment ex(config);
    std::vector<TaskData> data;
    for (std::size_t t = 0; t < ex.stream.size(); ++t) {
        data.push_back(ex.task_data(t));
        const DkilState state = load_state(checkpoint_path(config.output_dir, t));
        result.scores.push_back(evaluate(ex, state, {t}, data, config.retrieval).scores.at(0));
    }
    json scores = json::array();
    for (const auto& s : result.scores) scores.push_back(score_json(s));
    write_json(cache, {{"config_hash", hash}, {"eval", config.retrieval ? "retrieval" : "oracle"}, {"scores", scores}});
    return result;
}

Report cmd_report(const fs::path& dir) {
    const fs::path spath = dir / "scores.json";
    if (!fs::exists(spath)) throw std::runtime_error("no scores in " + dir.string() + "; run eval first");
    const json j = read_json(spath);
    std::vector<TaskScore> scores;
    for (const auto& s : j.at("scores")) scores.push_back(score_from_json(s));
    if (scores.empty()) throw std::runtime_error("scores.json in " + dir.string() + " lists no tasks");
    const fs::path rpath = dir / "reference.json";
    if (fs::exists(rpath)) {
        const json r = read_json(rpath);
        if (r.value("config_hash", "") == j.value("config_hash", "")) {
            const auto& refs = r.at("scores");
            for (auto& s : scores)
                if (s.task < refs.size()) {
                    const TaskScore ref = score_from_json(refs[s.task]);
                    s.m_sr = ref.sr;
                    s.m_spl = ref.spl;
                    s.m_osr = ref.osr;
                }
        } else {
            std::cerr << "warning: reference.json belongs to another config; forgetting rates left undefined\n";
        }
    }
    const Report report = aggregate(scores);
    write_report(dir, report);
    return report;
}

// ---------------------------------------------------------------------------
// Gradient check

std::vector<GradcheckEntry> gradcheck(const ExperimentConfig& config, double h, double tolerance) {
    const Experiment ex(config);
    const TaskDescriptor& task = ex.stream.at(0);
    const TaskKey key = task.key();
    const TaskData data = gen_task_data(ex.world, task, 2, 1);

    DkilHyper hyper = config.hyper;
    if (!(hyper.lambda1 > 0 && hyper.lambda2 > 0 && hyper.lambda3 > 0)) {
        hyper.lambda1 = 0.2;
        hyper.lambda2 = 0.2;
        hyper.lambda3 = 0.1;
    }

    std::mt19937_64 rng(mix_seed(config.init_seed, 0x4752414443ULL));
    std::normal_distribution<double> normal(0.0, 0.3);
    std::uniform_real_distribution<double> uniform(0.5, 2.0);

    DkilState base = ex.initial_state();
    for (auto& a : base.adapters)
        for (auto& b : param_blocks(a))
            for (double& v : b.values) v = normal(rng);
    base.snapshot = base.adapters;
    for (auto& a : base.snapshot)
        for (auto& b : param_blocks(a))
            for (double& v : b.values) v += normal(rng);
    for (auto& a : base.fisher)
        for (auto& b : param_blocks(a))
            for (double& v : b.values) v = uniform(rng);
    base.has_fisher = true;
    base.tasks_done = 1;

    const std::size_t M = config.world.scenes, N = config.world.envs, P = config.world.instrs;
    struct Setting {
        const char* name;
        bool scene_seen, env_seen;
    };
    const Setting settings_list[] = {{"alpha=1,beta=0", true, false}, {"alpha=0,beta=1", false, true}};

    std::vector<GradcheckEntry> out;
    for (const auto& setting : settings_list) {
        DkilState state = base;
        // Other rows are marked seen so the Gram products span several rows.
        for (std::size_t s = 0; s < M; ++s)
            if (s != key.scene || setting.scene_seen) state.seen_scenes.insert(s);
        for (std::size_t e = 0; e < N; ++e)
            if (e != key.env || setting.env_seen) state.seen_envs.insert(e);
        for (std::size_t q = 0; q < P; ++q)
            if (q != key.instr || setting.scene_seen) state.seen_instrs.insert(q);
        for (std::size_t s = 0; s < M; ++s)
            for (std::size_t e = 0; e < N; ++e)
                if ((s + e) % 2 == 1 && !(s == key.scene && e == key.env)) state.seen_pairs.insert({s, e});
        const TaskContext ctx = make_context(state, key);

        LayerAdapters grads;
        loss_total(ex.world.backbone, state, ctx, data.train, hyper, &grads);
        const auto mask = trainable_mask_layers(state.adapters, key);

        std::size_t offset = 0;
        for (std::size_t l = 0; l < state.adapters.size(); ++l) {
            const auto gblocks = param_blocks(std::as_const(grads[l]));
            for (std::size_t b = 0; b < gblocks.size(); ++b) {
                GradcheckEntry entry;
                entry.block = "layer" + std::to_string(l) + "." + std::string(gblocks[b].name);
                entry.setting = setting.name;
                for (std::size_t i = 0; i < gblocks[b].values.size(); ++i) {
                    if (!mask[offset + i]) continue;
                    double& p = param_blocks(state.adapters[l])[b].values[i];
                    const double saved = p;
                    // Term-by-term differences of the summed loss: the same
                    // quotient with less cancellation than differencing the
                    // large total.
                    auto eval_at = [&](double x) {
                        p = x;
                        const LossBreakdown lb = loss_total(ex.world.backbone, state, ctx, data.train, hyper);
                        return std::array<double, 4>{lb.task, lb.ewc, lb.consistency, lb.orthogonal};
                    };
                    const auto p2 = eval_at(saved + 2 * h), p1 = eval_at(saved + h);
                    const auto m1 = eval_at(saved - h), m2 = eval_at(saved - 2 * h);
                    p = saved;
                    // fourth-order central stencil
                    double numeric = 0.0;
                    for (std::size_t k = 0; k < 4; ++k) numeric += (-p2[k] + 8 * p1[k] - 8 * m1[k] + m2[k]) / (12 * h);
                    const double analytic = gblocks[b].values[i];
                    ++entry.entries;
                    const double scale = std::max(std::abs(numeric), std::abs(analytic));
                    if (scale < 1e-8) continue;
                    entry.max_rel_error = std::max(entry.max_rel_error, std::abs(numeric - analytic) / scale);
                }
                offset += gblocks[b].values.size();
                entry.pass = entry.max_rel_error < tolerance;
                if (entry.entries > 0) out.push_back(entry);
            }
        }
    }
    return out;
}

}  // namespace tuka
