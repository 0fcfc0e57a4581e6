// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "tuka/error.hpp"
#include "tuka/experiment.hpp"

using namespace tuka;
using namespace tuka::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

// The ConfigError message must start with the offending field.
void check_field(const std::string& text, const std::string& field) {
    CAPTURE(text);
    try {
        validate(parse_config(text, tiny_config()));
        FAIL("no error for " << field);
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).rfind(field, 0) == 0);
    }
}

}  // namespace

TEST_CASE("config text round trip and hash") {
    auto c = tiny_config(AdapterKind::tuka5);
    c.hyper.lr = 1.25e-3;
    c.retrieval = false;
    c.spl = SplConvention::literal;
    const auto back = parse_config(to_text(c));
    CHECK(to_text(back) == to_text(c));
    CHECK(config_hash(back) == config_hash(c));
    CHECK(config_hash(c).size() == 16);

    auto d = c;
    d.output_dir = "elsewhere";
    CHECK(config_hash(d) == config_hash(c));
    d.hyper.lambda2 = 0.21;
    CHECK(config_hash(d) != config_hash(c));

    const auto parsed = parse_config("# comment\nadapter = lora\n\nlambda1 = 0\nranks = 5\n");
    CHECK(parsed.adapter == AdapterKind::lora);
    CHECK(parsed.hyper.lambda1 == 0.0);
    CHECK(parsed.ranks == std::vector<std::size_t>{5});
}

TEST_CASE("config errors name the field") {
    check_field("lambda1 = 0.5\nlambda2 = 0.5\n", "lambda");
    check_field("lr = fast\n", "lr");
    check_field("tasks = 7\n", "tasks");  // 3 x 2 pairs only
    check_field("adapter = transformer\n", "adapter");
    check_field("bogus = 1\n", "bogus");
    check_field("eval = maybe\n", "eval");
    check_field("n_test = 0\n", "n_test");
    check_field("ranks = 1,2\n", "ranks");
    check_field("epochs = -3\n", "epochs");
    CHECK_THROWS_AS(parse_config("no equals sign\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/tuka.cfg"), ConfigError);
}

TEST_CASE("output root follows the environment") {
    ::setenv("TUKA_OUTPUT_ROOT", "/tmp/somewhere", 1);
    CHECK(output_root() == fs::path("/tmp/somewhere"));
    ::unsetenv("TUKA_OUTPUT_ROOT");
    CHECK(output_root() == fs::path("runs"));
}

TEST_CASE("one-task stream writes one checkpoint") {
    auto c = tiny_config();
    c.tasks = 1;
    c.output_dir = scratch_dir("one");
    CHECK(cmd_train(c) == 1);
    CHECK(fs::exists(c.output_dir / "checkpoints" / "task_000.tka"));
    CHECK_FALSE(fs::exists(c.output_dir / "checkpoints" / "task_001.tka"));
    CHECK(fs::exists(c.output_dir / "store.tka"));
    CHECK(fs::exists(c.output_dir / "manifest.json"));
    CHECK(fs::exists(c.output_dir / "log.jsonl"));

    // reference for t = 1 is train-on-one-task then eval
    const auto eval = cmd_eval(c.output_dir);
    const auto ref = cmd_reference(c);
    REQUIRE(ref.scores.size() == 1);
    CHECK(ref.scores[0] == eval.scores[0]);
    fs::remove_all(c.output_dir);
}

TEST_CASE("reruns and resumed runs are bitwise identical") {
    auto c = tiny_config();
    const fs::path a = scratch_dir("full_a"), b = scratch_dir("full_b"), r = scratch_dir("resumed");
    c.output_dir = a;
    cmd_train(c);
    c.output_dir = b;
    cmd_train(c);
    c.output_dir = r;
    CHECK(cmd_train(c, {.stop_after = 2}) == 2);
    CHECK_FALSE(fs::exists(r / "checkpoints" / "task_002.tka"));
    CHECK(cmd_train(c) == c.tasks);

    const std::string last = "checkpoints/task_003.tka";
    CHECK(slurp(a / last) == slurp(b / last));
    CHECK(slurp(a / last) == slurp(r / last));
    CHECK(slurp(a / "store.tka") == slurp(r / "store.tka"));
    CHECK(slurp(a / "manifest.json") == slurp(r / "manifest.json"));

    // resuming into a directory of another experiment is refused
    auto other = c;
    other.hyper.lr = 1e-2;
    CHECK_THROWS_AS(cmd_train(other), std::runtime_error);
    for (const auto& d : {a, b, r}) fs::remove_all(d);
}

TEST_CASE("config validation happens before any output") {
    auto c = tiny_config();
    c.tasks = 99;
    c.output_dir = fs::temp_directory_path() / "tuka_test_never_created";
    fs::remove_all(c.output_dir);
    CHECK_THROWS_AS(cmd_train(c), ConfigError);
    CHECK_FALSE(fs::exists(c.output_dir));
}

TEST_CASE("retrieved and oracle expert ids score alike on separated clusters") {
    auto c = tiny_config();
    c.output_dir = scratch_dir("eval");
    cmd_train(c);
    const auto retrieved = cmd_eval(c.output_dir, true);
    const auto oracle = cmd_eval(c.output_dir, false);
    REQUIRE(retrieved.retrieval_accuracy() == 1.0);
    CHECK(retrieved.scores == oracle.scores);
    CHECK(fs::exists(c.output_dir / "scores.json"));
    fs::remove_all(c.output_dir);
}

TEST_CASE("reference cache hit and corrupt cache") {
    auto c = tiny_config();
    c.tasks = 2;
    c.output_dir = scratch_dir("ref");
    const auto first = cmd_reference(c);
    CHECK_FALSE(first.cache_hit);
    const auto again = cmd_reference(c);
    CHECK(again.cache_hit);
    CHECK(again.scores == first.scores);

    {
        std::ofstream f(c.output_dir / "reference.json", std::ios::trunc);
        f << "{ not json";
    }
    const auto redone = cmd_reference(c);
    CHECK_FALSE(redone.cache_hit);
    CHECK(redone.scores == first.scores);
    CHECK(cmd_reference(c).cache_hit);
    fs::remove_all(c.output_dir);
}

TEST_CASE("report needs scores and merges the reference") {
    auto c = tiny_config();
    c.tasks = 2;
    c.output_dir = scratch_dir("report");
    CHECK_THROWS_AS(cmd_report(c.output_dir), std::runtime_error);
    cmd_reference(c);
    cmd_eval(c.output_dir);
    const auto report = cmd_report(c.output_dir);
    REQUIRE(report.tasks.size() == 2);
    // the last task is evaluated right after its own training: zero forgetting
    if (report.tasks[1].f_sr) CHECK(*report.tasks[1].f_sr == 0.0);
    CHECK(fs::exists(c.output_dir / "report.csv"));
    fs::remove_all(c.output_dir);
}

TEST_CASE("eval errors") {
    CHECK_THROWS_AS(cmd_eval(scratch_dir("missing")), std::runtime_error);
    const auto c = tiny_config();
    const Experiment ex(c);
    std::vector<TaskData> data{ex.task_data(0)};
    data[0].test.clear();
    CHECK_THROWS_AS(evaluate(ex, ex.initial_state(), {0}, data, false), std::invalid_argument);
}

TEST_CASE("in-memory stream matches the on-disk pipeline") {
    auto c = tiny_config();
    c.tasks = 3;
    c.output_dir = scratch_dir("match");
    const auto run = run_stream(Experiment(c));
    const auto ref = cmd_reference(c);
    const auto eval = cmd_eval(c.output_dir);
    REQUIRE(run.reference.size() == 3);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(run.reference[t] == ref.scores[t]);
        CHECK(run.final.scores[t].sr == eval.scores[t].sr);
        CHECK(run.final.scores[t].spl == eval.scores[t].spl);
        CHECK(run.final.scores[t].osr == eval.scores[t].osr);
    }
    fs::remove_all(c.output_dir);
}

TEST_CASE("gradcheck passes on every adapter kind") {
    for (auto kind : {AdapterKind::tuka, AdapterKind::tuka3, AdapterKind::tuka5, AdapterKind::lora, AdapterKind::moe,
                      AdapterKind::abc}) {
        CAPTURE(to_string(kind));
        const auto entries = gradcheck(tiny_config(kind));
        REQUIRE_FALSE(entries.empty());
        for (const auto& e : entries) {
            CAPTURE(e.block);
            CHECK(e.pass);
            CHECK(e.max_rel_error < 1e-4);
        }
    }
}
