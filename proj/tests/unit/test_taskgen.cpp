// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "tuka/error.hpp"
#include "tuka/taskgen.hpp"

using namespace tuka;
using namespace tuka::testing;

namespace {

std::vector<Matrix> random_deltas(std::mt19937_64& rng, const ToyBackbone& net, double scale) {
    std::vector<Matrix> d;
    for (const auto& l : net.layers) d.push_back(random_matrix(rng, l.weight.rows(), l.weight.cols(), scale));
    return d;
}

}  // namespace

TEST_CASE("stream covers every pair exactly once") {
    const auto s = gen_stream(5, 4, 20, 3);
    REQUIRE(s.size() == 20);
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t t = 0; t < s.size(); ++t) {
        CHECK(s[t].index == t);
        CHECK(s[t].scene < 5);
        CHECK(s[t].env < 4);
        pairs.emplace(s[t].scene, s[t].env);
    }
    CHECK(pairs.size() == 20);

    CHECK(gen_stream(5, 4, 1, 3).size() == 1);
    CHECK(gen_stream(5, 4, 20, 3) == s);
    CHECK(gen_stream(5, 4, 20, 4) != s);
    CHECK_THROWS_AS(gen_stream(5, 4, 21, 3), ConfigError);

    const auto with_instr = gen_stream(3, 3, 9, 1, 3);
    std::set<std::size_t> instrs;
    for (const auto& t : with_instr) instrs.insert(t.instr);
    CHECK(instrs.size() > 1);
}

TEST_CASE("forward with merged and separate deltas agree") {
    const World w = make_world(tiny_config().world);
    std::mt19937_64 rng(2);
    for (int i = 0; i < 20; ++i) {
        const auto deltas = random_deltas(rng, w.backbone, 0.3);
        const auto obs = random_vector(rng, w.config.dims.obs_dim);
        const auto instr = random_vector(rng, w.config.dims.instr_dim);
        const auto a = forward(w.backbone, deltas, obs, instr);
        const auto b = forward_merged(w.backbone, merged_weights(w.backbone, deltas), concat_input(obs, instr));
        CHECK(max_abs_diff(a, b) <= 1e-12);
    }
    const auto obs = random_vector(rng, w.config.dims.obs_dim);
    const auto instr = random_vector(rng, w.config.dims.instr_dim);
    std::vector<Matrix> zeros;
    for (const auto& l : w.backbone.layers) zeros.emplace_back(l.weight.rows(), l.weight.cols());
    CHECK(forward(w.backbone, zeros, obs, instr) == forward(w.backbone, {}, obs, instr));
}

TEST_CASE("one-layer forward matches hand arithmetic and is linear in the delta") {
    WorldConfig cfg = tiny_config().world;
    cfg.dims.layers = 1;
    const World w = make_world(cfg);
    std::mt19937_64 rng(4);
    const auto x = random_vector(rng, cfg.dims.input_dim());
    const std::vector<double> obs(x.begin(), x.begin() + cfg.dims.obs_dim), instr(x.begin() + cfg.dims.obs_dim, x.end());
    const auto d1 = random_deltas(rng, w.backbone, 1.0), d2 = random_deltas(rng, w.backbone, 1.0);

    const auto& layer = w.backbone.layers[0];
    std::vector<double> want(kActionCount);
    for (std::size_t r = 0; r < kActionCount; ++r) {
        want[r] = layer.bias[r];
        for (std::size_t c = 0; c < x.size(); ++c) want[r] += (layer.weight(r, c) + d1[0](r, c)) * x[c];
    }
    CHECK(max_abs_diff(forward(w.backbone, d1, obs, instr), want) <= 1e-12);

    const double a = 0.7, b = -1.3;
    const std::vector<Matrix> mix{a * d1[0] + b * d2[0]};
    const auto f0 = forward(w.backbone, {}, obs, instr), f1 = forward(w.backbone, d1, obs, instr),
               f2 = forward(w.backbone, d2, obs, instr), fm = forward(w.backbone, mix, obs, instr);
    for (std::size_t r = 0; r < kActionCount; ++r)
        CHECK(fm[r] - f0[r] == doctest::Approx(a * (f1[r] - f0[r]) + b * (f2[r] - f0[r])).epsilon(1e-12));

    CHECK_THROWS_AS(forward(w.backbone, random_deltas(rng, w.backbone, 1.0), obs, std::vector<double>(1)), DimensionError);
}

TEST_CASE("episodes are deterministic and clustered") {
    const World w = make_world(WorldConfig{});
    const auto stream = gen_stream(5, 4, 20, 1);
    const auto& task = stream[0];
    CHECK(gen_episode(w, task, 17).obs == gen_episode(w, task, 17).obs);
    CHECK(gen_episode(w, task, 17).actions == gen_episode(w, task, 17).actions);
    CHECK(gen_episode(w, task, 17).obs != gen_episode(w, task, 18).obs);

    // per-episode query means stay near the scene + environment centroid
    const auto& d = w.config.dims;
    std::vector<double> centre(d.obs_dim);
    for (std::size_t i = 0; i < d.obs_dim; ++i) centre[i] = w.scene_means[task.scene][i] + w.env_means[task.env][i];
    const double sigma = w.config.obs_noise * std::sqrt(static_cast<double>(d.obs_dim));
    int near = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto q = episode_query(gen_episode(w, task, s), 1);
        double dist = 0.0;
        for (std::size_t i = 0; i < d.obs_dim; ++i) dist += (q[i] - centre[i]) * (q[i] - centre[i]);
        near += std::sqrt(dist) < 3.0 * sigma;
    }
    CHECK(near >= 99);

    for (const auto& t : stream) {
        const auto ep = gen_episode(w, t, 5);
        CHECK(ep.obs.size() == w.config.horizon);
        CHECK(ep.actions.size() <= w.config.horizon);
        for (int a : ep.actions) CHECK((a >= 0 && a < 4));
        CHECK(ep.tl_ref > 0.0);
        CHECK(std::hypot(ep.goal[0], ep.goal[1]) > w.config.epsilon);
    }
}

TEST_CASE("a teacher without scene and environment parts labels tasks alike") {
    WorldConfig cfg;
    cfg.scene_scale = 0.0;
    cfg.env_scale = 0.0;
    const World w = make_world(cfg);
    const TaskDescriptor a{0, 0, 0, 0, 1}, b{1, 3, 2, 0, 1};
    for (std::size_t l = 0; l < cfg.dims.layers; ++l) CHECK(teacher_weight(w, l, a.key()) == teacher_weight(w, l, b.key()));
    // the teacher reads only the cue dims, which carry no cluster offset
    for (std::uint64_t s = 0; s < 20; ++s) CHECK(gen_episode(w, a, s).actions == gen_episode(w, b, s).actions);
}

TEST_CASE("teacher rollout reaches its own goal") {
    const World w = make_world(WorldConfig{});
    const auto stream = gen_stream(5, 4, 20, 2);
    for (std::size_t t = 0; t < 5; ++t) {
        std::vector<Matrix> teacher;
        for (std::size_t l = 0; l < w.config.dims.layers; ++l) teacher.push_back(teacher_weight(w, l, stream[t].key()));
        const auto ep = gen_episode(w, stream[t], 9);
        const auto rec = rollout(w, teacher, ep);
        CHECK(success_rate(rec) == 1);
        CHECK(spl(rec) == 1.0);
        CHECK_NOTHROW(validate(rec));
    }
}

TEST_CASE("out-of-capacity task is rejected") {
    const World w = make_world(tiny_config().world);
    CHECK_THROWS_AS(gen_episode(w, TaskDescriptor{0, 7, 0, 0, 1}, 1), IndexError);
}

TEST_CASE("task data dump round trip") {
    const auto c = tiny_config();
    const World w = make_world(c.world);
    const auto task = gen_stream(c.world.scenes, c.world.envs, 1, 5)[0];
    const auto data = gen_task_data(w, task, 4, 3);
    const auto dir = scratch_dir("taskdump");
    dump_task_data(dir, data, c.world);
    const auto back = load_task_data(dir);
    CHECK(back.task == data.task);
    REQUIRE(back.train.size() == 4);
    REQUIRE(back.test.size() == 3);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(back.train[i].obs == data.train[i].obs);
        CHECK(back.train[i].actions == data.train[i].actions);
        CHECK(back.train[i].instr == data.train[i].instr);
        CHECK(back.train[i].goal == data.train[i].goal);
        CHECK(back.train[i].tl_ref == data.train[i].tl_ref);
        CHECK(back.train[i].key == data.train[i].key);
    }
    std::filesystem::remove_all(dir);
}
