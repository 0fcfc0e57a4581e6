// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "tuka/error.hpp"
#include "tuka/retrieval.hpp"
#include "tuka/taskgen.hpp"

using namespace tuka;

namespace {

using Vec = std::vector<double>;

Vec random_vec(std::mt19937_64& rng, std::size_t d, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Vec v(d);
    for (auto& x : v) x = n(rng);
    return v;
}

}  // namespace

TEST_CASE("centroid of one and two insertions") {
    FeatureStore s;
    store_features(s, 2, 1, Vec{1.0, -2.0, 4.0});
    CHECK(s.dim == 3);
    CHECK(s.scenes.at(2).mean == Vec{1.0, -2.0, 4.0});
    CHECK(s.envs.at(1).count == 1);

    store_features(s, 2, 1, Vec{3.0, 0.0, 1.0});
    CHECK(s.scenes.at(2).mean == Vec{2.0, -1.0, 2.5});
    CHECK(s.scenes.at(2).count == 2);
    CHECK(s.envs.at(1).mean == Vec{2.0, -1.0, 2.5});
}

TEST_CASE("centroid is the arithmetic mean regardless of order") {
    std::mt19937_64 rng(7);
    std::vector<Vec> feats;
    for (int i = 0; i < 200; ++i) feats.push_back(random_vec(rng, 6, 10.0));

    FeatureStore a, b;
    for (const auto& f : feats) store_features(a, 0, 0, f);
    auto shuffled = feats;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (const auto& f : shuffled) store_features(b, 0, 0, f);

    for (std::size_t j = 0; j < 6; ++j) {
        double sum = 0.0;
        for (const auto& f : feats) sum += f[j];
        const double mean = sum / static_cast<double>(feats.size());
        CHECK(std::abs(a.scenes.at(0).mean[j] - mean) <= 1e-12);
        CHECK(std::abs(a.scenes.at(0).mean[j] - b.scenes.at(0).mean[j]) <= 1e-12);
    }
    CHECK(a.scenes.at(0).count == 200);
}

TEST_CASE("store rejects a feature of the wrong dimension") {
    FeatureStore s;
    store_features(s, 0, 0, Vec{1.0, 2.0});
    CHECK_THROWS_AS(store_features(s, 1, 0, Vec{1.0, 2.0, 3.0}), DimensionError);
    store_instruction(s, 0, Vec{1.0});
    CHECK_THROWS_AS(store_instruction(s, 1, Vec{1.0, 0.0}), DimensionError);
}

TEST_CASE("cosine similarity") {
    const Vec v{0.3, -1.2, 2.0};
    CHECK(cosine_sim(v, v) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_sim(Vec{1.0, 0.0}, Vec{0.0, 1.0}) == 0.0);
    CHECK(cosine_sim(Vec{1.0, 0.0}, Vec{-1.0, 0.0}) == -1.0);
    CHECK_THROWS_AS(cosine_sim(Vec{0.0, 0.0}, Vec{1.0, 0.0}), std::domain_error);
    CHECK_THROWS_AS(cosine_sim(Vec{1.0}, Vec{1.0, 0.0}), DimensionError);

    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        const double c = cosine_sim(random_vec(rng, 5), random_vec(rng, 5));
        CHECK(c >= -1.0);
        CHECK(c <= 1.0);
    }
}

TEST_CASE("self-match and singleton store") {
    FeatureStore s;
    store_features(s, 0, 0, Vec{1.0, 0.0, 0.0});
    store_features(s, 1, 1, Vec{0.0, 1.0, 0.0});
    store_features(s, 2, 0, Vec{0.0, 0.0, 1.0});
    CHECK(search_experts(s, Vec{0.0, 1.0, 0.0}) == ExpertMatch{1, 1, std::nullopt});
    CHECK(search_experts(s, s.scenes.at(2).mean).scene == 2);

    FeatureStore one;
    store_features(one, 4, 3, Vec{1.0, 1.0});
    std::mt19937_64 rng(11);
    for (int i = 0; i < 20; ++i) {
        const auto m = search_experts(one, random_vec(rng, 2));
        CHECK(m.scene == 4);
        CHECK(m.env == 3);
    }
}

TEST_CASE("ties go to the lowest key") {
    FeatureStore s;
    store_features(s, 5, 5, Vec{1.0, 0.0});
    store_features(s, 2, 2, Vec{2.0, 0.0});
    CHECK(best_key(s.scenes, Vec{1.0, 0.0}) == 2);
}

TEST_CASE("empty store and mismatched queries") {
    FeatureStore s;
    CHECK_THROWS_AS(search_experts(s, Vec{1.0}), std::invalid_argument);
    store_features(s, 0, 0, Vec{1.0, 0.0});
    CHECK_THROWS_AS(search_experts(s, Vec{1.0}), DimensionError);
}

TEST_CASE("search is invariant to positive rescaling") {
    std::mt19937_64 rng(21);
    FeatureStore s;
    for (std::size_t k = 0; k < 6; ++k) store_features(s, k, k % 3, random_vec(rng, 8));
    for (int i = 0; i < 200; ++i) {
        const Vec q = random_vec(rng, 8);
        const auto ref = search_experts(s, q);
        for (double scale : {1e-6, 0.5, 3.0, 1e6}) {
            Vec r = q;
            for (auto& x : r) x *= scale;
            CHECK(search_experts(s, r) == ref);
        }
    }
}

TEST_CASE("adding a less similar key leaves the match unchanged") {
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 100; ++trial) {
        FeatureStore s;
        for (std::size_t k = 0; k < 4; ++k) store_features(s, k, k, random_vec(rng, 5));
        const Vec q = random_vec(rng, 5);
        const auto before = search_experts(s, q);
        const double best_scene = cosine_sim(q, s.scenes.at(before.scene).mean);
        const double best_env = cosine_sim(q, s.envs.at(before.env).mean);

        Vec extra = random_vec(rng, 5);
        if (cosine_sim(q, extra) >= std::min(best_scene, best_env)) continue;
        store_features(s, 9, 9, extra);
        CHECK(search_experts(s, q) == before);
    }
}

TEST_CASE("instruction matching only when the store has instructions") {
    FeatureStore s;
    store_features(s, 0, 0, Vec{1.0, 0.0});
    CHECK_FALSE(search_experts(s, Vec{1.0, 0.0}, Vec{1.0}).instr.has_value());
    store_instruction(s, 0, Vec{1.0, 0.0});
    store_instruction(s, 1, Vec{0.0, 1.0});
    CHECK(search_experts(s, Vec{1.0, 0.0}, Vec{0.1, 0.9}).instr == 1u);
}

TEST_CASE("clustered observation features are retrieved accurately") {
    WorldConfig wc;  // default 5 scenes x 4 environments
    const World world = make_world(wc);
    const auto stream = gen_stream(wc.scenes, wc.envs, wc.scenes * wc.envs, 5);

    FeatureStore s;
    for (const auto& task : stream)
        for (std::uint64_t i = 0; i < 10; ++i)
            store_features(s, task.scene, task.env, episode_query(gen_episode(world, task, mix_seed(task.seed, i)), wc.query_steps));

    std::size_t correct = 0, total = 0;
    for (const auto& task : stream)
        for (std::uint64_t i = 0; i < 50; ++i) {
            const auto ep = gen_episode(world, task, mix_seed(task.seed, 1000 + i));
            const auto m = search_experts(s, episode_query(ep, wc.query_steps));
            correct += m.scene == task.scene && m.env == task.env;
            ++total;
        }
    REQUIRE(total == 1000);
    CHECK(static_cast<double>(correct) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("store round trip is lossless") {
    std::mt19937_64 rng(41);
    FeatureStore s;
    for (std::size_t k = 0; k < 5; ++k) store_features(s, k, 4 - k, random_vec(rng, 7, 1e3));
    store_instruction(s, 0, random_vec(rng, 3));
    const auto dir = tuka::testing::scratch_dir("store");
    save_store(dir / "store.tka", s);
    CHECK(load_store(dir / "store.tka") == s);
    std::filesystem::remove_all(dir);
}
