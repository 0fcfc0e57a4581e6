// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "tuka/error.hpp"
#include "tuka/metrics.hpp"

using namespace tuka;

namespace {

using Path = std::vector<std::vector<double>>;

EpisodeRecord record(Path traj, std::vector<double> goal, double tl_ref = 1.0, double eps = 3.0) {
    EpisodeRecord r;
    r.tl = path_length(traj);
    r.trajectory = std::move(traj);
    r.goal = std::move(goal);
    r.tl_ref = tl_ref;
    r.epsilon = eps;
    return r;
}

}  // namespace

TEST_CASE("success rate boundaries") {
    CHECK(success_rate(record({{0, 0}, {4, 0}}, {4, 0})) == 1);
    CHECK(success_rate(record({{0, 0}, {3, 0}}, {6, 0})) == 1);   // distance == epsilon
    CHECK(success_rate(record({{0, 0}, {0, 0}}, {6, 0})) == 0);   // distance 2 epsilon
    CHECK(success_rate(record({{0, 0, 0}, {1, 1, 1}}, {1, 1, 1})) == 1);
    EpisodeRecord empty;
    empty.goal = {0, 0};
    CHECK_THROWS_AS(success_rate(empty), std::invalid_argument);
    CHECK_THROWS_AS(oracle_success(empty), std::invalid_argument);
}

TEST_CASE("oracle success counts any visited point") {
    const auto passthrough = record({{0, 0}, {10, 0}, {20, 0}}, {10, 0});
    CHECK(oracle_success(passthrough) == 1);
    CHECK(success_rate(passthrough) == 0);
    CHECK(oracle_success(record({{0, 0}, {10, 0}}, {0, 20})) == 0);
}

TEST_CASE("OS >= SR and SPL <= SR on random records") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int i = 0; i < 500; ++i) {
        Path p{{0.0, 0.0}};
        const int steps = 1 + static_cast<int>(rng() % 8);
        for (int k = 0; k < steps; ++k) p.push_back({p.back()[0] + u(rng), p.back()[1] + u(rng)});
        const auto r = record(p, {u(rng) * 2, u(rng) * 2}, 0.5 + std::abs(u(rng)));
        CHECK(oracle_success(r) >= success_rate(r));
        CHECK(spl(r) <= success_rate(r));
        CHECK(spl(r) >= 0.0);
    }
}

TEST_CASE("SPL conventions") {
    const auto exact = record({{0, 0}, {5, 0}}, {5, 0}, 5.0);
    CHECK(spl(exact) == 1.0);
    CHECK(spl(exact, SplConvention::literal) == 1.0);

    const auto fail = record({{0, 0}, {5, 0}}, {50, 0}, 5.0);
    CHECK(spl(fail) == 0.0);
    CHECK(spl(fail, SplConvention::literal) == 0.0);

    const auto detour = record({{0, 0}, {5, 0}, {0, 0}, {5, 0}}, {5, 0}, 5.0);  // TL = 15
    CHECK(spl(detour) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    const auto twice = record({{0, 0}, {0, 4}, {0, 0}}, {0, 0}, 4.0);  // TL = 8
    CHECK(spl(twice) == 0.5);
    CHECK(spl(twice, SplConvention::literal) == 2.0);

    auto bad = exact;
    bad.tl_ref = 0.0;
    CHECK_THROWS_AS(spl(bad), std::invalid_argument);
}

TEST_CASE("record validation") {
    auto r = record({{0, 0}, {3, 4}}, {3, 4});
    CHECK_NOTHROW(validate(r));
    r.tl = 4.0;
    CHECK_THROWS_AS(validate(r), std::invalid_argument);
    r.tl = 5.0;
    r.epsilon = 0.0;
    CHECK_THROWS_AS(validate(r), std::invalid_argument);
    CHECK_THROWS_AS(success_rate(record({{0, 0}}, {0, 0, 0})), DimensionError);
}

TEST_CASE("forgetting rates") {
    CHECK(forgetting_rate(0.6, 0.6) == 0.0);
    CHECK(*forgetting_rate(0.8, 0.6) == doctest::Approx(0.25).epsilon(1e-15));
    const auto neg = forgetting_rate(0.64, 0.66);  // backward transfer
    REQUIRE(neg.has_value());
    CHECK(*neg < 0.0);
    CHECK_FALSE(forgetting_rate(0.0, 0.3).has_value());
    CHECK_FALSE(forgetting_rate(std::nullopt, 0.3).has_value());

    for (double c : {0.25, 0.5, 1.0}) CHECK(*forgetting_rate(0.8 * c, 0.6 * c) == doctest::Approx(0.25).epsilon(1e-14));

    TaskScore s;
    s.sr = 0.5;
    s.spl = 0.4;
    s.osr = 0.7;
    s.m_sr = 1.0;
    s.m_spl = 0.0;
    const auto f = forgetting_rates(s);
    CHECK(*f.f_sr == 0.5);
    CHECK_FALSE(f.f_spl.has_value());
    CHECK_FALSE(f.f_osr.has_value());
}

TEST_CASE("episode scoring means") {
    std::vector<EpisodeRecord> recs{record({{0, 0}, {5, 0}}, {5, 0}, 5.0), record({{0, 0}, {5, 0}}, {50, 0}, 5.0),
                                    record({{0, 0}, {30, 0}, {0, 0}}, {30, 0}, 10.0)};
    const auto s = score_episodes(3, recs);
    CHECK(s.task == 3);
    CHECK(s.episodes == 3);
    CHECK(s.sr == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(s.osr == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(s.spl == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK_THROWS_AS(score_episodes(0, {}), std::invalid_argument);
}

TEST_CASE("aggregate and report round trip") {
    SUBCASE("single task average equals the task") {
        TaskScore s{0, 10, 0.3, 0.2, 0.4, 0.6, 0.4, 0.8};
        const auto r = aggregate({s});
        CHECK(r.average.sr == 0.3);
        CHECK(r.average.f_sr == r.tasks[0].f_sr);
        CHECK(r.average.label == "avg");
    }
    SUBCASE("averages and parsers") {
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<TaskScore> scores;
        for (std::size_t t = 0; t < 7; ++t) {
            TaskScore s{t, 20, u(rng), u(rng), u(rng), {}, {}, {}};
            if (t % 3 != 0) s.m_sr = u(rng) + 0.01;
            if (t % 2 == 0) s.m_spl = u(rng);
            s.m_osr = 0.0;
            scores.push_back(s);
        }
        const auto r = aggregate(scores);
        double sr = 0, fsr = 0;
        int nf = 0;
        for (const auto& s : scores) {
            sr += s.sr;
            if (auto f = forgetting_rates(s).f_sr) fsr += *f, ++nf;
        }
        CHECK(r.average.sr == doctest::Approx(sr / 7).epsilon(1e-14));
        CHECK(*r.average.f_sr == doctest::Approx(fsr / nf).epsilon(1e-14));
        CHECK_FALSE(r.average.f_osr.has_value());

        const auto csv = parse_report_csv(report_csv(r));
        const auto json = parse_report_json(report_json(r));
        CHECK(csv.tasks == r.tasks);
        CHECK(csv.average == r.average);
        CHECK(json.tasks == r.tasks);
        CHECK(json.average == r.average);
        CHECK(report_text(r).find("avg") != std::string::npos);

        const auto dir = tuka::testing::scratch_dir("report");
        write_report(dir, r);
        for (const char* f : {"report.csv", "report.json", "report.txt"}) CHECK(std::filesystem::exists(dir / f));
        std::filesystem::remove_all(dir);
    }
    CHECK_THROWS_AS(aggregate({}), std::invalid_argument);
    CHECK_THROWS_AS(parse_report_csv("nope\n"), ParseError);
}
