// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tuka {

/// One navigation episode as seen by the metric suite. Positions may be 2-D
/// or 3-D but must all share the goal's dimension.
struct EpisodeRecord {
    std::vector<std::vector<double>> trajectory;
    std::vector<double> goal;
    double tl_ref = 1.0;   // reference path length
    double tl = 0.0;       // travelled length, must equal the polyline length
    double epsilon = 3.0;  // success radius
};

/// Sum of segment lengths of a polyline.
double path_length(const std::vector<std::vector<double>>& points);

/// Throws std::invalid_argument when a record breaks its invariants.
void validate(const EpisodeRecord& rec);

/// 1 when the final position lies within epsilon of the goal.
int success_rate(const EpisodeRecord& rec);
/// 1 when any visited position lies within epsilon of the goal.
int oracle_success(const EpisodeRecord& rec);

enum class SplConvention {
    standard,  // SR · TL_ref / max(TL, TL_ref)
    literal,   // SR · TL / TL_ref
};
double spl(const EpisodeRecord& rec, SplConvention convention = SplConvention::standard);

struct TaskScore {
    std::size_t task = 0;
    std::size_t episodes = 0;
    double sr = 0.0;
    double spl = 0.0;
    double osr = 0.0;
    std::optional<double> m_sr;
    std::optional<double> m_spl;
    std::optional<double> m_osr;

    bool operator==(const TaskScore&) const = default;
};

/// Means over a task's episodes.
TaskScore score_episodes(std::size_t task, const std::vector<EpisodeRecord>& records,
                         SplConvention convention = SplConvention::standard);

/// (M − X) / M; empty when the reference is missing or not positive.
std::optional<double> forgetting_rate(std::optional<double> reference, double value);

struct ForgettingRates {
    std::optional<double> f_sr;
    std::optional<double> f_spl;
    std::optional<double> f_osr;
};
ForgettingRates forgetting_rates(const TaskScore& score);

struct ReportRow {
    std::string label;  // task number or "avg"
    double sr = 0.0, spl = 0.0, osr = 0.0;
    std::optional<double> f_sr, f_spl, f_osr;

    bool operator==(const ReportRow&) const = default;
};

struct Report {
    std::vector<ReportRow> tasks;
    ReportRow average;
};

/// Per-task rows plus a mean row. Forgetting means skip undefined entries.
Report aggregate(const std::vector<TaskScore>& scores);

std::string report_csv(const Report& report);
std::string report_json(const Report& report);
std::string report_text(const Report& report);

Report parse_report_csv(const std::string& text);
Report parse_report_json(const std::string& text);

/// Writes report.csv, report.json and report.txt into `dir`.
void write_report(const std::filesystem::path& dir, const Report& report);

}  // namespace tuka
