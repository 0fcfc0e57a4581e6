// SPDX-License-Identifier: Apache-2.0
#include "tuka/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tuka/archive.hpp"
#include "tuka/error.hpp"

namespace tuka {

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DimensionError("position dimensions differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

std::string fmt_exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_exact(*v) : std::string(); }

std::optional<double> mean_defined(const std::vector<std::optional<double>>& values) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& v : values)
        if (v) {
            sum += *v;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> json_opt(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

}  // namespace

double path_length(const std::vector<std::vector<double>>& points) {
    double total = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) total += distance(points[i - 1], points[i]);
    return total;
}

void validate(const EpisodeRecord& rec) {
    if (rec.trajectory.empty()) throw std::invalid_argument("episode record has an empty trajectory");
    if (!(rec.tl_ref > 0.0)) throw std::invalid_argument("episode record needs a positive reference length");
    if (!(rec.epsilon > 0.0)) throw std::invalid_argument("episode record needs a positive success radius");
    if (rec.tl < 0.0) throw std::invalid_argument("episode record has a negative trajectory length");
    const double measured = path_length(rec.trajectory);
    if (std::abs(measured - rec.tl) > 1e-9 * std::max(1.0, measured))
        throw std::invalid_argument("episode record length " + fmt_exact(rec.tl) + " disagrees with its trajectory (" +
                                    fmt_exact(measured) + ")");
}

int success_rate(const EpisodeRecord& rec) {
    if (rec.trajectory.empty()) throw std::invalid_argument("episode record has an empty trajectory");
    return distance(rec.trajectory.back(), rec.goal) <= rec.epsilon ? 1 : 0;
}

int oracle_success(const EpisodeRecord& rec) {
    if (rec.trajectory.empty()) throw std::invalid_argument("episode record has an empty trajectory");
    for (const auto& p : rec.trajectory)
        if (distance(p, rec.goal) <= rec.epsilon) return 1;
    return 0;
}

double spl(const EpisodeRecord& rec, SplConvention convention) {
    if (!(rec.tl_ref > 0.0)) throw std::invalid_argument("SPL needs a positive reference length");
    const int sr = success_rate(rec);
    if (sr == 0) return 0.0;
    if (convention == SplConvention::literal) return rec.tl / rec.tl_ref;
    return rec.tl_ref / std::max(rec.tl, rec.tl_ref);
}

TaskScore score_episodes(std::size_t task, const std::vector<EpisodeRecord>& records, SplConvention convention) {
    if (records.empty()) throw std::invalid_argument("cannot score task " + std::to_string(task) + ": no episodes");
    TaskScore s;
    s.task = task;
    s.episodes = records.size();
    for (const auto& r : records) {
        s.sr += success_rate(r);
        s.osr += oracle_success(r);
        s.spl += spl(r, convention);
    }
    const double n = static_cast<double>(records.size());
    s.sr /= n;
    s.osr /= n;
    s.spl /= n;
    return s;
}

std::optional<double> forgetting_rate(std::optional<double> reference, double value) {
    if (!reference || !(*reference > 0.0)) return std::nullopt;
    return (*reference - value) / *reference;
}

ForgettingRates forgetting_rates(const TaskScore& score) {
    return {forgetting_rate(score.m_sr, score.sr), forgetting_rate(score.m_spl, score.spl),
            forgetting_rate(score.m_osr, score.osr)};
}

Report aggregate(const std::vector<TaskScore>& scores) {
    if (scores.empty()) throw std::invalid_argument("no task scores to aggregate");
    Report report;
    std::vector<std::optional<double>> fsr, fspl, fosr;
    double sr = 0, sp = 0, os = 0;
    for (const auto& s : scores) {
        const auto f = forgetting_rates(s);
        report.tasks.push_back({std::to_string(s.task), s.sr, s.spl, s.osr, f.f_sr, f.f_spl, f.f_osr});
        fsr.push_back(f.f_sr);
        fspl.push_back(f.f_spl);
        fosr.push_back(f.f_osr);
        sr += s.sr;
        sp += s.spl;
        os += s.osr;
    }
    const double n = static_cast<double>(scores.size());
    report.average = {"avg", sr / n, sp / n, os / n, mean_defined(fsr), mean_defined(fspl), mean_defined(fosr)};
    return report;
}

std::string report_csv(const Report& report) {
    std::ostringstream out;
    out << "task,sr,spl,osr,f_sr,f_spl,f_osr\n";
    auto row = [&out](const ReportRow& r) {
        out << r.label << ',' << fmt_exact(r.sr) << ',' << fmt_exact(r.spl) << ',' << fmt_exact(r.osr) << ','
            << fmt_opt(r.f_sr) << ',' << fmt_opt(r.f_spl) << ',' << fmt_opt(r.f_osr) << '\n';
    };
    for (const auto& r : report.tasks) row(r);
    row(report.average);
    return out.str();
}

std::string report_json(const Report& report) {
    auto row = [](const ReportRow& r) {
        return nlohmann::json{{"task", r.label},          {"sr", r.sr},
                              {"spl", r.spl},             {"osr", r.osr},
                              {"f_sr", opt_json(r.f_sr)}, {"f_spl", opt_json(r.f_spl)},
                              {"f_osr", opt_json(r.f_osr)}};
    };
    nlohmann::json j;
    j["tasks"] = nlohmann::json::array();
    for (const auto& r : report.tasks) j["tasks"].push_back(row(r));
    j["average"] = row(report.average);
    return j.dump(2) + "\n";
}

std::string report_text(const Report& report) {
    std::ostringstream out;
    char buf[160];
    auto pct = [](const std::optional<double>& v) {
        char b[16];
        if (!v) return std::string("    n/a");
        std::snprintf(b, sizeof b, "%7.1f", 100.0 * *v);
        return std::string(b);
    };
    std::snprintf(buf, sizeof buf, "%-6s %7s %7s %7s %7s %7s %7s\n", "task", "SR", "SPL", "OSR", "F-SR", "F-SPL", "F-OSR");
    out << buf;
    auto row = [&](const ReportRow& r) {
        std::snprintf(buf, sizeof buf, "%-6s %7.1f %7.1f %7.1f %s %s %s\n", r.label.c_str(), 100.0 * r.sr,
                      100.0 * r.spl, 100.0 * r.osr, pct(r.f_sr).c_str(), pct(r.f_spl).c_str(), pct(r.f_osr).c_str());
        out << buf;
    };
    for (const auto& r : report.tasks) row(r);
    out << std::string(55, '-') << '\n';
    row(report.average);
    return out.str();
}

Report parse_report_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line != "task,sr,spl,osr,f_sr,f_spl,f_osr") throw ParseError("unexpected report header", 0);
    std::size_t offset = line.size() + 1;
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != 7) throw ParseError("report row needs 7 fields", offset);
        auto opt = [](const std::string& c) -> std::optional<double> {
            if (c.empty()) return std::nullopt;
            return std::stod(c);
        };
        rows.push_back({cells[0], std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]), opt(cells[4]),
                        opt(cells[5]), opt(cells[6])});
        offset += line.size() + 1;
    }
    if (rows.empty() || rows.back().label != "avg") throw ParseError("report lacks an average row", offset);
    Report r;
    r.average = rows.back();
    rows.pop_back();
    r.tasks = std::move(rows);
    return r;
}

Report parse_report_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    auto row = [](const nlohmann::json& x) {
        return ReportRow{x.at("task").get<std::string>(), x.at("sr").get<double>(), x.at("spl").get<double>(),
                         x.at("osr").get<double>(),       json_opt(x.at("f_sr")),   json_opt(x.at("f_spl")),
                         json_opt(x.at("f_osr"))};
    };
    Report r;
    for (const auto& x : j.at("tasks")) r.tasks.push_back(row(x));
    r.average = row(j.at("average"));
    return r;
}

void write_report(const std::filesystem::path& dir, const Report& report) {
    write_file_atomic(dir / "report.csv", report_csv(report));
    write_file_atomic(dir / "report.json", report_json(report));
    write_file_atomic(dir / "report.txt", report_text(report));
}

}  // namespace tuka
