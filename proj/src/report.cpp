#include "seca/report.hpp"

#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "seca/checkpoint.hpp"
#include "seca/datastream.hpp"
#include "seca/errors.hpp"

namespace seca {

using nlohmann::json;
using nlohmann::ordered_json;

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

ReportRow aggregate_row(const std::string& variant, const std::vector<RunRecord>& runs) {
    require(!runs.empty(), ErrorCode::kInvalidInput, "report row without runs");
    ReportRow row;
    row.variant = variant;
    const std::size_t tasks = runs.front().metrics.per_task.size();
    row.per_task.assign(tasks, 0.0);
    for (const auto& r : runs) {
        require(r.metrics.per_task.size() == tasks, ErrorCode::kIncompatible, "runs differ in task count");
        row.seeds.push_back(r.seed);
        row.last_per_seed.push_back(r.metrics.last);
        row.last += r.metrics.last;
        row.avg += r.metrics.avg;
        for (std::size_t t = 0; t < tasks; ++t) row.per_task[t] += r.metrics.per_task[t];
    }
    const double inv = 1.0 / static_cast<double>(runs.size());
    row.last *= inv;
    row.avg *= inv;
    for (double& v : row.per_task) v *= inv;
    return row;
}

std::string metrics_csv(const Metrics& m, const std::vector<std::size_t>& seen_classes) {
    std::string out = "task,seen_classes,acc\n";
    for (std::size_t t = 0; t < m.per_task.size(); ++t)
        out += std::to_string(t + 1) + "," + std::to_string(seen_classes.at(t)) + "," + format_double(m.per_task[t]) + "\n";
    return out;
}

ordered_json summary_json(const Metrics& m) {
    ordered_json j;
    j["last"] = m.last;
    j["avg"] = m.avg;
    j["per_task"] = m.per_task;
    return j;
}

ordered_json manifest_json(const std::string& command, const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                           const ordered_json& extra) {
    ordered_json j;
    j["tool"] = "seca";
    j["command"] = command;
    j["format_versions"] = {{"manifest", kManifestVersion},
                            {"report", kReportVersion},
                            {"checkpoint", kCheckpointVersion},
                            {"feature_bank", data::kFeatureBankVersion}};
    j["seeds"] = seeds;
    j["derived_seeds"] = {{"data", cfg.data_seed()}, {"encoder", cfg.encoder_seed()}, {"init", cfg.init_seed()}};
    j["config"] = to_json(cfg);
    if (!extra.is_null())
        for (const auto& [k, v] : extra.items()) j[k] = v;
    return j;
}

ordered_json rows_json(const std::vector<ReportRow>& rows) {
    ordered_json arr = ordered_json::array();
    for (const auto& r : rows) {
        ordered_json j;
        j["variant"] = r.variant;
        j["seeds"] = r.seeds;
        j["last"] = r.last;
        j["avg"] = r.avg;
        j["per_task"] = r.per_task;
        j["last_per_seed"] = r.last_per_seed;
        arr.push_back(j);
    }
    return ordered_json{{"report_version", kReportVersion}, {"rows", arr}};
}

std::vector<ReportRow> rows_from_json(const json& j) {
    try {
        if (j.at("report_version").get<int>() != kReportVersion)
            fail(ErrorCode::kIncompatible, "report version " + j.at("report_version").dump() + " is not supported");
        std::vector<ReportRow> rows;
        for (const auto& r : j.at("rows")) {
            ReportRow row;
            row.variant = r.at("variant").get<std::string>();
            row.seeds = r.at("seeds").get<std::vector<std::uint64_t>>();
            row.last = r.at("last").get<double>();
            row.avg = r.at("avg").get<double>();
            row.per_task = r.at("per_task").get<std::vector<double>>();
            row.last_per_seed = r.at("last_per_seed").get<std::vector<double>>();
            rows.push_back(std::move(row));
        }
        return rows;
    } catch (const json::exception& e) {
        fail(ErrorCode::kInvalidInput, std::string("malformed report rows: ") + e.what());
    }
}

ReportFormat parse_report_format(const std::string& name) {
    if (name == "csv") return ReportFormat::kCsv;
    if (name == "json") return ReportFormat::kJson;
    if (name == "md") return ReportFormat::kMd;
    fail(ErrorCode::kInvalidConfig, "unknown report format '" + name + "' (csv, json, md)");
}

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

std::string fixed2(double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << v;
    return os.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        fail(ErrorCode::kInvalidInput, "not a number: '" + s + "'");
    return v;
}

}  // namespace

std::string format_rows(const std::vector<ReportRow>& rows, ReportFormat fmt) {
    if (fmt == ReportFormat::kJson) return rows_json(rows).dump(2) + "\n";
    if (fmt == ReportFormat::kCsv) {
        // seeds and per-task values are ';'-separated inside their cells
        std::string out = "variant,last,avg,seeds,per_task\n";
        for (const auto& r : rows) {
            std::vector<std::string> seeds, tasks;
            for (auto s : r.seeds) seeds.push_back(std::to_string(s));
            for (double v : r.per_task) tasks.push_back(format_double(v));
            out += r.variant + "," + format_double(r.last) + "," + format_double(r.avg) + "," + join(seeds, ";") + "," +
                   join(tasks, ";") + "\n";
        }
        return out;
    }
    std::string out = "| variant | Last | Avg | seeds |\n|---|---:|---:|---|\n";
    for (const auto& r : rows) {
        std::vector<std::string> seeds;
        for (auto s : r.seeds) seeds.push_back(std::to_string(s));
        out += "| " + r.variant + " | " + fixed2(r.last) + " | " + fixed2(r.avg) + " | " + join(seeds, ", ") + " |\n";
    }
    return out;
}

std::vector<ReportRow> rows_from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);
    require(line == "variant,last,avg,seeds,per_task", ErrorCode::kInvalidInput, "unexpected report CSV header");
    std::vector<ReportRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        require(cells.size() == 5, ErrorCode::kInvalidInput, "report CSV row needs 5 cells");
        ReportRow r;
        r.variant = cells[0];
        r.last = parse_double(cells[1]);
        r.avg = parse_double(cells[2]);
        if (!cells[3].empty())
            for (const auto& s : split(cells[3], ';')) r.seeds.push_back(std::stoull(s));
        if (!cells[4].empty())
            for (const auto& s : split(cells[4], ';')) r.per_task.push_back(parse_double(s));
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string curves_csv(const std::vector<ReportRow>& rows) {
    std::string out = "task,variant,acc\n";
    for (const auto& r : rows)
        for (std::size_t t = 0; t < r.per_task.size(); ++t)
            out += std::to_string(t + 1) + "," + r.variant + "," + format_double(r.per_task[t]) + "\n";
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) { write_file_atomic(path, text); }

json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        fail(ErrorCode::kInvalidInput, path.string() + ": " + e.what());
    }
}

std::vector<ReportRow> load_rows(const std::filesystem::path& dir) {
    const json manifest = read_json(dir / "manifest.json");
    bool compatible = false;
    try {
        const auto& versions = manifest.at("format_versions");
        compatible = versions.at("manifest").get<int>() == kManifestVersion &&
                     versions.at("report").get<int>() == kReportVersion;
    } catch (const json::exception&) {
        compatible = false;
    }
    if (!compatible) fail(ErrorCode::kIncompatible, dir.string() + ": manifest format versions differ from this build");
    return rows_from_json(read_json(dir / "rows.json"));
}

}  // namespace seca
