#pragma once

// Run outputs: metrics CSV, summary JSON, run manifests, and the aggregated
// report rows written by ablations and sweeps.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "seca/config.hpp"
#include "seca/trainer.hpp"

namespace seca {

constexpr int kManifestVersion = 1;
constexpr int kReportVersion = 1;

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

struct RunRecord {
    std::uint64_t seed = 0;
    Metrics metrics;
};

struct ReportRow {
    std::string variant;
    std::vector<std::uint64_t> seeds;
    double last = 0.0;             // mean over seeds
    double avg = 0.0;              // mean over seeds
    std::vector<double> per_task;  // mean over seeds
    std::vector<double> last_per_seed;
};

ReportRow aggregate_row(const std::string& variant, const std::vector<RunRecord>& runs);

std::string metrics_csv(const Metrics& m, const std::vector<std::size_t>& seen_classes);
nlohmann::ordered_json summary_json(const Metrics& m);

nlohmann::ordered_json manifest_json(const std::string& command, const RunConfig& cfg,
                                     const std::vector<std::uint64_t>& seeds, const nlohmann::ordered_json& extra = {});

nlohmann::ordered_json rows_json(const std::vector<ReportRow>& rows);
std::vector<ReportRow> rows_from_json(const nlohmann::json& j);

enum class ReportFormat { kCsv, kJson, kMd };
ReportFormat parse_report_format(const std::string& name);
std::string format_rows(const std::vector<ReportRow>& rows, ReportFormat fmt);
/// Columns: task, variant, acc (seed-mean accuracy after each task).
std::string curves_csv(const std::vector<ReportRow>& rows);

/// Parses a table produced by format_rows(kCsv).
std::vector<ReportRow> rows_from_csv(const std::string& text);

/// Text writers; every file goes through a temp-then-rename write.
void write_text(const std::filesystem::path& path, const std::string& text);
nlohmann::json read_json(const std::filesystem::path& path);

/// Rows and manifest of an output directory; manifests must carry the
/// current format versions.
std::vector<ReportRow> load_rows(const std::filesystem::path& dir);

}  // namespace seca
