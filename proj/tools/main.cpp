// seca command-line tool. Exit codes:
//   0 success
//   1 a check failed, or an unclassified runtime error
//   2 invalid arguments, configuration, or incompatible inputs
//   3 I/O failure or malformed input file
//   4 numeric divergence (NaN/Inf) or non-convergence

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "seca/checkpoint.hpp"
#include "seca/config.hpp"
#include "seca/datastream.hpp"
#include "seca/errors.hpp"
#include "seca/report.hpp"
#include "seca/theory.hpp"
#include "seca/trainer.hpp"

namespace fs = std::filesystem;
using namespace seca;

namespace {

constexpr int kExitFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::kInvalidConfig:
        case ErrorCode::kInvalidInput:
        case ErrorCode::kIncompatible:
            return kExitConfig;
        case ErrorCode::kIo:
        case ErrorCode::kBadMagic:
        case ErrorCode::kBadVersion:
        case ErrorCode::kTruncated:
        case ErrorCode::kIdOutOfRange:
            return kExitIo;
        case ErrorCode::kNumericDivergence:
        case ErrorCode::kNonConvergence:
            return kExitNumeric;
        default:
            return kExitFailed;
    }
}

std::size_t worker_count() {
    if (const char* env = std::getenv("SECA_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
        fail(ErrorCode::kInvalidConfig, "SECA_THREADS must be a positive integer");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs jobs 0..n-1 on up to SECA_THREADS workers; the first error is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& job) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!error) error = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(worker_count(), n);
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create directory " + dir.string() + ": " + ec.message());
}

RunConfig resolve_config(const std::string& path, std::optional<std::uint64_t> seed) {
    RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
    if (seed) cfg.seed = *seed;
    cfg.finalize();
    return cfg;
}

std::vector<std::size_t> seen_counts(const data::TaskStream& stream) {
    std::vector<std::size_t> out;
    std::size_t n = 0;
    for (const auto& t : stream.tasks) out.push_back(n += t.classes.size());
    return out;
}

std::string variant_name(const RunConfig& cfg) {
    return std::string(sgakt::to_string(cfg.train.distill)) + "+" + std::string(sevpr::to_string(cfg.train.classifier));
}

void write_run_files(const fs::path& dir, const Metrics& m, const std::vector<std::size_t>& seen) {
    ensure_dir(dir);
    write_text(dir / "metrics.csv", metrics_csv(m, seen));
    write_text(dir / "summary.json", summary_json(m).dump(2) + "\n");
}

struct Variant {
    std::string name;
    RunConfig cfg;
};

// Every variant runs on every seed; a seed fixes data and init for all variants.
std::vector<ReportRow> run_grid(const std::vector<Variant>& variants, const std::vector<std::uint64_t>& seeds,
                                const fs::path& out) {
    std::vector<data::TaskStream> streams(seeds.size());
    parallel_for(seeds.size(), [&](std::size_t i) {
        RunConfig c = variants.front().cfg;
        c.seed = seeds[i];
        c.finalize();
        streams[i] = build_stream(c);
    });
    std::vector<RunRecord> records(variants.size() * seeds.size());
    std::mutex log_mu;
    parallel_for(records.size(), [&](std::size_t job) {
        const auto& v = variants[job / seeds.size()];
        const std::size_t si = job % seeds.size();
        RunConfig c = v.cfg;
        c.seed = seeds[si];
        c.finalize();
        const RunResult res = run_stream(c, streams[si]);
        records[job] = {seeds[si], res.metrics};
        write_run_files(out / "runs" / v.name / ("seed_" + std::to_string(seeds[si])), res.metrics,
                        seen_counts(streams[si]));
        std::lock_guard lock(log_mu);
        std::cerr << v.name << " seed " << seeds[si] << ": last " << format_double(res.metrics.last) << "\n";
    });
    std::vector<ReportRow> rows;
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        std::vector<RunRecord> runs(records.begin() + static_cast<std::ptrdiff_t>(vi * seeds.size()),
                                    records.begin() + static_cast<std::ptrdiff_t>((vi + 1) * seeds.size()));
        rows.push_back(aggregate_row(variants[vi].name, runs));
    }
    return rows;
}

void write_report(const fs::path& out, const std::string& command, const RunConfig& base,
                  const std::vector<std::uint64_t>& seeds, const std::vector<ReportRow>& rows,
                  const nlohmann::ordered_json& extra = {}) {
    ensure_dir(out);
    write_text(out / "rows.json", rows_json(rows).dump(2) + "\n");
    write_text(out / "table.md", format_rows(rows, ReportFormat::kMd));
    write_text(out / "table.csv", format_rows(rows, ReportFormat::kCsv));
    write_text(out / "curves.csv", curves_csv(rows));
    write_text(out / "manifest.json", manifest_json(command, base, seeds, extra).dump(2) + "\n");
    std::cout << format_rows(rows, ReportFormat::kMd);
}

std::vector<std::uint64_t> resolve_seeds(const std::vector<std::uint64_t>& given, const RunConfig& cfg) {
    if (!given.empty()) return given;
    return {cfg.seed, cfg.seed + 1, cfg.seed + 2};
}

std::vector<std::string> split_values(const std::vector<std::string>& raw) {
    std::vector<std::string> out;
    for (const auto& r : raw) {
        std::stringstream ss(r);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_number(const std::string& flag, const std::string& text) {
    std::size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(text, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != text.size() || text.empty()) fail(ErrorCode::kInvalidConfig, flag + ": not a number: '" + text + "'");
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"seca: semantic-guided continual learning with adapter pools and refined prototypes"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint_path, param, format = "md";
    std::optional<std::uint64_t> seed;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> values, inputs;
    std::size_t instances = 300;
    std::uint64_t theory_seed = 2024;

    auto* train = app.add_subcommand("train", "Train on the configured task stream");
    train->add_option("--config", config_path, "Run configuration (JSON); defaults when omitted");
    train->add_option("--out", out_dir, "Output directory")->required();
    train->add_option("--seed", seed, "Master seed override");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test splits of its seen tasks");
    eval->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    eval->add_option("--out", out_dir, "Optional output directory for eval.json");

    auto add_grid_flags = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Base configuration (JSON); defaults when omitted")
            ;
        sub->add_option("--out", out_dir, "Output directory")->required();
        sub->add_option("--seeds", seeds, "Seeds (default: config seed and the next two)")->delimiter(',');
    };
    auto* ablate_distill = app.add_subcommand("ablate-distill", "Distillation strategies with and without SE-VPR");
    add_grid_flags(ablate_distill);
    auto* ablate_classifier = app.add_subcommand("ablate-classifier", "Classifier variants");
    add_grid_flags(ablate_classifier);
    auto* sweep = app.add_subcommand("sweep", "One-parameter sweep");
    add_grid_flags(sweep);
    sweep->add_option("--param", param, "beta | tau_prime | pool | width")
        ->required()
        ->check(CLI::IsMember({"beta", "tau_prime", "pool", "width"}));
    sweep->add_option("--values", values, "Comma-separated values")->required();

    auto* theory = app.add_subcommand("theory-check", "Closed-form vs numeric simplex weighting");
    theory->add_option("--instances", instances, "Number of instances");
    theory->add_option("--seed", theory_seed, "Instance seed");
    theory->add_option("--out", out_dir, "Optional output directory");

    auto* gen = app.add_subcommand("gen-data", "Write the synthetic stream as a feature bank");
    gen->add_option("--config", config_path, "Run configuration (JSON)");
    gen->add_option("--out", out_dir, "Output directory")->required();
    gen->add_option("--seed", seed, "Master seed override");

    auto* report = app.add_subcommand("report", "Merge and format report rows");
    report->add_option("--in", inputs, "Output directories of earlier runs")->required();
    report->add_option("--format", format, "csv | json | md")->check(CLI::IsMember({"csv", "json", "md"}));
    report->add_option("--out", out_dir, "Optional directory for the table and curve files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*train) {
            const RunConfig cfg = resolve_config(config_path, seed);
            const auto stream = build_stream(cfg);
            const RunResult res = run_stream(cfg, stream);
            const fs::path out(out_dir);
            write_run_files(out, res.metrics, seen_counts(stream));
            save_checkpoint(out / "model.ckpt", res.state);
            const auto row = aggregate_row(variant_name(cfg), {{cfg.seed, res.metrics}});
            write_text(out / "rows.json", rows_json({row}).dump(2) + "\n");
            write_text(out / "manifest.json",
                       manifest_json("train", cfg, {cfg.seed}, {{"checkpoint", "model.ckpt"}}).dump(2) + "\n");
            std::cout << "last " << format_double(res.metrics.last) << " avg " << format_double(res.metrics.avg) << "\n";
        } else if (*eval) {
            const TrainState st = load_checkpoint(checkpoint_path);
            const auto stream = build_stream(st.config);
            const std::size_t tasks = st.task_index();
            require(tasks <= stream.tasks.size(), ErrorCode::kIncompatible, "checkpoint has more tasks than its stream");
            const Predictor predictor(st);
            const double acc = accuracy_on(predictor, std::span(stream.tasks).first(tasks));
            nlohmann::ordered_json j{{"tasks", tasks}, {"seen_classes", predictor.classes().size()}, {"acc", acc}};
            if (!out_dir.empty()) {
                ensure_dir(out_dir);
                write_text(fs::path(out_dir) / "eval.json", j.dump(2) + "\n");
                write_text(fs::path(out_dir) / "manifest.json",
                           manifest_json("eval", st.config, {st.config.seed}, {{"checkpoint", checkpoint_path}}).dump(2) +
                               "\n");
            }
            std::cout << j.dump() << "\n";
        } else if (*ablate_distill || *ablate_classifier || *sweep) {
            const RunConfig base = resolve_config(config_path, std::nullopt);
            const auto run_seeds = resolve_seeds(seeds, base);
            std::vector<Variant> variants;
            std::string command;
            nlohmann::ordered_json extra;
            if (*ablate_distill) {
                command = "ablate-distill";
                for (auto cls : {sevpr::ClassifierKind::kOnlyText, sevpr::ClassifierKind::kSeVpr})
                    for (auto d : sgakt::all_distill_strategies()) {
                        RunConfig c = base;
                        c.train.distill = d;
                        c.train.classifier = cls;
                        variants.push_back({variant_name(c), c});
                    }
            } else if (*ablate_classifier) {
                command = "ablate-classifier";
                for (auto k : sevpr::all_classifier_kinds()) {
                    RunConfig c = base;
                    c.train.classifier = k;
                    variants.push_back({std::string(sevpr::to_string(k)), c});
                }
            } else {
                command = "sweep";
                extra = {{"param", param}};
                const auto vals = split_values(values);
                require(!vals.empty(), ErrorCode::kInvalidConfig, "--values: no values given");
                for (const auto& v : vals) {
                    RunConfig c = base;
                    std::string label = v;
                    if (param == "beta") {
                        if (v == "dynamic" || v == "task-index") {
                            c.train.beta = {BetaSchedule::Kind::kTaskIndex, 0.0};
                            label = "dynamic";
                        } else {
                            c.train.beta = {BetaSchedule::Kind::kConstant, parse_number("--values", v)};
                        }
                    } else if (param == "tau_prime") {
                        c.train.tau_prime = parse_number("--values", v);
                    } else if (param == "pool") {
                        c.train.pool_max = parse_pool_max(v);
                        label = pool_max_to_string(c.train.pool_max);
                    } else {
                        const double w = parse_number("--values", v);
                        require(w >= 1 && w == static_cast<double>(static_cast<std::size_t>(w)),
                                ErrorCode::kInvalidConfig, "--values: adapter width must be a positive integer");
                        c.encoder.adapter_width = static_cast<std::size_t>(w);
                    }
                    c.finalize();
                    variants.push_back({param + "=" + label, c});
                }
            }
            const auto rows = run_grid(variants, run_seeds, out_dir);
            write_report(out_dir, command, base, run_seeds, rows, extra);
        } else if (*theory) {
            theory::CheckConfig cc;
            cc.instances = instances;
            cc.seed = theory_seed;
            const auto res = theory::run_check(cc);
            std::size_t passed = 0;
            double worst_diff = 0, worst_gap = -INFINITY;
            for (const auto& r : res) {
                passed += r.passed;
                worst_diff = std::max(worst_diff, r.max_abs_diff);
                worst_gap = std::max(worst_gap, r.worst_objective_gap);
            }
            nlohmann::ordered_json j{{"instances", res.size()},
                                     {"passed", passed},
                                     {"max_weight_diff", worst_diff},
                                     {"max_objective_gap", worst_gap},
                                     {"seed", theory_seed}};
            if (!out_dir.empty()) {
                ensure_dir(out_dir);
                write_text(fs::path(out_dir) / "theory.json", j.dump(2) + "\n");
            }
            std::cout << j.dump() << "\n";
            return passed == res.size() ? 0 : kExitFailed;
        } else if (*gen) {
            RunConfig cfg = resolve_config(config_path, seed);
            require(cfg.data.source == DataConfig::Source::kSynthetic, ErrorCode::kInvalidConfig,
                    "data.source: gen-data needs the synthetic source");
            const auto stream = build_stream(cfg);
            const fs::path out(out_dir);
            ensure_dir(out);
            data::write_feature_bank(out / "features.fbk", data::bank_from_stream(stream));
            data::write_manifest(out / "classes.json", stream.registry.names);
            write_text(out / "manifest.json",
                       manifest_json("gen-data", cfg, {cfg.seed}, {{"feature_bank", "features.fbk"}, {"classes", "classes.json"}})
                               .dump(2) +
                           "\n");
            std::cout << "wrote " << stream.registry.size() << " classes to " << (out / "features.fbk").string() << "\n";
        } else if (*report) {
            std::vector<ReportRow> rows;
            for (const auto& dir : inputs) {
                auto r = load_rows(dir);
                rows.insert(rows.end(), r.begin(), r.end());
            }
            const auto fmt = parse_report_format(format);
            const std::string text = format_rows(rows, fmt);
            if (!out_dir.empty()) {
                ensure_dir(out_dir);
                write_text(fs::path(out_dir) / ("table." + format), text);
                write_text(fs::path(out_dir) / "curves.csv", curves_csv(rows));
            }
            std::cout << text;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailed;
    }
    return 0;
}
