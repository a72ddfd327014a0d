#pragma once

// Run configuration: one JSON document, every field explicit in the dump.
// Parsing is strict (unknown keys and wrong types are rejected with the
// offending field path).

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "seca/datastream.hpp"
#include "seca/encoder.hpp"
#include "seca/sevpr.hpp"
#include "seca/sgakt.hpp"

namespace seca {

struct BetaSchedule {
    enum class Kind { kTaskIndex, kConstant };
    Kind kind = Kind::kTaskIndex;
    double value = 0.0;  // used by kConstant

    /// beta at task s (1-based).
    double at(std::size_t s) const { return kind == Kind::kTaskIndex ? static_cast<double>(s) : value; }
};

struct DataConfig {
    enum class Source { kSynthetic, kBank };
    Source source = Source::kSynthetic;
    data::SyntheticSpec synthetic;
    std::string bank_path;
    std::string manifest_path;
    std::size_t bank_tasks = 10;
    double train_ratio = 0.8;
};

struct TrainConfig {
    double tau = 0.01;
    double tau_prime = 20.0;
    double lambda = 1.0;
    double gamma = 1.0;
    double mu = 0.99;
    double epsilon = 1e-8;
    std::size_t pool_max = 5;  // 0 = unbounded ("all")
    BetaSchedule beta;
    double lr = 1e-3;
    std::size_t epochs = 5;
    std::size_t batch_size = 16;
    bool replay = false;
    double replay_ratio = 1.0;  // pseudo samples per real sample in a batch
    bool replay_full_cov = false;
    sgakt::DistillStrategy distill = sgakt::DistillStrategy::kSgAkt;
    sevpr::ClassifierKind classifier = sevpr::ClassifierKind::kSeVpr;
    bool zero_projectors = false;  // W_S = W_V = 0 at init
};

struct RunConfig {
    std::uint64_t seed = 0;  // master seed; data, encoder and init seeds derive from it
    DataConfig data;
    EncoderConfig encoder;
    TrainConfig train;

    /// Seeds used by the run (derived from `seed`).
    std::uint64_t data_seed() const;
    std::uint64_t encoder_seed() const;
    std::uint64_t init_seed() const;

    /// Copies derived seeds into the nested specs and checks every constraint.
    void finalize();
    void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults. Errors carry the JSON field path.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

std::string pool_max_to_string(std::size_t pool_max);
std::size_t parse_pool_max(const std::string& text);

}  // namespace seca
