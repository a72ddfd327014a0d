#pragma once

// Task streams: seeded synthetic class clusters with superclass structure,
// and the FeatureBank binary format for externally extracted features.
//
// FeatureBank layout (little-endian):
//   "SECAFB1\0"           8 bytes
//   format_version        u32 (= 1)
//   d                     u32
//   num_classes           u32
//   num_samples           u64
//   num_samples x { class_id u32, d x f32 }
// Class names live in a sidecar JSON manifest {"<class_id>": "<name>"}.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace seca::data {

struct Sample {
    std::vector<double> x;
    std::size_t label = 0;
};

struct TaskData {
    std::vector<std::size_t> classes;  // ascending
    std::vector<Sample> train;
    std::vector<Sample> test;
};

struct ClassRegistry {
    std::vector<std::string> names;        // index = class id
    std::vector<std::size_t> superclass;   // index = class id
    double relatedness = 0.0;              // token correlation within a superclass

    std::size_t size() const { return names.size(); }
};

struct TaskStream {
    std::vector<TaskData> tasks;
    ClassRegistry registry;
    std::size_t dim = 0;

    /// Disjoint label sets, full coverage of the registry, and at least one
    /// train and one test sample per class.
    void validate() const;
};

struct SyntheticSpec {
    std::size_t num_tasks = 10;
    std::size_t classes_per_task = 5;
    std::size_t dim = 64;
    std::size_t superclasses = 10;
    double rho = 0.8;    // weight of the superclass center in each class mean
    double sigma = 0.6;  // per-sample noise scale (noise norm ~ sigma)
    std::size_t train_per_class = 50;
    std::size_t test_per_class = 20;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Class k = t * C + j belongs to task t and superclass k mod G, so classes
/// of one superclass land in different tasks. Class means are
/// rho * center_g + sqrt(1 - rho^2) * u_k with unit centers and orthonormal
/// u_k, which requires S * C <= d.
TaskStream gen_synthetic(const SyntheticSpec& spec);

constexpr char kFeatureBankMagic[8] = {'S', 'E', 'C', 'A', 'F', 'B', '1', '\0'};
constexpr std::uint32_t kFeatureBankVersion = 1;

struct FeatureBank {
    std::uint32_t dim = 0;
    std::uint32_t num_classes = 0;
    std::vector<std::uint32_t> labels;
    std::vector<float> features;  // num_samples x dim, row-major

    std::size_t num_samples() const { return labels.size(); }
    std::span<const float> feature(std::size_t i) const {
        return std::span<const float>(features).subspan(i * dim, dim);
    }
};

void write_feature_bank(const std::filesystem::path& path, const FeatureBank& bank);
FeatureBank read_feature_bank(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& names);
std::map<std::size_t, std::string> read_manifest(const std::filesystem::path& path);

/// All samples of a stream (train then test, task order) as a bank.
FeatureBank bank_from_stream(const TaskStream& stream);

struct SplitRule {
    std::size_t num_tasks = 10;
    double train_ratio = 0.8;
    std::uint64_t seed = 0;
};

/// Classes sorted by id are split into `num_tasks` equal groups; each class's
/// samples are shuffled with the rule's seed and cut at the train ratio.
TaskStream stream_from_bank(const FeatureBank& bank, const std::map<std::size_t, std::string>& names,
                            const SplitRule& rule);
TaskStream load_feature_bank(const std::filesystem::path& path, const std::filesystem::path& manifest,
                             const SplitRule& rule);

}  // namespace seca::data
