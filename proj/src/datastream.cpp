#include "seca/datastream.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

#include "seca/errors.hpp"
#include "seca/rng.hpp"

namespace seca::data {

namespace {

std::vector<double> unit_gaussian(std::size_t d, Rng& rng) {
    std::vector<double> v(d);
    double n = 0;
    do {
        n = 0;
        for (double& x : v) {
            x = rng.normal();
            n += x * x;
        }
    } while (n == 0.0);
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
}

// Modified Gram-Schmidt over Gaussian draws.
std::vector<std::vector<double>> orthonormal_set(std::size_t count, std::size_t d, Rng& rng) {
    std::vector<std::vector<double>> out;
    while (out.size() < count) {
        std::vector<double> v(d);
        for (double& x : v) x = rng.normal();
        for (const auto& u : out) {
            double p = 0;
            for (std::size_t i = 0; i < d; ++i) p += v[i] * u[i];
            for (std::size_t i = 0; i < d; ++i) v[i] -= p * u[i];
        }
        double n = 0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n < 1e-8) continue;
        for (double& x : v) x /= n;
        out.push_back(std::move(v));
    }
    return out;
}

template <typename T>
void put(std::ostream& os, T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

void put_f32(std::ostream& os, float f) { put(os, std::bit_cast<std::uint32_t>(f)); }

template <typename T>
T get(const std::vector<unsigned char>& buf, std::size_t& off) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(buf[off + i]) << (8 * i));
    off += sizeof(T);
    return v;
}

}  // namespace

void TaskStream::validate() const {
    std::set<std::size_t> seen;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const auto& task = tasks[t];
        require(!task.classes.empty(), ErrorCode::kProtocolViolation, "task " + std::to_string(t) + " has no classes");
        for (std::size_t k : task.classes) {
            if (!seen.insert(k).second)
                fail(ErrorCode::kProtocolViolation, "class " + std::to_string(k) + " appears in more than one task");
            const auto in = [k](const Sample& s) { return s.label == k; };
            if (std::none_of(task.train.begin(), task.train.end(), in) ||
                std::none_of(task.test.begin(), task.test.end(), in))
                fail(ErrorCode::kMissingClass, "class " + std::to_string(k) + " lacks a train or test sample");
        }
        const std::set<std::size_t> own(task.classes.begin(), task.classes.end());
        for (const auto* split : {&task.train, &task.test})
            for (const auto& s : *split) {
                if (!own.count(s.label))
                    fail(ErrorCode::kProtocolViolation, "sample label " + std::to_string(s.label) +
                                                            " outside task " + std::to_string(t));
                require(s.x.size() == dim, ErrorCode::kInvalidInput, "sample dimension mismatch");
            }
    }
    require(seen.size() == registry.size(), ErrorCode::kProtocolViolation,
            "task label sets do not cover the class registry");
}

void SyntheticSpec::validate() const {
    require(num_tasks >= 1, ErrorCode::kInvalidConfig, "data.synthetic.num_tasks: must be >= 1");
    require(classes_per_task >= 1, ErrorCode::kInvalidConfig, "data.synthetic.classes_per_task: must be >= 1");
    require(dim >= 2, ErrorCode::kInvalidConfig, "data.synthetic.dim: must be >= 2");
    require(superclasses >= 1, ErrorCode::kInvalidConfig, "data.synthetic.superclasses: must be >= 1");
    require(rho >= 0.0 && rho <= 1.0, ErrorCode::kInvalidConfig, "data.synthetic.rho: must lie in [0, 1]");
    require(sigma >= 0.0, ErrorCode::kInvalidConfig, "data.synthetic.sigma: must be >= 0");
    require(train_per_class >= 1, ErrorCode::kInvalidConfig, "data.synthetic.train_per_class: must be >= 1");
    require(test_per_class >= 1, ErrorCode::kInvalidConfig, "data.synthetic.test_per_class: must be >= 1");
    if (num_tasks * classes_per_task > dim)
        fail(ErrorCode::kInvalidConfig, "data.synthetic: " + std::to_string(num_tasks * classes_per_task) +
                                            " classes need orthogonal directions, more than dim " +
                                            std::to_string(dim));
}

TaskStream gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t d = spec.dim;
    const std::size_t classes = spec.num_tasks * spec.classes_per_task;

    Rng center_rng(derive_seed(spec.seed, "synthetic-centers"));
    std::vector<std::vector<double>> centers;
    for (std::size_t g = 0; g < spec.superclasses; ++g) centers.push_back(unit_gaussian(d, center_rng));
    Rng dir_rng(derive_seed(spec.seed, "synthetic-directions"));
    const auto dirs = orthonormal_set(classes, d, dir_rng);

    TaskStream stream;
    stream.dim = d;
    stream.registry.relatedness = spec.rho;
    const double own = std::sqrt(1.0 - spec.rho * spec.rho);
    std::vector<std::vector<double>> means(classes);
    for (std::size_t k = 0; k < classes; ++k) {
        const std::size_t g = k % spec.superclasses;
        stream.registry.names.push_back("class_" + std::to_string(k));
        stream.registry.superclass.push_back(g);
        means[k].resize(d);
        for (std::size_t i = 0; i < d; ++i) means[k][i] = spec.rho * centers[g][i] + own * dirs[k][i];
    }

    const double noise = spec.sigma / std::sqrt(static_cast<double>(d));
    auto draw = [&](std::size_t k, Rng& rng) {
        Sample s;
        s.label = k;
        s.x = means[k];
        for (double& v : s.x) v += noise * rng.normal();
        return s;
    };
    for (std::size_t t = 0; t < spec.num_tasks; ++t) {
        TaskData task;
        for (std::size_t j = 0; j < spec.classes_per_task; ++j) {
            const std::size_t k = t * spec.classes_per_task + j;
            task.classes.push_back(k);
            Rng rng(derive_seed(spec.seed, "synthetic-samples", k));
            for (std::size_t i = 0; i < spec.train_per_class; ++i) task.train.push_back(draw(k, rng));
            for (std::size_t i = 0; i < spec.test_per_class; ++i) task.test.push_back(draw(k, rng));
        }
        stream.tasks.push_back(std::move(task));
    }
    stream.validate();
    return stream;
}

// ---------------------------------------------------------------------------

void write_feature_bank(const std::filesystem::path& path, const FeatureBank& bank) {
    require(bank.features.size() == bank.labels.size() * bank.dim, ErrorCode::kInvalidInput,
            "feature bank payload does not match its dimension");
    for (auto k : bank.labels)
        if (k >= bank.num_classes) fail(ErrorCode::kIdOutOfRange, "class id " + std::to_string(k) + " out of range");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
    os.write(kFeatureBankMagic, sizeof(kFeatureBankMagic));
    put<std::uint32_t>(os, kFeatureBankVersion);
    put<std::uint32_t>(os, bank.dim);
    put<std::uint32_t>(os, bank.num_classes);
    put<std::uint64_t>(os, bank.labels.size());
    for (std::size_t i = 0; i < bank.labels.size(); ++i) {
        put<std::uint32_t>(os, bank.labels[i]);
        for (float f : bank.feature(i)) put_f32(os, f);
    }
    if (!os) fail(ErrorCode::kIo, "write failed for " + path.string());
}

FeatureBank read_feature_bank(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    constexpr std::size_t kHeader = 8 + 4 + 4 + 4 + 8;
    if (buf.size() < 8 || std::memcmp(buf.data(), kFeatureBankMagic, 8) != 0)
        fail(ErrorCode::kBadMagic, path.string() + " is not a feature bank");
    if (buf.size() < kHeader) fail(ErrorCode::kTruncated, path.string() + ": header is truncated");
    std::size_t off = 8;
    const auto version = get<std::uint32_t>(buf, off);
    if (version != kFeatureBankVersion)
        fail(ErrorCode::kBadVersion, path.string() + ": unsupported format version " + std::to_string(version));
    FeatureBank bank;
    bank.dim = get<std::uint32_t>(buf, off);
    bank.num_classes = get<std::uint32_t>(buf, off);
    const auto n = get<std::uint64_t>(buf, off);
    const std::uint64_t record = 4 + 4 * static_cast<std::uint64_t>(bank.dim);
    const std::uint64_t expected = kHeader + n * record;
    if (buf.size() != expected)
        fail(ErrorCode::kTruncated, path.string() + ": length " + std::to_string(buf.size()) + " does not match header (" +
                                        std::to_string(expected) + " bytes)");
    bank.labels.reserve(n);
    bank.features.reserve(n * bank.dim);
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto k = get<std::uint32_t>(buf, off);
        if (k >= bank.num_classes)
            fail(ErrorCode::kIdOutOfRange, path.string() + ": sample " + std::to_string(i) + " has class id " +
                                               std::to_string(k) + " >= " + std::to_string(bank.num_classes));
        bank.labels.push_back(k);
        for (std::uint32_t j = 0; j < bank.dim; ++j) bank.features.push_back(std::bit_cast<float>(get<std::uint32_t>(buf, off)));
    }
    return bank;
}

void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& names) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < names.size(); ++k) j[std::to_string(k)] = names[k];
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
    os << j.dump(2) << '\n';
}

std::map<std::size_t, std::string> read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::kIo, "cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::kInvalidInput, path.string() + ": " + e.what());
    }
    require(j.is_object(), ErrorCode::kInvalidInput, path.string() + ": manifest must be an object");
    std::map<std::size_t, std::string> out;
    for (const auto& [key, value] : j.items()) {
        std::size_t pos = 0;
        unsigned long id = 0;
        try {
            id = std::stoul(key, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != key.size() || key.empty()) fail(ErrorCode::kInvalidInput, path.string() + ": bad class id '" + key + "'");
        require(value.is_string(), ErrorCode::kInvalidInput, path.string() + ": name of class " + key + " is not a string");
        out.emplace(id, value.get<std::string>());
    }
    return out;
}

FeatureBank bank_from_stream(const TaskStream& stream) {
    FeatureBank bank;
    bank.dim = static_cast<std::uint32_t>(stream.dim);
    bank.num_classes = static_cast<std::uint32_t>(stream.registry.size());
    for (const auto& task : stream.tasks)
        for (const auto* split : {&task.train, &task.test})
            for (const auto& s : *split) {
                bank.labels.push_back(static_cast<std::uint32_t>(s.label));
                for (double v : s.x) bank.features.push_back(static_cast<float>(v));
            }
    return bank;
}

TaskStream stream_from_bank(const FeatureBank& bank, const std::map<std::size_t, std::string>& names,
                            const SplitRule& rule) {
    require(rule.num_tasks >= 1, ErrorCode::kInvalidConfig, "data.bank.num_tasks: must be >= 1");
    require(rule.train_ratio > 0.0 && rule.train_ratio < 1.0, ErrorCode::kInvalidConfig,
            "data.bank.train_ratio: must lie in (0, 1)");
    const std::size_t classes = bank.num_classes;
    if (classes % rule.num_tasks != 0)
        fail(ErrorCode::kInvalidConfig, std::to_string(classes) + " classes cannot be split evenly into " +
                                            std::to_string(rule.num_tasks) + " tasks");
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < bank.num_samples(); ++i) by_class[bank.labels[i]].push_back(i);

    TaskStream stream;
    stream.dim = bank.dim;
    for (std::size_t k = 0; k < classes; ++k) {
        auto it = names.find(k);
        stream.registry.names.push_back(it != names.end() ? it->second : "class_" + std::to_string(k));
        stream.registry.superclass.push_back(k);
    }
    const std::size_t per_task = classes / rule.num_tasks;
    for (std::size_t t = 0; t < rule.num_tasks; ++t) {
        TaskData task;
        for (std::size_t k = t * per_task; k < (t + 1) * per_task; ++k) {
            auto idx = by_class[k];
            if (idx.size() < 2)
                fail(ErrorCode::kMissingClass, "class " + std::to_string(k) + " needs at least two samples, has " +
                                                   std::to_string(idx.size()));
            Rng rng(derive_seed(rule.seed, "bank-split", k));
            rng.shuffle(idx.begin(), idx.end());
            auto n_train = static_cast<std::size_t>(std::llround(rule.train_ratio * static_cast<double>(idx.size())));
            n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
            task.classes.push_back(k);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                Sample s;
                s.label = k;
                const auto f = bank.feature(idx[i]);
                s.x.assign(f.begin(), f.end());
                (i < n_train ? task.train : task.test).push_back(std::move(s));
            }
        }
        stream.tasks.push_back(std::move(task));
    }
    stream.validate();
    return stream;
}

TaskStream load_feature_bank(const std::filesystem::path& path, const std::filesystem::path& manifest,
                             const SplitRule& rule) {
    const auto bank = read_feature_bank(path);
    const auto names = read_manifest(manifest);
    for (const auto& [k, _] : names)
        if (k >= bank.num_classes)
            fail(ErrorCode::kIdOutOfRange, manifest.string() + ": class id " + std::to_string(k) + " out of range");
    return stream_from_bank(bank, names, rule);
}

}  // namespace seca::data
