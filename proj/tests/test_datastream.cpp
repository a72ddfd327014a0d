#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <unistd.h>

#include "seca/datastream.hpp"
#include "seca/errors.hpp"

using namespace seca;
using namespace seca::data;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    auto p = fs::temp_directory_path() / ("seca_ds_test_" + std::to_string(::getpid()));
    fs::create_directories(p);
    return p;
}

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.num_tasks = 3;
    s.classes_per_task = 2;
    s.dim = 8;
    s.superclasses = 2;
    s.train_per_class = 5;
    s.test_per_class = 3;
    s.seed = 4;
    return s;
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::kInvalidInput;
}

// Byte-level writer independent of the library.
std::string encode_bank(const char* magic, std::uint32_t version, std::uint32_t d, std::uint32_t classes,
                        const std::vector<std::pair<std::uint32_t, std::vector<float>>>& samples,
                        std::uint64_t declared) {
    std::string out(magic, 8);
    auto le = [&](std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    le(version, 4);
    le(d, 4);
    le(classes, 4);
    le(declared, 8);
    for (const auto& [k, f] : samples) {
        le(k, 4);
        for (float x : f) {
            std::uint32_t u;
            std::memcpy(&u, &x, 4);
            le(u, 4);
        }
    }
    return out;
}

void write_bytes(const fs::path& p, const std::string& s) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("synthetic stream structure") {
    const auto s = gen_synthetic(small_spec());
    CHECK(s.tasks.size() == 3);
    CHECK(s.registry.size() == 6);
    std::set<std::size_t> all;
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(s.tasks[t].classes == std::vector<std::size_t>{2 * t, 2 * t + 1});
        CHECK(s.tasks[t].train.size() == 10);
        CHECK(s.tasks[t].test.size() == 6);
        for (auto k : s.tasks[t].classes) CHECK(all.insert(k).second);
    }
    CHECK(all.size() == 6);
    // related classes land in different tasks
    for (std::size_t k = 0; k < 6; ++k) CHECK(s.registry.superclass[k] == k % 2);
    for (const auto& task : s.tasks) CHECK(s.registry.superclass[task.classes[0]] != s.registry.superclass[task.classes[1]]);
}

TEST_CASE("synthetic stream is a pure function of its spec") {
    const auto a = gen_synthetic(small_spec());
    const auto b = gen_synthetic(small_spec());
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t i = 0; i < a.tasks[t].train.size(); ++i) CHECK(a.tasks[t].train[i].x == b.tasks[t].train[i].x);
    auto other = small_spec();
    other.seed = 5;
    CHECK(gen_synthetic(other).tasks[0].train[0].x != a.tasks[0].train[0].x);
}

TEST_CASE("sigma zero puts every sample on its class mean") {
    auto spec = small_spec();
    spec.sigma = 0.0;
    const auto s = gen_synthetic(spec);
    std::map<std::size_t, std::vector<double>> mean;
    for (const auto& task : s.tasks)
        for (const auto* split : {&task.train, &task.test})
            for (const auto& x : *split) {
                auto [it, fresh] = mean.emplace(x.label, x.x);
                if (!fresh) CHECK(it->second == x.x);
            }
    // nearest-mean classification is perfect
    std::size_t correct = 0, total = 0;
    for (const auto& task : s.tasks)
        for (const auto& x : task.test) {
            std::size_t best = 0;
            double bd = 1e300;
            for (const auto& [k, m] : mean) {
                double d = 0;
                for (std::size_t i = 0; i < m.size(); ++i) d += (m[i] - x.x[i]) * (m[i] - x.x[i]);
                if (d < bd) {
                    bd = d;
                    best = k;
                }
            }
            correct += best == x.label;
            ++total;
        }
    CHECK(correct == total);
}

TEST_CASE("rho zero with one superclass per class gives near-orthogonal means") {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        SyntheticSpec spec;
        spec.num_tasks = 4;
        spec.classes_per_task = 4;
        spec.dim = 256;
        spec.superclasses = 16;
        spec.rho = 0.0;
        spec.sigma = 0.0;
        spec.train_per_class = 1;
        spec.test_per_class = 1;
        spec.seed = seed;
        const auto s = gen_synthetic(spec);
        std::vector<std::vector<double>> m;
        for (const auto& task : s.tasks)
            for (const auto& x : task.train) m.push_back(x.x);
        for (std::size_t a = 0; a < m.size(); ++a)
            for (std::size_t b = a + 1; b < m.size(); ++b) {
                double d = 0, na = 0, nb = 0;
                for (std::size_t i = 0; i < 256; ++i) {
                    d += m[a][i] * m[b][i];
                    na += m[a][i] * m[a][i];
                    nb += m[b][i] * m[b][i];
                }
                worst = std::max(worst, std::abs(d) / std::sqrt(na * nb));
            }
    }
    CHECK(worst < 0.3);
}

TEST_CASE("infeasible synthetic spec is a config error") {
    auto spec = small_spec();
    spec.dim = 5;  // 6 classes
    CHECK(code_of([&] { gen_synthetic(spec); }) == ErrorCode::kInvalidConfig);
    spec = small_spec();
    spec.rho = 1.5;
    CHECK(code_of([&] { spec.validate(); }) == ErrorCode::kInvalidConfig);
}

TEST_CASE("feature bank layout is bit-exact") {
    const auto dir = tmp_dir();
    FeatureBank bank;
    bank.dim = 2;
    bank.num_classes = 3;
    bank.labels = {2, 0};
    bank.features = {1.5f, -0.25f, 3.0f, 1e-3f};
    write_feature_bank(dir / "a.fbk", bank);
    const auto want = encode_bank("SECAFB1\0", 1, 2, 3, {{2, {1.5f, -0.25f}}, {0, {3.0f, 1e-3f}}}, 2);
    CHECK(read_bytes(dir / "a.fbk") == want);
    CHECK(read_bytes(dir / "a.fbk").size() == 8 + 4 + 4 + 4 + 8 + 2 * (4 + 8));

    write_bytes(dir / "b.fbk", want);
    const auto back = read_feature_bank(dir / "b.fbk");
    CHECK(back.dim == 2);
    CHECK(back.num_classes == 3);
    CHECK(back.labels == bank.labels);
    CHECK(back.features == bank.features);
    fs::remove_all(dir);
}

TEST_CASE("feature bank errors have distinct codes") {
    const auto dir = tmp_dir();
    const std::vector<std::pair<std::uint32_t, std::vector<float>>> one = {{0, {1.0f, 2.0f}}};
    write_bytes(dir / "magic.fbk", encode_bank("SECAFB2\0", 1, 2, 1, one, 1));
    CHECK(code_of([&] { read_feature_bank(dir / "magic.fbk"); }) == ErrorCode::kBadMagic);
    write_bytes(dir / "version.fbk", encode_bank("SECAFB1\0", 2, 2, 1, one, 1));
    CHECK(code_of([&] { read_feature_bank(dir / "version.fbk"); }) == ErrorCode::kBadVersion);
    auto full = encode_bank("SECAFB1\0", 1, 2, 1, one, 1);
    write_bytes(dir / "short.fbk", full.substr(0, full.size() - 1));
    CHECK(code_of([&] { read_feature_bank(dir / "short.fbk"); }) == ErrorCode::kTruncated);
    write_bytes(dir / "count.fbk", encode_bank("SECAFB1\0", 1, 2, 1, one, 2));
    CHECK(code_of([&] { read_feature_bank(dir / "count.fbk"); }) == ErrorCode::kTruncated);
    write_bytes(dir / "header.fbk", full.substr(0, 12));
    CHECK(code_of([&] { read_feature_bank(dir / "header.fbk"); }) == ErrorCode::kTruncated);
    write_bytes(dir / "id.fbk", encode_bank("SECAFB1\0", 1, 2, 1, {{1, {1.0f, 2.0f}}}, 1));
    CHECK(code_of([&] { read_feature_bank(dir / "id.fbk"); }) == ErrorCode::kIdOutOfRange);
    CHECK(code_of([&] { read_feature_bank(dir / "missing.fbk"); }) == ErrorCode::kIo);
    write_bytes(dir / "tiny.fbk", "SEC");
    CHECK(code_of([&] { read_feature_bank(dir / "tiny.fbk"); }) == ErrorCode::kBadMagic);
    fs::remove_all(dir);
}

TEST_CASE("generated bank round-trips bit-identically at 32-bit") {
    const auto dir = tmp_dir();
    const auto s = gen_synthetic(small_spec());
    const auto bank = bank_from_stream(s);
    write_feature_bank(dir / "g.fbk", bank);
    write_manifest(dir / "g.json", s.registry.names);
    const auto back = read_feature_bank(dir / "g.fbk");
    CHECK(back.labels == bank.labels);
    CHECK(std::memcmp(back.features.data(), bank.features.data(), bank.features.size() * sizeof(float)) == 0);
    const auto names = read_manifest(dir / "g.json");
    CHECK(names.size() == 6);
    CHECK(names.at(3) == "class_3");
    fs::remove_all(dir);
}

TEST_CASE("bank split protocol") {
    FeatureBank bank;
    bank.dim = 1;
    bank.num_classes = 10;
    for (std::uint32_t k = 0; k < 10; ++k)
        for (int i = 0; i < 10; ++i) {
            bank.labels.push_back(k);
            bank.features.push_back(static_cast<float>(k * 100 + i));
        }
    SplitRule rule{10, 0.8, 3};
    const auto s = stream_from_bank(bank, {}, rule);
    REQUIRE(s.tasks.size() == 10);
    for (std::size_t t = 0; t < 10; ++t) {
        CHECK(s.tasks[t].classes == std::vector<std::size_t>{t});
        CHECK(s.tasks[t].train.size() == 8);
        CHECK(s.tasks[t].test.size() == 2);
        std::set<float> seen;
        for (const auto* split : {&s.tasks[t].train, &s.tasks[t].test})
            for (const auto& x : *split) CHECK(seen.insert(static_cast<float>(x.x[0])).second);
        CHECK(seen.size() == 10);
    }
    CHECK(s.registry.names[4] == "class_4");

    SplitRule five{5, 0.5, 3};
    const auto s5 = stream_from_bank(bank, {{0, "zero"}}, five);
    CHECK(s5.tasks[0].classes == std::vector<std::size_t>{0, 1});
    CHECK(s5.registry.names[0] == "zero");

    SplitRule bad{3, 0.8, 3};
    CHECK(code_of([&] { stream_from_bank(bank, {}, bad); }) == ErrorCode::kInvalidConfig);

    // split is seeded: same rule, same split; another seed, another order
    const auto again = stream_from_bank(bank, {}, rule);
    CHECK(again.tasks[2].test[0].x == s.tasks[2].test[0].x);
}

TEST_CASE("stream validation catches protocol violations") {
    auto s = gen_synthetic(small_spec());
    s.tasks[1].classes.push_back(0);
    s.tasks[1].train.push_back(s.tasks[0].train[0]);
    s.tasks[1].test.push_back(s.tasks[0].test[0]);
    CHECK(code_of([&] { s.validate(); }) == ErrorCode::kProtocolViolation);
    auto m = gen_synthetic(small_spec());
    m.tasks[0].test.erase(std::remove_if(m.tasks[0].test.begin(), m.tasks[0].test.end(),
                                         [](const Sample& x) { return x.label == 1; }),
                          m.tasks[0].test.end());
    CHECK(code_of([&] { m.validate(); }) == ErrorCode::kMissingClass);
}

TEST_CASE("manifest errors") {
    const auto dir = tmp_dir();
    write_bytes(dir / "bad.json", "{\"x\": \"a\"}");
    CHECK(code_of([&] { read_manifest(dir / "bad.json"); }) == ErrorCode::kInvalidInput);
    write_bytes(dir / "broken.json", "{");
    CHECK(code_of([&] { read_manifest(dir / "broken.json"); }) == ErrorCode::kInvalidInput);

    FeatureBank bank;
    bank.dim = 1;
    bank.num_classes = 1;
    bank.labels = {0, 0};
    bank.features = {1.0f, 2.0f};
    write_feature_bank(dir / "b.fbk", bank);
    write_bytes(dir / "far.json", "{\"5\": \"a\"}");
    CHECK(code_of([&] { load_feature_bank(dir / "b.fbk", dir / "far.json", SplitRule{1, 0.5, 0}); }) ==
          ErrorCode::kIdOutOfRange);
    fs::remove_all(dir);
}
