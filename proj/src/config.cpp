#include "seca/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>

#include "seca/errors.hpp"
#include "seca/rng.hpp"

namespace seca {

using nlohmann::json;
using nlohmann::ordered_json;

std::uint64_t RunConfig::data_seed() const { return derive_seed(seed, "data"); }
std::uint64_t RunConfig::encoder_seed() const { return derive_seed(seed, "encoder"); }
std::uint64_t RunConfig::init_seed() const { return derive_seed(seed, "init"); }

void RunConfig::finalize() {
    data.synthetic.seed = data_seed();
    encoder.seed = encoder_seed();
    validate();
}

void RunConfig::validate() const {
    auto positive = [](double v, const char* path) {
        require(v > 0.0, ErrorCode::kInvalidConfig, std::string(path) + ": must be > 0");
    };
    positive(train.tau, "train.tau");
    positive(train.tau_prime, "train.tau_prime");
    positive(train.lr, "train.lr");
    positive(train.epsilon, "train.epsilon");
    require(train.lambda >= 0.0, ErrorCode::kInvalidConfig, "train.lambda: must be >= 0");
    require(train.gamma >= 0.0, ErrorCode::kInvalidConfig, "train.gamma: must be >= 0");
    require(train.mu >= 0.0 && train.mu <= 1.0, ErrorCode::kInvalidConfig, "train.mu: must lie in [0, 1]");
    require(train.batch_size >= 1, ErrorCode::kInvalidConfig, "train.batch_size: must be >= 1");
    require(train.replay_ratio >= 0.0, ErrorCode::kInvalidConfig, "train.replay_ratio: must be >= 0");
    if (train.beta.kind == BetaSchedule::Kind::kConstant)
        require(train.beta.value >= 0.0, ErrorCode::kInvalidConfig, "train.beta: must be >= 0");
    encoder.validate();
    if (data.source == DataConfig::Source::kSynthetic) {
        data.synthetic.validate();
        require(data.synthetic.dim == encoder.d_v, ErrorCode::kInvalidConfig,
                "data.synthetic.dim: must equal encoder.d_v");
    } else {
        require(!data.bank_path.empty(), ErrorCode::kInvalidConfig, "data.bank_path: required for source 'bank'");
        require(!data.manifest_path.empty(), ErrorCode::kInvalidConfig,
                "data.manifest_path: required for source 'bank'");
        require(data.bank_tasks >= 1, ErrorCode::kInvalidConfig, "data.bank_tasks: must be >= 1");
        require(data.train_ratio > 0.0 && data.train_ratio < 1.0, ErrorCode::kInvalidConfig,
                "data.train_ratio: must lie in (0, 1)");
    }
}

std::string pool_max_to_string(std::size_t pool_max) {
    return pool_max == sgakt::AdapterPool::kUnbounded ? "all" : std::to_string(pool_max);
}

std::size_t parse_pool_max(const std::string& text) {
    if (text == "all" || text == "ALL") return sgakt::AdapterPool::kUnbounded;
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(text, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != text.size() || text.empty() || v < 1)
        fail(ErrorCode::kInvalidConfig, "pool size must be a positive integer or 'all', got '" + text + "'");
    return static_cast<std::size_t>(v);
}

namespace {

std::string_view source_name(DataConfig::Source s) { return s == DataConfig::Source::kSynthetic ? "synthetic" : "bank"; }

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class ObjectReader {
   public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(ErrorCode::kInvalidConfig, where() + ": expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* get(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void number(const std::string& key, double& out) {
        if (const json* v = get(key)) {
            if (!v->is_number()) fail(ErrorCode::kInvalidConfig, field(key) + ": expected a number");
            out = v->get<double>();
        }
    }
    void count(const std::string& key, std::size_t& out) {
        if (const json* v = get(key)) {
            if (!v->is_number_integer() || v->get<long long>() < 0)
                fail(ErrorCode::kInvalidConfig, field(key) + ": expected a non-negative integer");
            out = v->get<std::size_t>();
        }
    }
    void seed(const std::string& key, std::uint64_t& out) {
        if (const json* v = get(key)) {
            if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
                fail(ErrorCode::kInvalidConfig, field(key) + ": expected a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void boolean(const std::string& key, bool& out) {
        if (const json* v = get(key)) {
            if (!v->is_boolean()) fail(ErrorCode::kInvalidConfig, field(key) + ": expected true or false");
            out = v->get<bool>();
        }
    }
    void string(const std::string& key, std::string& out) {
        if (const json* v = get(key)) {
            if (!v->is_string()) fail(ErrorCode::kInvalidConfig, field(key) + ": expected a string");
            out = v->get<std::string>();
        }
    }
    template <typename Fn>
    void object(const std::string& key, Fn&& fn) {
        if (const json* v = get(key)) {
            ObjectReader sub(*v, field(key));
            fn(sub);
            sub.finish();
        }
    }

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!seen_.count(key)) fail(ErrorCode::kInvalidConfig, field(key) + ": unknown key");
    }

   private:
    std::string where() const { return path_.empty() ? "<root>" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

// Translates a parse error raised inside `fn` into a field-path message.
template <typename Fn>
void parse_enum(ObjectReader& r, const std::string& key, Fn&& fn) {
    std::string text;
    r.string(key, text);
    if (text.empty()) return;
    try {
        fn(text);
    } catch (const Error& e) {
        fail(ErrorCode::kInvalidConfig, r.field(key) + ": " + e.what());
    }
}

}  // namespace

ordered_json to_json(const RunConfig& c) {
    ordered_json j;
    j["seed"] = c.seed;
    ordered_json d;
    d["source"] = source_name(c.data.source);
    const auto& s = c.data.synthetic;
    d["synthetic"] = {{"num_tasks", s.num_tasks},
                      {"classes_per_task", s.classes_per_task},
                      {"dim", s.dim},
                      {"superclasses", s.superclasses},
                      {"rho", s.rho},
                      {"sigma", s.sigma},
                      {"train_per_class", s.train_per_class},
                      {"test_per_class", s.test_per_class}};
    d["bank_path"] = c.data.bank_path;
    d["manifest_path"] = c.data.manifest_path;
    d["bank_tasks"] = c.data.bank_tasks;
    d["train_ratio"] = c.data.train_ratio;
    j["data"] = d;
    const auto& e = c.encoder;
    j["encoder"] = {{"d_v", e.d_v},
                    {"d_t", e.d_t},
                    {"layers", e.layers},
                    {"adapter_width", e.adapter_width},
                    {"prompt_tokens", e.prompt_tokens}};
    const auto& t = c.train;
    ordered_json tr;
    tr["tau"] = t.tau;
    tr["tau_prime"] = t.tau_prime;
    tr["lambda"] = t.lambda;
    tr["gamma"] = t.gamma;
    tr["mu"] = t.mu;
    tr["epsilon"] = t.epsilon;
    if (t.pool_max == sgakt::AdapterPool::kUnbounded)
        tr["pool_max"] = "all";
    else
        tr["pool_max"] = t.pool_max;
    if (t.beta.kind == BetaSchedule::Kind::kTaskIndex)
        tr["beta"] = "task-index";
    else
        tr["beta"] = t.beta.value;
    tr["lr"] = t.lr;
    tr["epochs"] = t.epochs;
    tr["batch_size"] = t.batch_size;
    tr["replay"] = t.replay;
    tr["replay_ratio"] = t.replay_ratio;
    tr["replay_full_cov"] = t.replay_full_cov;
    tr["distill"] = sgakt::to_string(t.distill);
    tr["classifier"] = sevpr::to_string(t.classifier);
    tr["zero_projectors"] = t.zero_projectors;
    j["train"] = tr;
    return j;
}

RunConfig config_from_json(const json& j) {
    RunConfig c;
    ObjectReader root(j, "");
    root.seed("seed", c.seed);
    root.object("data", [&](ObjectReader& d) {
        parse_enum(d, "source", [&](const std::string& v) {
            if (v == "synthetic")
                c.data.source = DataConfig::Source::kSynthetic;
            else if (v == "bank")
                c.data.source = DataConfig::Source::kBank;
            else
                fail(ErrorCode::kInvalidConfig, "expected 'synthetic' or 'bank', got '" + v + "'");
        });
        d.object("synthetic", [&](ObjectReader& s) {
            auto& sp = c.data.synthetic;
            s.count("num_tasks", sp.num_tasks);
            s.count("classes_per_task", sp.classes_per_task);
            s.count("dim", sp.dim);
            s.count("superclasses", sp.superclasses);
            s.number("rho", sp.rho);
            s.number("sigma", sp.sigma);
            s.count("train_per_class", sp.train_per_class);
            s.count("test_per_class", sp.test_per_class);
        });
        d.string("bank_path", c.data.bank_path);
        d.string("manifest_path", c.data.manifest_path);
        d.count("bank_tasks", c.data.bank_tasks);
        d.number("train_ratio", c.data.train_ratio);
    });
    root.object("encoder", [&](ObjectReader& e) {
        e.count("d_v", c.encoder.d_v);
        e.count("d_t", c.encoder.d_t);
        e.count("layers", c.encoder.layers);
        e.count("adapter_width", c.encoder.adapter_width);
        e.count("prompt_tokens", c.encoder.prompt_tokens);
    });
    root.object("train", [&](ObjectReader& t) {
        auto& tr = c.train;
        t.number("tau", tr.tau);
        t.number("tau_prime", tr.tau_prime);
        t.number("lambda", tr.lambda);
        t.number("gamma", tr.gamma);
        t.number("mu", tr.mu);
        t.number("epsilon", tr.epsilon);
        if (const json* v = t.get("pool_max")) {
            if (v->is_string())
                try {
                    tr.pool_max = parse_pool_max(v->get<std::string>());
                } catch (const Error& e) {
                    fail(ErrorCode::kInvalidConfig, t.field("pool_max") + ": " + e.what());
                }
            else if (v->is_number_integer() && v->get<long long>() >= 1)
                tr.pool_max = v->get<std::size_t>();
            else
                fail(ErrorCode::kInvalidConfig, t.field("pool_max") + ": expected a positive integer or \"all\"");
        }
        if (const json* v = t.get("beta")) {
            if (v->is_string() && (v->get<std::string>() == "task-index" || v->get<std::string>() == "dynamic"))
                tr.beta = {BetaSchedule::Kind::kTaskIndex, 0.0};
            else if (v->is_number())
                tr.beta = {BetaSchedule::Kind::kConstant, v->get<double>()};
            else
                fail(ErrorCode::kInvalidConfig, t.field("beta") + ": expected a number or \"task-index\"");
        }
        t.number("lr", tr.lr);
        t.count("epochs", tr.epochs);
        t.count("batch_size", tr.batch_size);
        t.boolean("replay", tr.replay);
        t.number("replay_ratio", tr.replay_ratio);
        t.boolean("replay_full_cov", tr.replay_full_cov);
        parse_enum(t, "distill", [&](const std::string& v) { tr.distill = sgakt::parse_distill_strategy(v); });
        parse_enum(t, "classifier", [&](const std::string& v) { tr.classifier = sevpr::parse_classifier_kind(v); });
        t.boolean("zero_projectors", tr.zero_projectors);
    });
    root.finish();
    c.finalize();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrorCode::kIo, "cannot open config " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::kInvalidConfig, path + ": malformed JSON: " + e.what());
    }
    return config_from_json(j);
}

}  // namespace seca
