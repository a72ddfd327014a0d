#include "seca/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "seca/errors.hpp"

namespace seca {

namespace {

class Writer {
   public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) { uint(v, 4); }
    void u64(std::uint64_t v) { uint(v, 8); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u64(s.size());
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void tensor(const Tensor& t) {
        u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) u64(d);
        u64(t.size());  // rank 0 is ambiguous: scalar or empty
        for (double v : t.span()) f64(v);
    }
    void param(const Parameter& p) {
        tensor(p.value);
        u8(p.trainable ? 1 : 0);
    }
    void stack(const AdapterStack& a) {
        u64(a.size());
        for (const auto& l : a.layers()) {
            param(l.down);
            param(l.up);
        }
    }
    void tensor_map(const std::map<std::size_t, Tensor>& m) {
        u64(m.size());
        for (const auto& [k, t] : m) {
            u64(k);
            tensor(t);
        }
    }
    void raw(const std::vector<unsigned char>& b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

    std::vector<unsigned char>& bytes() { return buf_; }

   private:
    void uint(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
    }
    std::vector<unsigned char> buf_;
};

class Reader {
   public:
    Reader(const unsigned char* data, std::size_t size, std::string what) : p_(data), end_(data + size), what_(std::move(what)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(uint(1)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
    std::uint64_t u64() { return uint(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::size_t size() {
        const auto v = u64();
        if (v > remaining()) fail(ErrorCode::kTruncated, what_ + ": length field exceeds the data");
        return static_cast<std::size_t>(v);
    }
    std::string str() {
        const std::size_t n = size();
        std::string s(reinterpret_cast<const char*>(p_), n);
        p_ += n;
        return s;
    }
    Tensor tensor() {
        const auto rank = u32();
        if (rank > 8) fail(ErrorCode::kTruncated, what_ + ": implausible tensor rank");
        num::Shape shape;
        std::size_t total = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(size());
            total *= shape.back();
        }
        const auto count = u64();
        if (count != total && !(rank == 0 && count == 0))
            fail(ErrorCode::kTruncated, what_ + ": tensor element count disagrees with its shape");
        if (count * 8 > remaining()) fail(ErrorCode::kTruncated, what_ + ": tensor data truncated");
        if (count == 0 && rank == 0) return Tensor();
        std::vector<double> data(total);
        for (double& v : data) v = f64();
        return Tensor(std::move(shape), std::move(data));
    }
    Parameter param() {
        Parameter p(tensor());
        p.trainable = u8() != 0;
        return p;
    }
    AdapterStack stack() {
        AdapterStack a;
        const std::size_t n = size();
        for (std::size_t i = 0; i < n; ++i) {
            Parameter down = param();
            Parameter up = param();
            a.layers().push_back({std::move(down), std::move(up)});
        }
        return a;
    }
    std::map<std::size_t, Tensor> tensor_map() {
        std::map<std::size_t, Tensor> m;
        const std::size_t n = size();
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = u64();
            m.emplace(k, tensor());
        }
        return m;
    }
    std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }
    const unsigned char* cursor() const { return p_; }
    void skip(std::size_t n) { p_ += n; }
    void done() const {
        if (p_ != end_) fail(ErrorCode::kIncompatible, what_ + ": unexpected trailing bytes");
    }

   private:
    std::uint64_t uint(int n) {
        if (remaining() < static_cast<std::size_t>(n)) fail(ErrorCode::kTruncated, what_ + ": unexpected end of data");
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p_[i]) << (8 * i);
        p_ += n;
        return v;
    }
    const unsigned char* p_;
    const unsigned char* end_;
    std::string what_;
};

std::vector<const Tensor*> frozen_tensors(const Encoder& enc) {
    std::vector<const Tensor*> out;
    auto block = [&](const FfnBlock& b) { out.insert(out.end(), {&b.w1, &b.b1, &b.w2, &b.b2}); };
    for (const auto& b : enc.visual().blocks()) block(b);
    block(enc.text().block());
    for (std::size_t k = 0; k < enc.tokens().num_classes(); ++k) out.push_back(&enc.tokens().token(k));
    return out;
}

}  // namespace

std::vector<unsigned char> serialize_state(const TrainState& st) {
    std::vector<std::pair<std::string, Writer>> sections;
    auto section = [&](const char* name) -> Writer& { return sections.emplace_back(name, Writer{}).second; };

    section("config").str(to_json(st.config).dump());
    {
        Writer& w = section("registry");
        w.u64(st.registry.size());
        for (std::size_t k = 0; k < st.registry.size(); ++k) {
            w.str(st.registry.names[k]);
            w.u64(st.registry.superclass[k]);
        }
        w.f64(st.registry.relatedness);
    }
    {
        Writer& w = section("encoder");
        w.u64(st.encoder->frozen_checksum());
        const auto ts = frozen_tensors(*st.encoder);
        w.u64(ts.size());
        for (const Tensor* t : ts) w.tensor(*t);
    }
    {
        Writer& w = section("prompts");
        w.u64(st.prompts.size());
        for (const auto& p : st.prompts) w.param(p);
    }
    section("adapter").stack(st.adapter);
    {
        Writer& w = section("previous_adapter");
        w.u8(st.previous_adapter ? 1 : 0);
        if (st.previous_adapter) w.stack(*st.previous_adapter);
    }
    {
        Writer& w = section("pool");
        w.u64(st.pool.max_size());
        w.u64(st.pool.size());
        for (const auto& e : st.pool.entries()) {
            w.f64(e.utility);
            w.stack(e.adapter);
        }
    }
    {
        Writer& w = section("projectors");
        w.param(st.projectors.w_s);
        w.param(st.projectors.w_v);
    }
    {
        Writer& w = section("affinity");
        w.f64(st.affinity.gamma);
        w.param(st.affinity.h_proj);
    }
    {
        Writer& w = section("prototypes");
        w.tensor_map(st.prototypes.raw_all());
        w.u64(st.prototypes.counts().size());
        for (const auto& [k, n] : st.prototypes.counts()) {
            w.u64(k);
            w.u64(n);
        }
        w.tensor_map(st.prototypes.refined_current());
        w.tensor_map(st.prototypes.refined_snapshot());
    }
    section("centroids").tensor_map(st.adapted_centroids);
    {
        Writer& w = section("linear");
        w.u64(st.linear.blocks.size());
        for (const auto& b : st.linear.blocks) {
            w.param(b.weight);
            w.param(b.bias);
        }
    }
    {
        Writer& w = section("replay");
        w.u8(st.replay.full_covariance() ? 1 : 0);
        w.u64(st.replay.entries().size());
        for (const auto& [k, g] : st.replay.entries()) {
            w.u64(k);
            w.tensor(g.mean);
            w.tensor(g.variance);
            w.tensor(g.factor);
            w.u64(g.count);
        }
    }
    {
        Writer& w = section("optimizer");
        w.f64(st.optimizer.lr());
        w.u64(st.optimizer.moments().size());
        for (const auto& [name, m] : st.optimizer.moments()) {
            w.str(name);
            w.tensor(m.m);
            w.tensor(m.v);
            w.u64(m.t);
        }
    }
    {
        Writer& w = section("progress");
        w.u64(st.task_classes.size());
        for (const auto& cls : st.task_classes) {
            w.u64(cls.size());
            for (std::size_t k : cls) w.u64(k);
        }
    }

    Writer out;
    out.raw(std::vector<unsigned char>(kCheckpointMagic, kCheckpointMagic + sizeof(kCheckpointMagic)));
    out.u32(kCheckpointVersion);
    out.u32(static_cast<std::uint32_t>(sections.size()));
    for (auto& [name, w] : sections) {
        out.u32(static_cast<std::uint32_t>(name.size()));
        out.raw(std::vector<unsigned char>(name.begin(), name.end()));
        out.u64(w.bytes().size());
        out.raw(w.bytes());
    }
    return std::move(out.bytes());
}

TrainState deserialize_state(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < sizeof(kCheckpointMagic) ||
        std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        fail(ErrorCode::kBadMagic, "not a checkpoint file");
    Reader top(bytes.data() + sizeof(kCheckpointMagic), bytes.size() - sizeof(kCheckpointMagic), "checkpoint");
    const auto version = top.u32();
    if (version != kCheckpointVersion)
        fail(ErrorCode::kBadVersion, "unsupported checkpoint version " + std::to_string(version));
    const auto count = top.u32();
    std::map<std::string, std::pair<const unsigned char*, std::size_t>> sections;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = top.u32();
        if (name_len > top.remaining()) fail(ErrorCode::kTruncated, "checkpoint: section name truncated");
        std::string name(reinterpret_cast<const char*>(top.cursor()), name_len);
        top.skip(name_len);
        const std::size_t len = top.size();
        sections[name] = {top.cursor(), len};
        top.skip(len);
    }
    top.done();
    auto open = [&](const std::string& name) {
        auto it = sections.find(name);
        if (it == sections.end()) fail(ErrorCode::kIncompatible, "checkpoint lacks section '" + name + "'");
        return Reader(it->second.first, it->second.second, "checkpoint section " + name);
    };

    RunConfig cfg;
    {
        Reader r = open("config");
        cfg = config_from_json(nlohmann::json::parse(r.str()));
        r.done();
    }
    data::ClassRegistry registry;
    {
        Reader r = open("registry");
        const std::size_t n = r.size();
        for (std::size_t k = 0; k < n; ++k) {
            registry.names.push_back(r.str());
            registry.superclass.push_back(r.u64());
        }
        registry.relatedness = r.f64();
        r.done();
    }
    TrainState st = init_state(cfg, registry);
    {
        Reader r = open("encoder");
        const auto sum = r.u64();
        const auto expected = frozen_tensors(*st.encoder);
        const std::size_t n = r.size();
        bool same = sum == st.encoder->frozen_checksum() && n == expected.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Tensor t = r.tensor();
            same = same && i < expected.size() && t == *expected[i];
        }
        r.done();
        if (!same) fail(ErrorCode::kIncompatible, "checkpoint encoder weights differ from the regenerated encoder");
    }
    {
        Reader r = open("prompts");
        const std::size_t n = r.size();
        for (std::size_t i = 0; i < n; ++i) st.prompts.push_back(r.param());
        r.done();
    }
    {
        Reader r = open("adapter");
        st.adapter = r.stack();
        r.done();
    }
    {
        Reader r = open("previous_adapter");
        if (r.u8()) st.previous_adapter = r.stack();
        r.done();
    }
    {
        Reader r = open("pool");
        const auto max = r.u64();
        st.pool = sgakt::AdapterPool(max);
        const std::size_t n = r.size();
        std::vector<sgakt::PoolEntry> entries;
        for (std::size_t i = 0; i < n; ++i) {
            const double u = r.f64();
            entries.push_back({r.stack(), u});
        }
        st.pool.restore(std::move(entries));
        r.done();
    }
    {
        Reader r = open("projectors");
        st.projectors.w_s = r.param();
        st.projectors.w_v = r.param();
        r.done();
    }
    {
        Reader r = open("affinity");
        st.affinity.gamma = r.f64();
        st.affinity.h_proj = r.param();
        r.done();
    }
    {
        Reader r = open("prototypes");
        auto raw = r.tensor_map();
        std::map<std::size_t, std::size_t> counts;
        const std::size_t n = r.size();
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = r.u64();
            counts[k] = r.u64();
        }
        auto current = r.tensor_map();
        auto snapshot = r.tensor_map();
        st.prototypes.restore(std::move(raw), std::move(counts), std::move(current), std::move(snapshot));
        r.done();
    }
    {
        Reader r = open("centroids");
        st.adapted_centroids = r.tensor_map();
        r.done();
    }
    {
        Reader r = open("linear");
        const std::size_t n = r.size();
        for (std::size_t i = 0; i < n; ++i) {
            Parameter w = r.param();
            Parameter b = r.param();
            st.linear.blocks.push_back({std::move(w), std::move(b)});
        }
        r.done();
    }
    {
        Reader r = open("replay");
        st.replay = replay::ReplayStore(r.u8() != 0);
        const std::size_t n = r.size();
        std::map<std::size_t, replay::ClassGaussian> entries;
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = r.u64();
            replay::ClassGaussian g;
            g.mean = r.tensor();
            g.variance = r.tensor();
            g.factor = r.tensor();
            g.count = r.u64();
            entries.emplace(k, std::move(g));
        }
        st.replay.restore(std::move(entries));
        r.done();
    }
    {
        Reader r = open("optimizer");
        st.optimizer = Adam(r.f64());
        const std::size_t n = r.size();
        for (std::size_t i = 0; i < n; ++i) {
            const std::string name = r.str();
            Adam::Moments m;
            m.m = r.tensor();
            m.v = r.tensor();
            m.t = r.u64();
            st.optimizer.moments().emplace(name, std::move(m));
        }
        r.done();
    }
    {
        Reader r = open("progress");
        const std::size_t n = r.size();
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::size_t> cls(r.size());
            for (auto& k : cls) k = r.u64();
            st.task_classes.push_back(std::move(cls));
        }
        r.done();
    }
    return st;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) fail(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        os.flush();
        if (!os) fail(ErrorCode::kIo, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) fail(ErrorCode::kIo, "cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
    const auto bytes = serialize_state(state);
    write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::kIo, "cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize_state(bytes);
}

}  // namespace seca
