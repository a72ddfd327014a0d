#include "seca/encoder.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "seca/rng.hpp"

namespace seca {

namespace {

Tensor gaussian(num::Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.span()) v = rng.normal(0.0, stddev);
    return t;
}

FfnBlock make_block(std::size_t d, double in_scale, Rng& rng) {
    FfnBlock b;
    const std::size_t hidden = 4 * d;
    b.w1 = gaussian({d, hidden}, in_scale, rng);
    b.b1 = gaussian({hidden}, 0.1, rng);
    b.w2 = gaussian({hidden, d}, 1.0 / (std::sqrt(static_cast<double>(hidden)) * std::sqrt(static_cast<double>(d))),
                    rng);
    b.b2 = Tensor({d});
    return b;
}

void add_into(std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void normalize_in_place(Tensor& t) {
    const double n = num::kern::norm<double>(t.span());
    require(n > 0.0, ErrorCode::kInvalidInput, "cannot normalize a zero feature");
    for (double& v : t.span()) v /= n;
}

}  // namespace

void EncoderConfig::validate() const {
    require(d_v >= 2, ErrorCode::kInvalidConfig, "encoder.d_v: must be >= 2");
    require(d_t >= 2, ErrorCode::kInvalidConfig, "encoder.d_t: must be >= 2");
    require(layers >= 1, ErrorCode::kInvalidConfig, "encoder.layers: must be >= 1");
    require(adapter_width >= 1, ErrorCode::kInvalidConfig, "encoder.adapter_width: must be >= 1");
    require(prompt_tokens >= 1, ErrorCode::kInvalidConfig, "encoder.prompt_tokens: must be >= 1");
}

std::uint64_t checksum(std::span<const Tensor* const> tensors) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Tensor* t : tensors) {
        for (double v : t->span()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

std::uint64_t checksum(const Tensor& t) {
    const Tensor* p = &t;
    return checksum(std::span<const Tensor* const>(&p, 1));
}

// ---------------------------------------------------------------------------

Tensor FfnBlock::ffn(std::span<const double> x) const {
    Tensor hidden({w1.cols()});
    num::kern::vecmat<double>(x, w1, hidden.span());
    add_into(hidden.span(), b1.span());
    for (double& v : hidden.span()) v = std::tanh(v);
    Tensor out({w2.cols()});
    num::kern::vecmat<double>(hidden.span(), w2, out.span());
    add_into(out.span(), b2.span());
    return out;
}

Var FfnBlock::ffn(Tape& tape, const Var& x) const {
    Var hidden = num::add(num::vecmat(x, tape.constant_ref(w1)), tape.constant_ref(b1));
    hidden = num::tanh(hidden);
    return num::add(num::vecmat(hidden, tape.constant_ref(w2)), tape.constant_ref(b2));
}

VisualBackbone::VisualBackbone(const EncoderConfig& cfg) : dim_(cfg.d_v) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "visual-backbone"));
    for (std::size_t l = 0; l < cfg.layers; ++l) blocks_.push_back(make_block(cfg.d_v, 1.0, rng));
}

std::uint64_t VisualBackbone::checksum() const {
    std::vector<const Tensor*> ts;
    for (const auto& b : blocks_) ts.insert(ts.end(), {&b.w1, &b.b1, &b.w2, &b.b2});
    return seca::checksum(ts);
}

// ---------------------------------------------------------------------------

AdapterStack AdapterStack::init(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, "adapter"));
    AdapterStack s;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        AdapterLayer layer;
        layer.down = Parameter(gaussian({cfg.d_v, cfg.adapter_width}, 1.0, rng));
        layer.up = Parameter(Tensor({cfg.adapter_width, cfg.d_v}));
        s.layers_.push_back(std::move(layer));
    }
    return s;
}

AdapterStack AdapterStack::frozen_copy() const {
    AdapterStack s = *this;
    for (auto& l : s.layers_) {
        l.down.trainable = false;
        l.up.trainable = false;
        l.down.zero_grad();
        l.up.zero_grad();
    }
    return s;
}

std::vector<Parameter*> AdapterStack::parameters() {
    std::vector<Parameter*> ps;
    for (auto& l : layers_) ps.insert(ps.end(), {&l.down, &l.up});
    return ps;
}

std::uint64_t AdapterStack::checksum() const {
    std::vector<const Tensor*> ts;
    for (const auto& l : layers_) ts.insert(ts.end(), {&l.down.value, &l.up.value});
    return seca::checksum(ts);
}

Tensor AdapterStack::apply(std::size_t layer, std::span<const double> h) const {
    const auto& l = layers_.at(layer);
    Tensor mid({l.down.value.cols()});
    num::kern::vecmat<double>(h, l.down.value, mid.span());
    for (double& v : mid.span()) v = std::tanh(v);
    Tensor out({l.up.value.cols()});
    num::kern::vecmat<double>(mid.span(), l.up.value, out.span());
    return out;
}

BoundAdapter BoundAdapter::bind(Tape& tape, AdapterStack& stack) {
    BoundAdapter b;
    for (auto& l : stack.layers()) b.layers.emplace_back(tape.param(l.down), tape.param(l.up));
    return b;
}

Var BoundAdapter::apply(std::size_t layer, const Var& h) const {
    const auto& [down, up] = layers.at(layer);
    return num::vecmat(num::tanh(num::vecmat(h, down)), up);
}

// ---------------------------------------------------------------------------

ClassTokenTable::ClassTokenTable(std::size_t d_t, std::span<const std::size_t> superclass_of, double relatedness,
                                 std::uint64_t seed) {
    require(relatedness >= 0.0 && relatedness <= 1.0, ErrorCode::kInvalidConfig,
            "class token relatedness must lie in [0, 1]");
    std::size_t groups = 0;
    for (auto g : superclass_of) groups = std::max(groups, g + 1);
    const double sd = 1.0 / std::sqrt(static_cast<double>(d_t));
    Rng center_rng(derive_seed(seed, "token-centers"));
    std::vector<Tensor> centers;
    for (std::size_t g = 0; g < groups; ++g) centers.push_back(gaussian({d_t}, sd, center_rng));
    Rng rng(derive_seed(seed, "token-table"));
    const double own = std::sqrt(1.0 - relatedness * relatedness);
    for (std::size_t k = 0; k < superclass_of.size(); ++k) {
        Tensor t = gaussian({d_t}, sd, rng);
        const Tensor& c = centers[superclass_of[k]];
        for (std::size_t i = 0; i < d_t; ++i) t[i] = relatedness * c[i] + own * t[i];
        tokens_.push_back(std::move(t));
    }
}

const Tensor& ClassTokenTable::token(std::size_t class_id) const {
    if (!contains(class_id)) fail(ErrorCode::kUnknownClass, "class id " + std::to_string(class_id));
    return tokens_[class_id];
}

std::uint64_t ClassTokenTable::checksum() const {
    std::vector<const Tensor*> ts;
    for (const auto& t : tokens_) ts.push_back(&t);
    return seca::checksum(ts);
}

TextEncoder::TextEncoder(const EncoderConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "text-encoder"));
    // pooled tokens have norm ~1/sqrt(M+1); scale the first layer to match
    block_ = make_block(cfg.d_t, std::sqrt(static_cast<double>(cfg.prompt_tokens + 1)), rng);
}

std::uint64_t TextEncoder::checksum() const {
    const Tensor* ts[] = {&block_.w1, &block_.b1, &block_.w2, &block_.b2};
    return seca::checksum(ts);
}

// ---------------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& cfg, ClassTokenTable tokens)
    : cfg_(cfg), visual_(cfg), text_(cfg), tokens_(std::move(tokens)) {}

Tensor Encoder::visual_forward(std::span<const double> x, const AdapterStack* adapters) const {
    if (x.size() != cfg_.d_v)
        fail(ErrorCode::kInvalidInput, "visual input has dimension " + std::to_string(x.size()) + ", expected " +
                                           std::to_string(cfg_.d_v));
    if (adapters) require(adapters->size() == cfg_.layers, ErrorCode::kInvalidInput, "adapter count mismatch");
    Tensor h = Tensor::vector(x);
    for (std::size_t l = 0; l < visual_.blocks().size(); ++l) {
        Tensor next = h;
        add_into(next.span(), visual_.blocks()[l].ffn(h.span()).span());
        if (adapters) add_into(next.span(), adapters->apply(l, h.span()).span());
        h = std::move(next);
    }
    normalize_in_place(h);
    return h;
}

Var Encoder::visual_forward(Tape& tape, const Var& x, const BoundAdapter* adapters) const {
    if (x.size() != cfg_.d_v)
        fail(ErrorCode::kInvalidInput, "visual input has dimension " + std::to_string(x.size()) + ", expected " +
                                           std::to_string(cfg_.d_v));
    if (adapters) require(adapters->layers.size() == cfg_.layers, ErrorCode::kInvalidInput, "adapter count mismatch");
    Var h = x;
    for (std::size_t l = 0; l < visual_.blocks().size(); ++l) {
        Var next = num::add(h, visual_.blocks()[l].ffn(tape, h));
        if (adapters) next = num::add(next, adapters->apply(l, h));
        h = next;
    }
    return num::l2_normalize(h);
}

Tensor Encoder::text_forward(std::size_t class_id, const Tensor& prompt) const {
    const Tensor& token = tokens_.token(class_id);
    require(prompt.rank() == 2 && prompt.cols() == cfg_.d_t, ErrorCode::kInvalidInput, "prompt shape mismatch");
    Tensor pooled = token;
    for (std::size_t r = 0; r < prompt.rows(); ++r)
        for (std::size_t j = 0; j < cfg_.d_t; ++j) pooled[j] += prompt(r, j);
    const double inv = 1.0 / static_cast<double>(prompt.rows() + 1);
    for (double& v : pooled.span()) v *= inv;
    Tensor out = pooled;
    add_into(out.span(), text_.block().ffn(pooled.span()).span());
    normalize_in_place(out);
    return out;
}

Var Encoder::text_forward(Tape& tape, std::size_t class_id, const Var& prompt) const {
    const Tensor& token = tokens_.token(class_id);
    Var pooled = num::mean_rows_with(prompt, tape.constant_ref(token));
    Var out = num::add(pooled, text_.block().ffn(tape, pooled));
    return num::l2_normalize(out);
}

std::uint64_t Encoder::frozen_checksum() const {
    return mix64(visual_.checksum() ^ mix64(text_.checksum() ^ mix64(tokens_.checksum())));
}

Tensor Encoder::init_prompt(std::uint64_t seed) const {
    Rng rng(derive_seed(seed, "prompt"));
    return gaussian({cfg_.prompt_tokens, cfg_.d_t}, 0.1 / std::sqrt(static_cast<double>(cfg_.d_t)), rng);
}

// ---------------------------------------------------------------------------

Var clip_logits(const Var& f, std::span<const Var> class_features, double tau) {
    require(!class_features.empty(), ErrorCode::kInvalidInput, "clip_logits: empty class set");
    require(tau > 0.0, ErrorCode::kInvalidConfig, "clip_logits: temperature must be positive");
    std::vector<Var> sims;
    sims.reserve(class_features.size());
    for (const auto& t : class_features) sims.push_back(num::cosine_sim(f, t));
    return num::scale(num::stack<double>(sims), 1.0 / tau);
}

std::vector<double> clip_logits(std::span<const double> f, std::span<const Tensor> class_features, double tau) {
    require(!class_features.empty(), ErrorCode::kInvalidInput, "clip_logits: empty class set");
    require(tau > 0.0, ErrorCode::kInvalidConfig, "clip_logits: temperature must be positive");
    std::vector<double> out;
    out.reserve(class_features.size());
    for (const auto& t : class_features) out.push_back(num::cosine_value<double>(f, t.span()) * (1.0 / tau));
    return out;
}

}  // namespace seca
