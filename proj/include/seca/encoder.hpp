#pragma once

// Frozen stand-in encoders: a residual feed-forward visual backbone with
// bottleneck adapters inserted alongside each block, and a text encoder that
// mean-pools [prompt tokens ; class token] through one frozen residual unit.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "seca/numkernel.hpp"

namespace seca {

using Tensor = num::Tensor<double>;
using Parameter = num::Parameter<double>;
using Var = num::Var<double>;
using Tape = num::Tape<double>;

struct EncoderConfig {
    std::size_t d_v = 64;
    std::size_t d_t = 64;
    std::size_t layers = 4;
    std::size_t adapter_width = 16;
    std::size_t prompt_tokens = 4;
    std::uint64_t seed = 0;

    void validate() const;
};

/// FNV-1a over the raw bytes of a tensor sequence.
std::uint64_t checksum(std::span<const Tensor* const> tensors);
std::uint64_t checksum(const Tensor& t);

/// Frozen residual unit: x + (tanh(x W1 + b1) W2 + b2).
struct FfnBlock {
    Tensor w1, b1, w2, b2;

    Tensor ffn(std::span<const double> x) const;
    Var ffn(Tape& tape, const Var& x) const;
};

class VisualBackbone {
   public:
    explicit VisualBackbone(const EncoderConfig& cfg);

    std::size_t dim() const { return dim_; }
    const std::vector<FfnBlock>& blocks() const { return blocks_; }
    std::uint64_t checksum() const;

   private:
    std::size_t dim_;
    std::vector<FfnBlock> blocks_;
};

struct AdapterLayer {
    Parameter down;  // d_V x w
    Parameter up;    // w x d_V, zero at init
};

/// One bottleneck adapter per backbone block: A_l(h) = tanh(h D_l) U_l.
class AdapterStack {
   public:
    AdapterStack() = default;
    static AdapterStack init(const EncoderConfig& cfg, std::uint64_t seed);

    std::vector<AdapterLayer>& layers() { return layers_; }
    const std::vector<AdapterLayer>& layers() const { return layers_; }
    std::size_t size() const { return layers_.size(); }

    /// Deep copy with every parameter marked non-trainable.
    AdapterStack frozen_copy() const;
    std::vector<Parameter*> parameters();
    std::uint64_t checksum() const;

    Tensor apply(std::size_t layer, std::span<const double> h) const;

   private:
    std::vector<AdapterLayer> layers_;
};

/// Adapter parameters bound to a tape (one leaf per parameter per tape).
struct BoundAdapter {
    std::vector<std::pair<Var, Var>> layers;

    static BoundAdapter bind(Tape& tape, AdapterStack& stack);
    Var apply(std::size_t layer, const Var& h) const;
};

/// Frozen class-token table (the CLASS_y embeddings). Tokens of classes that
/// share a superclass are correlated by `relatedness`.
class ClassTokenTable {
   public:
    ClassTokenTable() = default;
    ClassTokenTable(std::size_t d_t, std::span<const std::size_t> superclass_of, double relatedness,
                    std::uint64_t seed);

    std::size_t num_classes() const { return tokens_.size(); }
    bool contains(std::size_t class_id) const { return class_id < tokens_.size(); }
    const Tensor& token(std::size_t class_id) const;
    std::uint64_t checksum() const;

   private:
    std::vector<Tensor> tokens_;
};

class TextEncoder {
   public:
    explicit TextEncoder(const EncoderConfig& cfg);

    const FfnBlock& block() const { return block_; }
    std::uint64_t checksum() const;

   private:
    FfnBlock block_;
};

/// The frozen parts of the model: visual backbone, text encoder, token table.
class Encoder {
   public:
    Encoder(const EncoderConfig& cfg, ClassTokenTable tokens);

    const EncoderConfig& config() const { return cfg_; }
    const VisualBackbone& visual() const { return visual_; }
    const TextEncoder& text() const { return text_; }
    const ClassTokenTable& tokens() const { return tokens_; }

    /// F_V(x) when `adapters` is null, F_V(x; A) otherwise. Output is unit norm.
    Tensor visual_forward(std::span<const double> x, const AdapterStack* adapters) const;
    Var visual_forward(Tape& tape, const Var& x, const BoundAdapter* adapters) const;

    /// F_T([P ; CLASS_y]), unit norm.
    Tensor text_forward(std::size_t class_id, const Tensor& prompt) const;
    Var text_forward(Tape& tape, std::size_t class_id, const Var& prompt) const;

    /// Checksum of every frozen weight.
    std::uint64_t frozen_checksum() const;

    Tensor init_prompt(std::uint64_t seed) const;

   private:
    EncoderConfig cfg_;
    VisualBackbone visual_;
    TextEncoder text_;
    ClassTokenTable tokens_;
};

/// Cosine similarities divided by tau, one per class feature.
Var clip_logits(const Var& f, std::span<const Var> class_features, double tau);
std::vector<double> clip_logits(std::span<const double> f, std::span<const Tensor> class_features, double tau);

}  // namespace seca
