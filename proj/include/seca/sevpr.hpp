#pragma once

// Semantic-enhanced visual prototype refinement: frozen-encoder class means,
// an RBF affinity over projected class text embeddings, row-stochastic mixing
// of the raw prototypes, and the visual-side classifier built on the result.

#include <cstddef>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "seca/encoder.hpp"

namespace seca::sevpr {

class PrototypeBank {
   public:
    /// Writes a raw prototype once; a second write for the same class fails.
    void add_raw(std::size_t class_id, Tensor prototype, std::size_t count);

    bool has_raw(std::size_t class_id) const { return raw_.count(class_id) != 0; }
    const Tensor& raw(std::size_t class_id) const;
    std::size_t count(std::size_t class_id) const { return counts_.at(class_id); }

    void set_refined(std::map<std::size_t, Tensor> refined) { refined_current_ = std::move(refined); }
    const std::map<std::size_t, Tensor>& refined_current() const { return refined_current_; }
    const std::map<std::size_t, Tensor>& refined_snapshot() const { return refined_snapshot_; }
    const std::map<std::size_t, Tensor>& raw_all() const { return raw_; }
    const std::map<std::size_t, std::size_t>& counts() const { return counts_; }

    /// refined_snapshot := deep copy of refined_current.
    void snapshot() { refined_snapshot_ = refined_current_; }

    std::uint64_t raw_checksum() const;
    std::uint64_t snapshot_checksum() const;

    void restore(std::map<std::size_t, Tensor> raw, std::map<std::size_t, std::size_t> counts,
                 std::map<std::size_t, Tensor> current, std::map<std::size_t, Tensor> snapshot);

   private:
    std::map<std::size_t, Tensor> raw_;
    std::map<std::size_t, std::size_t> counts_;
    std::map<std::size_t, Tensor> refined_current_;
    std::map<std::size_t, Tensor> refined_snapshot_;
};

/// c_k = mean of F_V(x) over the class's samples, adapter-free encoder.
void raw_prototypes(PrototypeBank& bank, const Encoder& encoder, std::span<const std::vector<double>> features,
                    std::span<const std::size_t> labels, std::span<const std::size_t> classes);

struct AffinityModel {
    Parameter h_proj;  // d_T x d_T
    double gamma = 1.0;

    /// H = (2 / sqrt(d_T)) I: unrelated unit-variance embeddings start at a
    /// squared projected distance of about 8.
    static AffinityModel init(std::size_t d_t, double gamma);
};

/// Rows of M with M_kj = exp(-gamma |phi(Z_k) H - phi(Z_j) H|^2). Symmetric
/// pairs share one node and the diagonal is the constant 1.
std::vector<Var> affinity_matrix(std::span<const Var> z, const Var& h_proj, double gamma);

/// c_hat_k = sum_j (M_kj / sum_i M_ki) c_j.
std::vector<Var> refine_prototypes(std::span<const Var> affinity_rows, std::span<const Var> raw);

/// softmax over cosine(f, c_hat_y) / tau.
Var visual_prob(const Var& f, std::span<const Var> prototypes, double tau);
std::vector<double> visual_prob(std::span<const double> f, std::span<const Tensor> prototypes, double tau);

Var loss_ce_v(const Var& f, std::span<const Var> prototypes, std::size_t y, double tau);

/// Mean squared distance between current and snapshot refined prototypes of
/// the old classes; zero when there are none.
Var loss_reg(Tape& tape, std::span<const Var> current_old, std::span<const Tensor> snapshot_old);

enum class ClassifierKind { kOnlyText, kCentroidClip, kCentroidAdapted, kLinear, kSeVpr };

std::string_view to_string(ClassifierKind k);
ClassifierKind parse_classifier_kind(std::string_view name);
const std::vector<ClassifierKind>& all_classifier_kinds();

/// Trainable affine head over adapted features, one block of columns per task.
struct LinearHead {
    struct Block {
        Parameter weight;  // d_V x C_task
        Parameter bias;    // C_task
    };
    std::vector<Block> blocks;

    void grow(std::size_t d_v, std::size_t classes);
    std::size_t num_classes() const;
    Var logits(Tape& tape, const Var& f, std::vector<Parameter*>* bound = nullptr);
    std::vector<double> logits(std::span<const double> f) const;
};

}  // namespace seca::sevpr
