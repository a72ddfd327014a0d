#pragma once

// Semantic-guided adaptive knowledge transfer: a pool of frozen historical
// adapters, text-queried relevance scores, instance-adaptive aggregation of
// the pooled views, and the distillation losses built on the aggregate.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seca/encoder.hpp"

namespace seca::sgakt {

struct PoolEntry {
    AdapterStack adapter;
    double utility = 0.0;
};

class AdapterPool {
   public:
    static constexpr std::size_t kUnbounded = 0;

    explicit AdapterPool(std::size_t max_size = 5) : max_size_(max_size) {}

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t max_size() const { return max_size_; }
    bool bounded() const { return max_size_ != kUnbounded; }
    const std::vector<PoolEntry>& entries() const { return entries_; }
    std::vector<double> utilities() const;

    /// Inserts a frozen deep copy of `adapter`. A full pool first drops the
    /// entry with the highest utility (lowest index on ties); the index of the
    /// dropped entry is returned.
    std::optional<std::size_t> admit(const AdapterStack& adapter);

    /// U <- mu * U + (1 - mu) * alpha_mean, per entry.
    void update_utilities(std::span<const double> alpha_mean, double mu);

    std::uint64_t checksum() const;

    /// Restores raw state (checkpoint loading).
    void restore(std::vector<PoolEntry> entries) { entries_ = std::move(entries); }

   private:
    std::size_t max_size_;
    std::vector<PoolEntry> entries_;
};

/// V_x^(p) = F_V(x; A^p) for every pool entry.
std::vector<Tensor> pooled_views(const Encoder& encoder, std::span<const double> x, const AdapterPool& pool);

/// S_y^(i) = F_T(y; P^i) for the given prompts (oldest first).
std::vector<Var> semantic_vectors(Tape& tape, const Encoder& encoder, std::size_t class_id,
                                  std::span<const Var> prompts);

struct Projectors {
    Parameter w_s;  // d_T x d_V
    Parameter w_v;  // d_V x d_V

    static Projectors init(std::size_t d_t, std::size_t d_v, std::uint64_t seed);
    static Projectors zeros(std::size_t d_t, std::size_t d_v);
};

/// phi(S^(i)) W_S for each semantic vector.
std::vector<Var> project_semantic(std::span<const Var> semantic, const Var& w_s);
/// phi(V^(p)) W_V for each pooled view.
std::vector<Var> project_views(std::span<const Var> views, const Var& w_v);
/// alpha^(p) = (1/s) sum_i a_i . b_p, from already projected vectors.
Var relevance_from_projected(std::span<const Var> semantic_proj, std::span<const Var> view_proj);

Var relevance_scores(std::span<const Var> semantic, std::span<const Var> views, const Var& w_s, const Var& w_v);

struct Aggregation {
    Var weights;  // softmax(lambda * alpha)
    Var feature;  // V^agg
};

Aggregation aggregate(std::span<const Var> views, const Var& alpha, double lambda);
/// Forced-uniform aggregation (Avg-KD teacher).
Aggregation aggregate_uniform(std::span<const Var> views);

/// Cross-entropy of the CLIP-style softmax computed from V^agg.
Var loss_agg(const Var& v_agg, std::size_t y, std::span<const Var> text, double tau);

/// KL(sg(p(.|teacher, tau')) || p(.|student, tau') + eps).
Var loss_sgakt(const Var& teacher_feature, const Var& student_feature, std::span<const Var> text, double tau_prime,
               double eps);

enum class DistillStrategy { kSeq, kClipKd, kVanilla, kAvgKd, kSgAkt };

std::string_view to_string(DistillStrategy s);
DistillStrategy parse_distill_strategy(std::string_view name);
const std::vector<DistillStrategy>& all_distill_strategies();

struct DistillInputs {
    Var student;                           // F_V(x; A), current adapter
    std::span<const Var> text;             // text classifier over the training support
    std::optional<Var> frozen_feature;     // F_V(x), teacher for clip_kd
    std::optional<Var> previous_feature;   // F_V(x; A^{s-1}), teacher for vanilla
    std::optional<Var> aggregate_feature;  // V^agg (uniform for avg_kd, relevance-weighted for sg_akt)
};

/// Distillation loss of the chosen strategy. `seq`, and `vanilla` without a
/// previous snapshot, return a constant zero.
Var distill_variant(DistillStrategy strategy, const DistillInputs& in, double tau_prime, double eps);

}  // namespace seca::sgakt
