#pragma once

// Gaussian feature replay: per-class N(mu_k, Sigma_k) fitted on end-of-task
// adapted features, sampled as pseudo features for old classes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "seca/encoder.hpp"

namespace seca::replay {

constexpr double kVarianceFloor = 1e-6;

struct ClassGaussian {
    Tensor mean;      // d
    Tensor variance;  // d, per-dimension (floored)
    Tensor factor;    // d x d symmetric square root of Sigma; empty when diagonal
    std::size_t count = 0;
};

class ReplayStore {
   public:
    explicit ReplayStore(bool full_covariance = false) : full_covariance_(full_covariance) {}

    /// Fits class `class_id` from its features. Each class can be fitted once.
    void fit(std::size_t class_id, std::span<const Tensor> features);

    bool contains(std::size_t class_id) const { return classes_.count(class_id) != 0; }
    const ClassGaussian& at(std::size_t class_id) const;
    std::vector<std::size_t> classes() const;
    bool empty() const { return classes_.empty(); }
    bool full_covariance() const { return full_covariance_; }
    const std::map<std::size_t, ClassGaussian>& entries() const { return classes_; }

    /// n i.i.d. draws from the class distribution, deterministic per seed.
    std::vector<Tensor> sample(std::size_t class_id, std::size_t n, std::uint64_t seed) const;

    std::uint64_t checksum() const;
    void restore(std::map<std::size_t, ClassGaussian> entries) { classes_ = std::move(entries); }

   private:
    bool full_covariance_;
    std::map<std::size_t, ClassGaussian> classes_;
};

struct PseudoBatch {
    std::vector<Tensor> features;
    std::vector<std::size_t> labels;

    bool empty() const { return features.empty(); }
};

/// Draws n pseudo features with classes chosen uniformly among `classes`.
PseudoBatch sample_batch(const ReplayStore& store, std::span<const std::size_t> classes, std::size_t n,
                         std::uint64_t seed);

struct ReplayLosses {
    Var ce_t;
    Var ce_v;
};

/// Batch-mean text and visual cross-entropies of the pseudo features over the
/// joint class set. `support_index` maps a class id to its position in the
/// support; `visual_prob` is empty when the classifier has no visual side.
ReplayLosses replay_losses(Tape& tape, const PseudoBatch& batch, std::span<const Var> text,
                           const std::function<std::size_t(std::size_t)>& support_index,
                           const std::function<Var(const Var&)>& visual_prob, double tau);

}  // namespace seca::replay
