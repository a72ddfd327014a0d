#include "seca/sgakt.hpp"

#include <cmath>

#include "seca/rng.hpp"

namespace seca::sgakt {

std::vector<double> AdapterPool::utilities() const {
    std::vector<double> u;
    u.reserve(entries_.size());
    for (const auto& e : entries_) u.push_back(e.utility);
    return u;
}

std::optional<std::size_t> AdapterPool::admit(const AdapterStack& adapter) {
    std::optional<std::size_t> removed;
    if (bounded() && entries_.size() >= max_size_) {
        std::size_t best = 0;
        for (std::size_t p = 1; p < entries_.size(); ++p)
            if (entries_[p].utility > entries_[best].utility) best = p;
        entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(best));
        removed = best;
    }
    const double init = bounded() ? 1.0 / static_cast<double>(max_size_)
                                  : 1.0 / static_cast<double>(entries_.size() + 1);
    entries_.push_back({adapter.frozen_copy(), init});
    return removed;
}

void AdapterPool::update_utilities(std::span<const double> alpha_mean, double mu) {
    require(mu >= 0.0 && mu <= 1.0, ErrorCode::kInvalidConfig, "utility momentum must lie in [0, 1]");
    if (alpha_mean.size() != entries_.size())
        fail(ErrorCode::kInvalidInput, "utility update: " + std::to_string(alpha_mean.size()) +
                                           " scores for a pool of " + std::to_string(entries_.size()));
    for (std::size_t p = 0; p < entries_.size(); ++p)
        entries_[p].utility = mu * entries_[p].utility + (1.0 - mu) * alpha_mean[p];
}

std::uint64_t AdapterPool::checksum() const {
    std::uint64_t h = mix64(entries_.size());
    for (const auto& e : entries_) h = mix64(h ^ e.adapter.checksum());
    return h;
}

std::vector<Tensor> pooled_views(const Encoder& encoder, std::span<const double> x, const AdapterPool& pool) {
    require(!pool.empty(), ErrorCode::kEmptyPool, "pooled_views needs at least one pooled adapter");
    std::vector<Tensor> views;
    views.reserve(pool.size());
    for (const auto& e : pool.entries()) views.push_back(encoder.visual_forward(x, &e.adapter));
    return views;
}

std::vector<Var> semantic_vectors(Tape& tape, const Encoder& encoder, std::size_t class_id,
                                  std::span<const Var> prompts) {
    require(!prompts.empty(), ErrorCode::kInvalidInput, "semantic_vectors needs at least one prompt");
    std::vector<Var> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) out.push_back(encoder.text_forward(tape, class_id, p));
    return out;
}

Projectors Projectors::init(std::size_t d_t, std::size_t d_v, std::uint64_t seed) {
    // entries ~ N(0, 1/d^2) keep the initial relevance scores O(1/sqrt(d))
    Rng rng(derive_seed(seed, "projectors"));
    Projectors p;
    Tensor ws({d_t, d_v}), wv({d_v, d_v});
    for (double& v : ws.span()) v = rng.normal(0.0, 1.0 / static_cast<double>(d_v));
    for (double& v : wv.span()) v = rng.normal(0.0, 1.0 / static_cast<double>(d_v));
    p.w_s = Parameter(std::move(ws));
    p.w_v = Parameter(std::move(wv));
    return p;
}

Projectors Projectors::zeros(std::size_t d_t, std::size_t d_v) {
    Projectors p;
    p.w_s = Parameter(Tensor({d_t, d_v}));
    p.w_v = Parameter(Tensor({d_v, d_v}));
    return p;
}

std::vector<Var> project_semantic(std::span<const Var> semantic, const Var& w_s) {
    std::vector<Var> out;
    out.reserve(semantic.size());
    for (const auto& s : semantic) out.push_back(num::vecmat(num::layernorm(s), w_s));
    return out;
}

std::vector<Var> project_views(std::span<const Var> views, const Var& w_v) {
    std::vector<Var> out;
    out.reserve(views.size());
    for (const auto& v : views) out.push_back(num::vecmat(num::layernorm(v), w_v));
    return out;
}

Var relevance_from_projected(std::span<const Var> semantic_proj, std::span<const Var> view_proj) {
    require(!semantic_proj.empty() && !view_proj.empty(), ErrorCode::kInvalidInput,
            "relevance scores need semantic vectors and pooled views");
    const double inv_s = 1.0 / static_cast<double>(semantic_proj.size());
    std::vector<Var> alphas;
    alphas.reserve(view_proj.size());
    for (const auto& b : view_proj) {
        std::vector<Var> terms;
        terms.reserve(semantic_proj.size());
        for (const auto& a : semantic_proj) terms.push_back(num::dot(a, b));
        alphas.push_back(num::scale(num::sum<double>(terms), inv_s));
    }
    return num::stack<double>(alphas);
}

Var relevance_scores(std::span<const Var> semantic, std::span<const Var> views, const Var& w_s, const Var& w_v) {
    const auto a = project_semantic(semantic, w_s);
    const auto b = project_views(views, w_v);
    return relevance_from_projected(a, b);
}

Aggregation aggregate(std::span<const Var> views, const Var& alpha, double lambda) {
    require(lambda >= 0.0, ErrorCode::kInvalidConfig, "aggregation scale lambda must be >= 0");
    if (alpha.size() != views.size())
        fail(ErrorCode::kInvalidInput, "aggregate: " + std::to_string(alpha.size()) + " scores for " +
                                           std::to_string(views.size()) + " views");
    Var w = num::softmax_temp(num::scale(alpha, lambda), 1.0);
    return {w, num::weighted_sum(w, views)};
}

Aggregation aggregate_uniform(std::span<const Var> views) {
    require(!views.empty(), ErrorCode::kEmptyPool, "aggregate: no pooled views");
    Tape& tape = *views[0].tape();
    Var w = tape.constant(Tensor({views.size()}, 1.0 / static_cast<double>(views.size())));
    return {w, num::weighted_sum(w, views)};
}

Var loss_agg(const Var& v_agg, std::size_t y, std::span<const Var> text, double tau) {
    if (y >= text.size()) fail(ErrorCode::kInvalidInput, "loss_agg: label outside the training class set");
    return num::cross_entropy(num::softmax_temp(clip_logits(v_agg, text, tau), 1.0), y);
}

Var loss_sgakt(const Var& teacher_feature, const Var& student_feature, std::span<const Var> text, double tau_prime,
               double eps) {
    require(tau_prime > 0.0, ErrorCode::kInvalidConfig, "distillation temperature must be positive");
    // the teacher branch is rebuilt from detached inputs: no gradient reaches
    // the aggregate, the projectors, or the teacher's text features
    std::vector<Var> text_sg;
    text_sg.reserve(text.size());
    for (const auto& t : text) text_sg.push_back(num::detach(t));
    Var teacher = num::softmax_temp(clip_logits(num::detach(teacher_feature), text_sg, tau_prime), 1.0);
    Var student = num::softmax_temp(clip_logits(student_feature, text, tau_prime), 1.0);
    return num::kl_div(teacher, student, eps);
}

std::string_view to_string(DistillStrategy s) {
    switch (s) {
        case DistillStrategy::kSeq: return "seq";
        case DistillStrategy::kClipKd: return "clip_kd";
        case DistillStrategy::kVanilla: return "vanilla";
        case DistillStrategy::kAvgKd: return "avg_kd";
        case DistillStrategy::kSgAkt: return "sg_akt";
    }
    return "?";
}

DistillStrategy parse_distill_strategy(std::string_view name) {
    for (auto s : all_distill_strategies())
        if (to_string(s) == name) return s;
    fail(ErrorCode::kInvalidConfig, "unknown distillation strategy '" + std::string(name) + "'");
}

const std::vector<DistillStrategy>& all_distill_strategies() {
    static const std::vector<DistillStrategy> all = {DistillStrategy::kSeq, DistillStrategy::kClipKd,
                                                     DistillStrategy::kVanilla, DistillStrategy::kAvgKd,
                                                     DistillStrategy::kSgAkt};
    return all;
}

Var distill_variant(DistillStrategy strategy, const DistillInputs& in, double tau_prime, double eps) {
    Tape& tape = *in.student.tape();
    auto zero = [&] { return tape.constant(Tensor::scalar(0.0)); };
    switch (strategy) {
        case DistillStrategy::kSeq:
            return zero();
        case DistillStrategy::kClipKd:
            require(in.frozen_feature.has_value(), ErrorCode::kInvalidInput, "clip_kd needs the frozen feature");
            return loss_sgakt(*in.frozen_feature, in.student, in.text, tau_prime, eps);
        case DistillStrategy::kVanilla:
            if (!in.previous_feature) return zero();
            return loss_sgakt(*in.previous_feature, in.student, in.text, tau_prime, eps);
        case DistillStrategy::kAvgKd:
        case DistillStrategy::kSgAkt:
            if (!in.aggregate_feature) return zero();
            return loss_sgakt(*in.aggregate_feature, in.student, in.text, tau_prime, eps);
    }
    return zero();
}

}  // namespace seca::sgakt
