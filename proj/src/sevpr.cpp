#include "seca/sevpr.hpp"

#include <cmath>
#include <string>

#include "seca/rng.hpp"

namespace seca::sevpr {

void PrototypeBank::add_raw(std::size_t class_id, Tensor prototype, std::size_t count) {
    if (has_raw(class_id))
        fail(ErrorCode::kProtocolViolation, "raw prototype for class " + std::to_string(class_id) + " already exists");
    raw_.emplace(class_id, std::move(prototype));
    counts_.emplace(class_id, count);
}

const Tensor& PrototypeBank::raw(std::size_t class_id) const {
    auto it = raw_.find(class_id);
    if (it == raw_.end()) fail(ErrorCode::kUnknownClass, "no raw prototype for class " + std::to_string(class_id));
    return it->second;
}

namespace {
std::uint64_t map_checksum(const std::map<std::size_t, Tensor>& m) {
    std::uint64_t h = mix64(m.size());
    for (const auto& [k, t] : m) h = mix64(h ^ mix64(k) ^ checksum(t));
    return h;
}
}  // namespace

std::uint64_t PrototypeBank::raw_checksum() const { return map_checksum(raw_); }
std::uint64_t PrototypeBank::snapshot_checksum() const { return map_checksum(refined_snapshot_); }

void PrototypeBank::restore(std::map<std::size_t, Tensor> raw, std::map<std::size_t, std::size_t> counts,
                            std::map<std::size_t, Tensor> current, std::map<std::size_t, Tensor> snapshot) {
    raw_ = std::move(raw);
    counts_ = std::move(counts);
    refined_current_ = std::move(current);
    refined_snapshot_ = std::move(snapshot);
}

void raw_prototypes(PrototypeBank& bank, const Encoder& encoder, std::span<const std::vector<double>> features,
                    std::span<const std::size_t> labels, std::span<const std::size_t> classes) {
    require(features.size() == labels.size(), ErrorCode::kInvalidInput, "features and labels differ in length");
    for (std::size_t k : classes)
        if (bank.has_raw(k))
            fail(ErrorCode::kProtocolViolation, "class " + std::to_string(k) + " already has a raw prototype");
    std::map<std::size_t, Tensor> sums;
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t k : classes) {
        sums.emplace(k, Tensor({encoder.config().d_v}));
        counts.emplace(k, 0);
    }
    for (std::size_t i = 0; i < features.size(); ++i) {
        auto it = sums.find(labels[i]);
        if (it == sums.end()) continue;
        const Tensor f = encoder.visual_forward(features[i], nullptr);
        for (std::size_t j = 0; j < f.size(); ++j) it->second[j] += f[j];
        ++counts[labels[i]];
    }
    for (std::size_t k : classes) {
        if (counts[k] == 0) fail(ErrorCode::kMissingClass, "class " + std::to_string(k) + " has no samples");
        Tensor c = sums[k];
        const double inv = 1.0 / static_cast<double>(counts[k]);
        for (double& v : c.span()) v *= inv;
        bank.add_raw(k, std::move(c), counts[k]);
    }
}

AffinityModel AffinityModel::init(std::size_t d_t, double gamma) {
    AffinityModel m;
    Tensor h({d_t, d_t});
    const double diag = 2.0 / std::sqrt(static_cast<double>(d_t));
    for (std::size_t i = 0; i < d_t; ++i) h(i, i) = diag;
    m.h_proj = Parameter(std::move(h));
    m.gamma = gamma;
    return m;
}

std::vector<Var> affinity_matrix(std::span<const Var> z, const Var& h_proj, double gamma) {
    require(!z.empty(), ErrorCode::kInvalidInput, "affinity matrix needs at least one class");
    require(gamma >= 0.0, ErrorCode::kInvalidConfig, "affinity scale gamma must be >= 0");
    Tape& tape = *h_proj.tape();
    const std::size_t k = z.size();
    std::vector<Var> u;
    u.reserve(k);
    for (const auto& zk : z) u.push_back(num::vecmat(num::layernorm(zk), h_proj));
    std::vector<std::vector<Var>> m(k, std::vector<Var>(k));
    const Var one = tape.constant(Tensor::scalar(1.0));
    for (std::size_t a = 0; a < k; ++a) {
        m[a][a] = one;
        for (std::size_t b = a + 1; b < k; ++b) {
            Var e = num::exp(num::scale(num::squared_norm(num::sub(u[a], u[b])), -gamma));
            m[a][b] = e;
            m[b][a] = e;
        }
    }
    std::vector<Var> rows;
    rows.reserve(k);
    for (const auto& r : m) rows.push_back(num::stack<double>(r));
    return rows;
}

std::vector<Var> refine_prototypes(std::span<const Var> affinity_rows, std::span<const Var> raw) {
    std::vector<Var> out;
    out.reserve(affinity_rows.size());
    for (const auto& row : affinity_rows) {
        if (row.size() != raw.size())
            fail(ErrorCode::kInvalidInput, "affinity row of length " + std::to_string(row.size()) + " for " +
                                               std::to_string(raw.size()) + " prototypes");
        out.push_back(num::weighted_sum(num::normalize_sum(row), raw));
    }
    return out;
}

Var visual_prob(const Var& f, std::span<const Var> prototypes, double tau) {
    require(!prototypes.empty(), ErrorCode::kInvalidInput, "visual classifier needs at least one class");
    return num::softmax_temp(clip_logits(f, prototypes, tau), 1.0);
}

std::vector<double> visual_prob(std::span<const double> f, std::span<const Tensor> prototypes, double tau) {
    require(!prototypes.empty(), ErrorCode::kInvalidInput, "visual classifier needs at least one class");
    const auto logits = clip_logits(f, prototypes, tau);
    return num::softmax_values<double>(logits, 1.0);
}

Var loss_ce_v(const Var& f, std::span<const Var> prototypes, std::size_t y, double tau) {
    if (y >= prototypes.size()) fail(ErrorCode::kInvalidInput, "loss_ce_v: label outside the class set");
    return num::cross_entropy(visual_prob(f, prototypes, tau), y);
}

Var loss_reg(Tape& tape, std::span<const Var> current_old, std::span<const Tensor> snapshot_old) {
    if (current_old.size() != snapshot_old.size())
        fail(ErrorCode::kMissingClass, "prototype snapshot does not cover every old class");
    if (current_old.empty()) return tape.constant(Tensor::scalar(0.0));
    std::vector<Var> terms;
    terms.reserve(current_old.size());
    for (std::size_t k = 0; k < current_old.size(); ++k)
        terms.push_back(num::squared_norm(num::sub(current_old[k], tape.constant_ref(snapshot_old[k]))));
    return num::scale(num::sum<double>(terms), 1.0 / static_cast<double>(terms.size()));
}

std::string_view to_string(ClassifierKind k) {
    switch (k) {
        case ClassifierKind::kOnlyText: return "only_text";
        case ClassifierKind::kCentroidClip: return "centroid_clip";
        case ClassifierKind::kCentroidAdapted: return "centroid_adapted";
        case ClassifierKind::kLinear: return "linear";
        case ClassifierKind::kSeVpr: return "se_vpr";
    }
    return "?";
}

ClassifierKind parse_classifier_kind(std::string_view name) {
    for (auto k : all_classifier_kinds())
        if (to_string(k) == name) return k;
    fail(ErrorCode::kInvalidConfig, "unknown classifier variant '" + std::string(name) + "'");
}

const std::vector<ClassifierKind>& all_classifier_kinds() {
    static const std::vector<ClassifierKind> all = {ClassifierKind::kOnlyText, ClassifierKind::kCentroidClip,
                                                    ClassifierKind::kCentroidAdapted, ClassifierKind::kLinear,
                                                    ClassifierKind::kSeVpr};
    return all;
}

void LinearHead::grow(std::size_t d_v, std::size_t classes) {
    blocks.push_back({Parameter(Tensor({d_v, classes})), Parameter(Tensor({classes}))});
}

std::size_t LinearHead::num_classes() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.bias.value.size();
    return n;
}

Var LinearHead::logits(Tape& tape, const Var& f, std::vector<Parameter*>* bound) {
    require(!blocks.empty(), ErrorCode::kInvalidInput, "linear head has no classes");
    std::vector<Var> parts;
    for (auto& b : blocks) {
        parts.push_back(num::add(num::vecmat(f, tape.param(b.weight)), tape.param(b.bias)));
        if (bound) bound->insert(bound->end(), {&b.weight, &b.bias});
    }
    return num::concat<double>(parts);
}

std::vector<double> LinearHead::logits(std::span<const double> f) const {
    std::vector<double> out;
    for (const auto& b : blocks) {
        std::vector<double> part(b.bias.value.size());
        num::kern::vecmat<double>(f, b.weight.value, part);
        for (std::size_t j = 0; j < part.size(); ++j) part[j] += b.bias.value[j];
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

}  // namespace seca::sevpr
