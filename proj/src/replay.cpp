#include "seca/replay.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "seca/rng.hpp"

namespace seca::replay {

void ReplayStore::fit(std::size_t class_id, std::span<const Tensor> features) {
    if (features.empty()) fail(ErrorCode::kMissingClass, "cannot fit class " + std::to_string(class_id) + ": no samples");
    if (contains(class_id))
        fail(ErrorCode::kProtocolViolation, "replay distribution for class " + std::to_string(class_id) +
                                                " already stored");
    const std::size_t d = features[0].size();
    const std::size_t n = features.size();
    ClassGaussian g;
    g.count = n;
    g.mean = Tensor({d});
    for (const auto& f : features) {
        require(f.size() == d, ErrorCode::kInvalidInput, "replay features differ in dimension");
        for (std::size_t j = 0; j < d; ++j) g.mean[j] += f[j];
    }
    for (double& v : g.mean.span()) v /= static_cast<double>(n);

    g.variance = Tensor({d}, kVarianceFloor);
    if (n >= 2) {
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0;
            for (const auto& f : features) s += (f[j] - g.mean[j]) * (f[j] - g.mean[j]);
            g.variance[j] = std::max(s / static_cast<double>(n - 1), kVarianceFloor);
        }
    }

    if (full_covariance_) {
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        if (n >= 2) {
            for (const auto& f : features) {
                Eigen::VectorXd c(static_cast<Eigen::Index>(d));
                for (std::size_t j = 0; j < d; ++j) c[static_cast<Eigen::Index>(j)] = f[j] - g.mean[j];
                cov += c * c.transpose();
            }
            cov /= static_cast<double>(n - 1);
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
        Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(kVarianceFloor).cwiseSqrt();
        Eigen::MatrixXd root = eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
        g.factor = Tensor({d, d});
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c)
                g.factor(r, c) = root(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
    classes_.emplace(class_id, std::move(g));
}

const ClassGaussian& ReplayStore::at(std::size_t class_id) const {
    auto it = classes_.find(class_id);
    if (it == classes_.end()) fail(ErrorCode::kUnknownClass, "no replay distribution for class " + std::to_string(class_id));
    return it->second;
}

std::vector<std::size_t> ReplayStore::classes() const {
    std::vector<std::size_t> out;
    for (const auto& [k, _] : classes_) out.push_back(k);
    return out;
}

std::vector<Tensor> ReplayStore::sample(std::size_t class_id, std::size_t n, std::uint64_t seed) const {
    const ClassGaussian& g = at(class_id);
    const std::size_t d = g.mean.size();
    Rng rng(derive_seed(seed, "replay-sample", class_id));
    std::vector<Tensor> out;
    out.reserve(n);
    std::vector<double> z(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (double& v : z) v = rng.normal();
        Tensor x = g.mean;
        if (g.factor.empty()) {
            for (std::size_t j = 0; j < d; ++j) x[j] += std::sqrt(g.variance[j]) * z[j];
        } else {
            for (std::size_t r = 0; r < d; ++r) x[r] += num::kern::dot<double>(g.factor.row(r), z);
        }
        out.push_back(std::move(x));
    }
    return out;
}

std::uint64_t ReplayStore::checksum() const {
    std::uint64_t h = mix64(classes_.size());
    for (const auto& [k, g] : classes_) {
        const Tensor* ts[] = {&g.mean, &g.variance, &g.factor};
        h = mix64(h ^ mix64(k) ^ seca::checksum(ts));
    }
    return h;
}

PseudoBatch sample_batch(const ReplayStore& store, std::span<const std::size_t> classes, std::size_t n,
                         std::uint64_t seed) {
    PseudoBatch batch;
    if (classes.empty() || n == 0) return batch;
    Rng rng(derive_seed(seed, "replay-classes"));
    std::map<std::size_t, std::size_t> per_class;
    std::vector<std::size_t> order;
    order.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = classes[rng.below(classes.size())];
        order.push_back(k);
        ++per_class[k];
    }
    std::map<std::size_t, std::vector<Tensor>> drawn;
    for (const auto& [k, count] : per_class) drawn[k] = store.sample(k, count, seed);
    std::map<std::size_t, std::size_t> cursor;
    for (std::size_t k : order) {
        batch.features.push_back(drawn[k][cursor[k]++]);
        batch.labels.push_back(k);
    }
    return batch;
}

ReplayLosses replay_losses(Tape& tape, const PseudoBatch& batch, std::span<const Var> text,
                           const std::function<std::size_t(std::size_t)>& support_index,
                           const std::function<Var(const Var&)>& visual_prob, double tau) {
    if (batch.empty()) return {tape.constant(Tensor::scalar(0.0)), tape.constant(Tensor::scalar(0.0))};
    std::vector<Var> ce_t, ce_v;
    for (std::size_t i = 0; i < batch.features.size(); ++i) {
        Var f = tape.constant_ref(batch.features[i]);
        const std::size_t y = support_index(batch.labels[i]);
        ce_t.push_back(num::cross_entropy(num::softmax_temp(clip_logits(f, text, tau), 1.0), y));
        if (visual_prob) ce_v.push_back(num::cross_entropy(visual_prob(f), y));
    }
    const double inv = 1.0 / static_cast<double>(batch.features.size());
    ReplayLosses out;
    out.ce_t = num::scale(num::sum<double>(ce_t), inv);
    out.ce_v = ce_v.empty() ? tape.constant(Tensor::scalar(0.0)) : num::scale(num::sum<double>(ce_v), inv);
    return out;
}

}  // namespace seca::replay
