#pragma once

// Task-by-task training of the full model, hybrid inference, and the
// Last/Avg evaluation protocol.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seca/config.hpp"
#include "seca/datastream.hpp"
#include "seca/encoder.hpp"
#include "seca/replay.hpp"
#include "seca/sevpr.hpp"
#include "seca/sgakt.hpp"

namespace seca {

class Adam {
   public:
    struct Moments {
        Tensor m, v;
        std::uint64_t t = 0;
    };

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    explicit Adam(double lr = 1e-3) : lr_(lr) {}

    /// One update of `p` from `p.grad`. Moments are keyed by name and created
    /// zeroed on first use.
    void step(const std::string& name, Parameter& p);

    double lr() const { return lr_; }
    std::map<std::string, Moments>& moments() { return moments_; }
    const std::map<std::string, Moments>& moments() const { return moments_; }

   private:
    double lr_;
    std::map<std::string, Moments> moments_;
};

struct TrainState {
    RunConfig config;
    data::ClassRegistry registry;
    std::shared_ptr<const Encoder> encoder;

    std::vector<Parameter> prompts;  // P^1..P^s; all but the last are frozen
    AdapterStack adapter;
    std::optional<AdapterStack> previous_adapter;  // end-of-task snapshot
    sgakt::AdapterPool pool;
    sgakt::Projectors projectors;
    sevpr::AffinityModel affinity;
    sevpr::PrototypeBank prototypes;
    std::map<std::size_t, Tensor> adapted_centroids;
    sevpr::LinearHead linear;
    replay::ReplayStore replay;
    Adam optimizer;
    std::vector<std::vector<std::size_t>> task_classes;  // one entry per started task

    /// Index s of the current (or last) task, 1-based; 0 before any task.
    std::size_t task_index() const { return task_classes.size(); }
    /// All classes of started tasks, ascending.
    std::vector<std::size_t> seen_classes() const;
};

std::shared_ptr<const Encoder> make_encoder(const RunConfig& cfg, const data::ClassRegistry& registry);

/// Fresh state for a stream whose classes are listed in `registry`.
TrainState init_state(const RunConfig& cfg, const data::ClassRegistry& registry);

/// Per-task data prepared by `begin_task` and consumed by the loss.
struct TaskContext {
    std::size_t s = 0;
    const data::TaskData* task = nullptr;
    std::vector<std::size_t> support;  // classes of the training softmax, ascending
    std::vector<std::size_t> seen;     // all classes seen so far, ascending
    std::vector<std::vector<Tensor>> views;                   // pooled views per train sample
    std::vector<Tensor> teacher;                              // clip_kd / vanilla teacher per train sample
    std::map<std::size_t, std::vector<Tensor>> old_semantic;  // S_y under P^1..P^{s-1}

    std::size_t support_index(std::size_t class_id) const;
};

struct LossTerms {
    Var total;
    Var ce_t, agg, distill, ce_v, reg, replay_t, replay_v;
    double beta = 0.0;
    std::vector<double> alpha_mean;  // batch mean of the raw relevance scores; empty when unused
    std::vector<std::pair<std::string, Parameter*>> params;  // trainable parameters bound on the tape
};

/// The training objective on one batch of train-sample indices (and an
/// optional pseudo-feature batch).
LossTerms total_loss(Tape& tape, TrainState& state, const TaskContext& ctx, std::span<const std::size_t> batch,
                     const replay::PseudoBatch* pseudo = nullptr);

struct StepInfo {
    std::size_t task = 0;  // 1-based
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss = 0.0;
    std::vector<double> alpha_mean;
    std::vector<double> utilities;  // after the update
};

struct AdmitInfo {
    std::size_t task = 0;
    std::vector<double> utilities_before;
    std::optional<std::size_t> removed;
    std::size_t pool_size = 0;  // after admission
};

struct TrainHooks {
    std::function<void(const StepInfo&)> on_step;
    std::function<void(const AdmitInfo&)> on_admit;
};

/// Task start: label check, new prompt, raw prototypes, per-task caches.
TaskContext begin_task(TrainState& state, const data::TaskData& task);
/// The epoch/batch loop.
void run_epochs(TrainState& state, const TaskContext& ctx, const TrainHooks* hooks = nullptr);
/// Task end: prototype snapshot, pool admission, replay fitting, prompt freeze.
void end_task(TrainState& state, const TaskContext& ctx, const TrainHooks* hooks = nullptr);

void train_task(TrainState& state, const data::TaskData& task, const TrainHooks* hooks = nullptr);

/// Hybrid classifier over every seen class, built from a trained state.
class Predictor {
   public:
    explicit Predictor(const TrainState& state);

    const std::vector<std::size_t>& classes() const { return classes_; }
    /// Visual probability plus the prompt-averaged text probability, per class.
    std::vector<double> scores(std::span<const double> x) const;
    std::vector<double> visual_scores(std::span<const double> f) const;
    std::vector<double> text_scores(std::span<const double> f) const;
    /// Arg-max class id; ties go to the lowest id.
    std::size_t predict(std::span<const double> x) const;

   private:
    const TrainState& state_;
    std::vector<std::size_t> classes_;
    std::vector<std::vector<Tensor>> text_;  // per prompt, per class
    std::vector<Tensor> prototypes_;         // visual branch (prototype classifiers)
    std::vector<std::size_t> linear_order_;  // linear column -> position in classes_
};

struct Metrics {
    std::vector<double> per_task;  // accuracy (%) after each task
    double last = 0.0;
    double avg = 0.0;
};

double accuracy_percent(std::size_t correct, std::size_t total);
Metrics metrics_from(std::vector<double> per_task);

/// Accuracy over the union of test splits 0..t, with `predict(t, sample)`
/// standing for the model after task t.
Metrics evaluate_protocol(std::span<const data::TaskData> tasks,
                          const std::function<std::size_t(std::size_t, const data::Sample&)>& predict);

double accuracy_on(const Predictor& predictor, std::span<const data::TaskData> tasks);

struct RunResult {
    Metrics metrics;
    TrainState state;
};

data::TaskStream build_stream(const RunConfig& cfg);
RunResult run_stream(const RunConfig& cfg, const data::TaskStream& stream, const TrainHooks* hooks = nullptr);

}  // namespace seca
