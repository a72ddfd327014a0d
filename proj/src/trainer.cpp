#include "seca/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "seca/errors.hpp"
#include "seca/rng.hpp"

namespace seca {

using sevpr::ClassifierKind;
using sgakt::DistillStrategy;

namespace {

bool uses_pool(DistillStrategy d) { return d == DistillStrategy::kSgAkt || d == DistillStrategy::kAvgKd; }

Tensor as_tensor(const std::vector<double>& x) { return Tensor(num::Shape{x.size()}, x); }

Var zero(Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

Var batch_mean(Tape& tape, const std::vector<Var>& terms) {
    if (terms.empty()) return zero(tape);
    return num::scale(num::sum<double>(terms), 1.0 / static_cast<double>(terms.size()));
}

std::size_t position(const std::vector<std::size_t>& sorted, std::size_t k) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), k);
    if (it == sorted.end() || *it != k) fail(ErrorCode::kUnknownClass, "class " + std::to_string(k) + " not in set");
    return static_cast<std::size_t>(it - sorted.begin());
}

}  // namespace

// ---------------------------------------------------------------------------

void Adam::step(const std::string& name, Parameter& p) {
    auto [it, fresh] = moments_.try_emplace(name);
    Moments& mo = it->second;
    if (fresh) {
        mo.m = Tensor(p.value.shape());
        mo.v = Tensor(p.value.shape());
    }
    require(mo.m.shape() == p.value.shape(), ErrorCode::kInvalidInput, "optimizer moments of " + name + " changed shape");
    ++mo.t;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(mo.t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(mo.t));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        mo.m[i] = kBeta1 * mo.m[i] + (1.0 - kBeta1) * g;
        mo.v[i] = kBeta2 * mo.v[i] + (1.0 - kBeta2) * g * g;
        p.value[i] -= lr_ * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + kEps);
    }
    if (!p.value.all_finite()) fail(ErrorCode::kNumericDivergence, "parameter " + name + " became non-finite");
}

std::vector<std::size_t> TrainState::seen_classes() const {
    std::vector<std::size_t> out;
    for (const auto& t : task_classes) out.insert(out.end(), t.begin(), t.end());
    std::sort(out.begin(), out.end());
    return out;
}

std::shared_ptr<const Encoder> make_encoder(const RunConfig& cfg, const data::ClassRegistry& registry) {
    ClassTokenTable tokens(cfg.encoder.d_t, registry.superclass, registry.relatedness,
                           derive_seed(cfg.encoder_seed(), "tokens"));
    EncoderConfig ec = cfg.encoder;
    ec.seed = cfg.encoder_seed();
    return std::make_shared<const Encoder>(ec, std::move(tokens));
}

TrainState init_state(const RunConfig& cfg, const data::ClassRegistry& registry) {
    cfg.validate();
    const std::uint64_t init = cfg.init_seed();
    TrainState st{
        .config = cfg,
        .registry = registry,
        .encoder = make_encoder(cfg, registry),
        .prompts = {},
        .adapter = AdapterStack::init(cfg.encoder, derive_seed(init, "adapter")),
        .previous_adapter = std::nullopt,
        .pool = sgakt::AdapterPool(cfg.train.pool_max),
        .projectors = cfg.train.zero_projectors
                          ? sgakt::Projectors::zeros(cfg.encoder.d_t, cfg.encoder.d_v)
                          : sgakt::Projectors::init(cfg.encoder.d_t, cfg.encoder.d_v, derive_seed(init, "projectors")),
        .affinity = sevpr::AffinityModel::init(cfg.encoder.d_t, cfg.train.gamma),
        .prototypes = {},
        .adapted_centroids = {},
        .linear = {},
        .replay = replay::ReplayStore(cfg.train.replay_full_cov),
        .optimizer = Adam(cfg.train.lr),
        .task_classes = {},
    };
    return st;
}

std::size_t TaskContext::support_index(std::size_t class_id) const { return position(support, class_id); }

// ---------------------------------------------------------------------------

TaskContext begin_task(TrainState& st, const data::TaskData& task) {
    const auto& cfg = st.config;
    const Encoder& enc = *st.encoder;
    require(!task.classes.empty(), ErrorCode::kInvalidInput, "task has no classes");
    const auto seen_before = st.seen_classes();
    for (std::size_t k : task.classes) {
        if (std::binary_search(seen_before.begin(), seen_before.end(), k))
            fail(ErrorCode::kProtocolViolation, "class " + std::to_string(k) + " already appeared in an earlier task");
        if (k >= st.registry.size())
            fail(ErrorCode::kUnknownClass, "class " + std::to_string(k) + " is not in the class registry");
    }
    for (const auto& smp : task.train)
        if (!std::binary_search(task.classes.begin(), task.classes.end(), smp.label))
            fail(ErrorCode::kProtocolViolation, "train label " + std::to_string(smp.label) + " outside the task");

    const std::size_t s = st.task_index() + 1;
    const std::uint64_t init = cfg.init_seed();
    st.prompts.emplace_back(enc.init_prompt(derive_seed(init, "prompt", s)));
    for (std::size_t i = 0; i + 1 < st.prompts.size(); ++i) st.prompts[i].trainable = false;
    st.task_classes.push_back(task.classes);

    std::vector<std::vector<double>> xs;
    std::vector<std::size_t> ys;
    for (const auto& smp : task.train) {
        xs.push_back(smp.x);
        ys.push_back(smp.label);
    }
    sevpr::raw_prototypes(st.prototypes, enc, xs, ys, task.classes);

    if (cfg.train.classifier == ClassifierKind::kCentroidAdapted) {
        std::map<std::size_t, std::pair<Tensor, std::size_t>> acc;
        for (std::size_t k : task.classes) acc[k] = {Tensor({cfg.encoder.d_v}), 0};
        for (const auto& smp : task.train) {
            const Tensor f = enc.visual_forward(smp.x, &st.adapter);
            auto& [sum, n] = acc[smp.label];
            for (std::size_t j = 0; j < f.size(); ++j) sum[j] += f[j];
            ++n;
        }
        for (auto& [k, sn] : acc) {
            for (double& v : sn.first.span()) v /= static_cast<double>(sn.second);
            st.adapted_centroids[k] = sn.first;
        }
    }
    if (cfg.train.classifier == ClassifierKind::kLinear) st.linear.grow(cfg.encoder.d_v, task.classes.size());

    TaskContext ctx;
    ctx.s = s;
    ctx.task = &task;
    ctx.seen = st.seen_classes();
    ctx.support = cfg.train.replay ? ctx.seen : task.classes;
    std::sort(ctx.support.begin(), ctx.support.end());

    if (s > 1) {
        const auto strategy = cfg.train.distill;
        for (const auto& smp : task.train) {
            if (uses_pool(strategy))
                ctx.views.push_back(sgakt::pooled_views(enc, smp.x, st.pool));
            else if (strategy == DistillStrategy::kClipKd)
                ctx.teacher.push_back(enc.visual_forward(smp.x, nullptr));
            else if (strategy == DistillStrategy::kVanilla && st.previous_adapter)
                ctx.teacher.push_back(enc.visual_forward(smp.x, &*st.previous_adapter));
        }
        if (uses_pool(strategy))
            for (std::size_t k : task.classes) {
                auto& sem = ctx.old_semantic[k];
                for (std::size_t i = 0; i + 1 < s; ++i) sem.push_back(enc.text_forward(k, st.prompts[i].value));
            }
    }
    return ctx;
}

LossTerms total_loss(Tape& tape, TrainState& st, const TaskContext& ctx, std::span<const std::size_t> batch,
                     const replay::PseudoBatch* pseudo) {
    require(ctx.s == st.task_index() && ctx.s >= 1, ErrorCode::kProtocolViolation, "total_loss outside its task");
    const auto& cfg = st.config.train;
    const Encoder& enc = *st.encoder;
    const std::size_t s = ctx.s;
    const bool later = s > 1;
    const auto classifier = cfg.classifier;
    const auto strategy = cfg.distill;

    LossTerms out;
    out.beta = cfg.beta.at(s);
    auto bind = [&](const std::string& name, Parameter& p) {
        Var v = tape.param(p);
        if (p.trainable) out.params.emplace_back(name, &p);
        return v;
    };

    Var prompt = bind("prompt." + std::to_string(s), st.prompts[s - 1]);
    BoundAdapter adapter;
    for (std::size_t l = 0; l < st.adapter.size(); ++l) {
        auto& layer = st.adapter.layers()[l];
        Var down = bind("adapter." + std::to_string(l) + ".down", layer.down);
        Var up = bind("adapter." + std::to_string(l) + ".up", layer.up);
        adapter.layers.emplace_back(down, up);
    }

    // text features under the active prompt
    const bool need_seen = classifier == ClassifierKind::kSeVpr;
    std::map<std::size_t, Var> text;
    for (std::size_t k : need_seen ? ctx.seen : ctx.support) text.emplace(k, enc.text_forward(tape, k, prompt));
    for (std::size_t k : ctx.support)
        if (!text.count(k)) text.emplace(k, enc.text_forward(tape, k, prompt));
    std::vector<Var> text_support;
    for (std::size_t k : ctx.support) text_support.push_back(text.at(k));

    // visual-side classifier over the support
    std::vector<Var> protos;
    Var reg = zero(tape);
    if (classifier == ClassifierKind::kSeVpr) {
        Var h = bind("h_proj", st.affinity.h_proj);
        std::vector<Var> z, raw;
        for (std::size_t k : ctx.seen) {
            z.push_back(text.at(k));
            raw.push_back(tape.constant_ref(st.prototypes.raw(k)));
        }
        const auto rows = sevpr::affinity_matrix(z, h, st.affinity.gamma);
        const auto refined = sevpr::refine_prototypes(rows, raw);
        for (std::size_t k : ctx.support) protos.push_back(refined[position(ctx.seen, k)]);
        if (later) {
            const auto& current = st.task_classes.back();
            std::vector<Var> cur_old;
            std::vector<Tensor> snap_old;
            for (std::size_t i = 0; i < ctx.seen.size(); ++i) {
                const std::size_t k = ctx.seen[i];
                if (std::binary_search(current.begin(), current.end(), k)) continue;
                auto it = st.prototypes.refined_snapshot().find(k);
                if (it == st.prototypes.refined_snapshot().end())
                    fail(ErrorCode::kMissingClass, "prototype snapshot lacks old class " + std::to_string(k));
                cur_old.push_back(refined[i]);
                snap_old.push_back(it->second);
            }
            reg = sevpr::loss_reg(tape, cur_old, snap_old);
        }
    } else if (classifier == ClassifierKind::kCentroidClip) {
        for (std::size_t k : ctx.support) protos.push_back(tape.constant_ref(st.prototypes.raw(k)));
    } else if (classifier == ClassifierKind::kCentroidAdapted) {
        for (std::size_t k : ctx.support) protos.push_back(tape.constant_ref(st.adapted_centroids.at(k)));
    }

    // linear head: blocks covering the support, columns mapped to support order
    std::vector<std::pair<Var, Var>> linear_blocks;
    std::vector<std::size_t> linear_perm;  // support position of each concatenated column
    if (classifier == ClassifierKind::kLinear) {
        for (std::size_t b = 0; b < st.linear.blocks.size(); ++b) {
            const auto& cls = st.task_classes[b];
            if (!std::binary_search(ctx.support.begin(), ctx.support.end(), cls.front())) continue;
            auto& blk = st.linear.blocks[b];
            linear_blocks.emplace_back(bind("linear." + std::to_string(b) + ".weight", blk.weight),
                                       bind("linear." + std::to_string(b) + ".bias", blk.bias));
            for (std::size_t k : cls) linear_perm.push_back(position(ctx.support, k));
        }
    }
    std::function<Var(const Var&)> visual;
    if (classifier == ClassifierKind::kLinear) {
        visual = [&](const Var& f) {
            std::vector<Var> parts;
            for (const auto& [w, b] : linear_blocks) parts.push_back(num::add(num::vecmat(f, w), b));
            Var logits = num::concat<double>(parts);
            std::vector<Var> ordered(linear_perm.size());
            for (std::size_t c = 0; c < linear_perm.size(); ++c) ordered[linear_perm[c]] = num::index(logits, c);
            return num::softmax_temp(num::stack<double>(ordered), 1.0);
        };
    } else if (classifier != ClassifierKind::kOnlyText) {
        visual = [&](const Var& f) { return sevpr::visual_prob(f, protos, cfg.tau); };
    }

    // projectors only enter through the relevance scores
    std::optional<Var> w_s, w_v;
    if (later && uses_pool(strategy)) {
        w_s = bind("w_s", st.projectors.w_s);
        w_v = bind("w_v", st.projectors.w_v);
        out.alpha_mean.assign(st.pool.size(), 0.0);
    }

    std::vector<Var> ce_t, agg, distill, ce_v;
    for (std::size_t idx : batch) {
        const auto& smp = ctx.task->train.at(idx);
        const std::size_t y = ctx.support_index(smp.label);
        Var x = tape.constant(as_tensor(smp.x));
        Var f = enc.visual_forward(tape, x, &adapter);
        ce_t.push_back(num::cross_entropy(num::softmax_temp(clip_logits(f, text_support, cfg.tau), 1.0), y));
        if (visual) ce_v.push_back(num::cross_entropy(visual(f), y));
        if (!later || strategy == DistillStrategy::kSeq) continue;

        sgakt::DistillInputs in{.student = f, .text = text_support, .frozen_feature = std::nullopt,
                                .previous_feature = std::nullopt, .aggregate_feature = std::nullopt};
        std::optional<Var> teacher_const;
        if (uses_pool(strategy)) {
            std::vector<Var> views;
            for (const auto& v : ctx.views.at(idx)) views.push_back(tape.constant_ref(v));
            std::vector<Var> sem;
            for (const auto& t : ctx.old_semantic.at(smp.label)) sem.push_back(tape.constant_ref(t));
            sem.push_back(text.at(smp.label));
            Var alpha = sgakt::relevance_scores(sem, views, *w_s, *w_v);
            for (std::size_t p = 0; p < out.alpha_mean.size(); ++p) out.alpha_mean[p] += alpha.value()[p];
            const auto a = strategy == DistillStrategy::kSgAkt ? sgakt::aggregate(views, alpha, cfg.lambda)
                                                               : sgakt::aggregate_uniform(views);
            agg.push_back(sgakt::loss_agg(a.feature, y, text_support, cfg.tau));
            in.aggregate_feature = a.feature;
        } else if (!ctx.teacher.empty()) {
            teacher_const = tape.constant_ref(ctx.teacher.at(idx));
            if (strategy == DistillStrategy::kClipKd)
                in.frozen_feature = teacher_const;
            else
                in.previous_feature = teacher_const;
        }
        distill.push_back(sgakt::distill_variant(strategy, in, cfg.tau_prime, cfg.epsilon));
    }
    for (double& a : out.alpha_mean) a /= static_cast<double>(batch.size());

    out.ce_t = batch_mean(tape, ce_t);
    out.agg = batch_mean(tape, agg);
    out.distill = batch_mean(tape, distill);
    out.ce_v = batch_mean(tape, ce_v);
    out.reg = reg;
    if (pseudo && !pseudo->empty()) {
        auto sup = [&](std::size_t k) { return ctx.support_index(k); };
        const auto r = replay::replay_losses(tape, *pseudo, text_support, sup, visual, cfg.tau);
        out.replay_t = r.ce_t;
        out.replay_v = r.ce_v;
    } else {
        out.replay_t = zero(tape);
        out.replay_v = zero(tape);
    }

    std::vector<Var> terms = {out.ce_t, out.ce_v};
    if (later) {
        terms.push_back(out.agg);
        terms.push_back(num::scale(out.distill, out.beta));
        terms.push_back(out.reg);
    }
    terms.push_back(out.replay_t);
    terms.push_back(out.replay_v);
    out.total = num::sum<double>(terms);
    if (!std::isfinite(out.total.item())) fail(ErrorCode::kNumericDivergence, "training loss is not finite");
    return out;
}

void run_epochs(TrainState& st, const TaskContext& ctx, const TrainHooks* hooks) {
    const auto& cfg = st.config.train;
    const std::uint64_t init = st.config.init_seed();
    const std::size_t n = ctx.task->train.size();
    std::vector<std::size_t> order(n);
    std::size_t step = 0;
    const auto old_classes = st.replay.classes();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(init, "shuffle", ctx.s, epoch));
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
            const std::span<const std::size_t> batch(order.data() + start, std::min(cfg.batch_size, n - start));
            replay::PseudoBatch pseudo;
            if (cfg.replay && !old_classes.empty()) {
                const auto count = static_cast<std::size_t>(std::llround(cfg.replay_ratio * static_cast<double>(batch.size())));
                pseudo = replay::sample_batch(st.replay, old_classes, count, derive_seed(init, "replay", ctx.s, step));
            }
            Tape tape;
            LossTerms terms = total_loss(tape, st, ctx, batch, &pseudo);
            for (auto& [_, p] : terms.params) p->zero_grad();
            tape.backward(terms.total);
            for (auto& [name, p] : terms.params) st.optimizer.step(name, *p);
            if (!terms.alpha_mean.empty()) st.pool.update_utilities(terms.alpha_mean, cfg.mu);
            if (hooks && hooks->on_step)
                hooks->on_step({ctx.s, epoch, step, terms.total.item(), terms.alpha_mean, st.pool.utilities()});
        }
    }
}

void end_task(TrainState& st, const TaskContext& ctx, const TrainHooks* hooks) {
    const auto& cfg = st.config.train;
    const Encoder& enc = *st.encoder;

    if (cfg.classifier == ClassifierKind::kSeVpr) {
        Tape tape;
        Var prompt = tape.constant_ref(st.prompts[ctx.s - 1].value);
        Var h = tape.constant_ref(st.affinity.h_proj.value);
        std::vector<Var> z, raw;
        for (std::size_t k : ctx.seen) {
            z.push_back(enc.text_forward(tape, k, prompt));
            raw.push_back(tape.constant_ref(st.prototypes.raw(k)));
        }
        const auto refined = sevpr::refine_prototypes(sevpr::affinity_matrix(z, h, st.affinity.gamma), raw);
        std::map<std::size_t, Tensor> current;
        for (std::size_t i = 0; i < ctx.seen.size(); ++i) current.emplace(ctx.seen[i], refined[i].value());
        st.prototypes.set_refined(std::move(current));
    }
    st.prototypes.snapshot();

    AdmitInfo info{.task = ctx.s, .utilities_before = st.pool.utilities(), .removed = std::nullopt, .pool_size = 0};
    info.removed = st.pool.admit(st.adapter);
    info.pool_size = st.pool.size();
    if (hooks && hooks->on_admit) hooks->on_admit(info);
    st.previous_adapter = st.adapter.frozen_copy();

    if (cfg.replay) {
        std::map<std::size_t, std::vector<Tensor>> feats;
        for (const auto& smp : ctx.task->train) feats[smp.label].push_back(enc.visual_forward(smp.x, &st.adapter));
        for (const auto& [k, fs] : feats) st.replay.fit(k, fs);
    }
    st.prompts[ctx.s - 1].trainable = false;
}

void train_task(TrainState& st, const data::TaskData& task, const TrainHooks* hooks) {
    const TaskContext ctx = begin_task(st, task);
    run_epochs(st, ctx, hooks);
    end_task(st, ctx, hooks);
}

// ---------------------------------------------------------------------------

Predictor::Predictor(const TrainState& st) : state_(st), classes_(st.seen_classes()) {
    require(!st.prompts.empty(), ErrorCode::kProtocolViolation, "prediction needs at least one trained task");
    const Encoder& enc = *st.encoder;
    for (const auto& p : st.prompts) {
        std::vector<Tensor> t;
        for (std::size_t k : classes_) t.push_back(enc.text_forward(k, p.value));
        text_.push_back(std::move(t));
    }
    switch (st.config.train.classifier) {
        case ClassifierKind::kSeVpr:
            for (std::size_t k : classes_) {
                auto it = st.prototypes.refined_current().find(k);
                require(it != st.prototypes.refined_current().end(), ErrorCode::kMissingClass,
                        "no refined prototype for class " + std::to_string(k));
                prototypes_.push_back(it->second);
            }
            break;
        case ClassifierKind::kCentroidClip:
            for (std::size_t k : classes_) prototypes_.push_back(st.prototypes.raw(k));
            break;
        case ClassifierKind::kCentroidAdapted:
            for (std::size_t k : classes_) prototypes_.push_back(st.adapted_centroids.at(k));
            break;
        case ClassifierKind::kLinear:
            for (std::size_t b = 0; b < st.linear.blocks.size(); ++b)
                for (std::size_t k : st.task_classes.at(b)) linear_order_.push_back(position(classes_, k));
            break;
        case ClassifierKind::kOnlyText:
            break;
    }
}

std::vector<double> Predictor::visual_scores(std::span<const double> f) const {
    const double tau_prime = state_.config.train.tau_prime;
    switch (state_.config.train.classifier) {
        case ClassifierKind::kOnlyText:
            return std::vector<double>(classes_.size(), 0.0);
        case ClassifierKind::kLinear: {
            const auto logits = state_.linear.logits(f);
            std::vector<double> ordered(classes_.size());
            for (std::size_t c = 0; c < logits.size(); ++c) ordered[linear_order_[c]] = logits[c];
            return num::softmax_values<double>(ordered, 1.0);
        }
        default:
            return sevpr::visual_prob(f, prototypes_, tau_prime);
    }
}

std::vector<double> Predictor::text_scores(std::span<const double> f) const {
    const double tau_prime = state_.config.train.tau_prime;
    std::vector<double> out(classes_.size(), 0.0);
    for (const auto& t : text_) {
        const auto p = num::softmax_values<double>(clip_logits(f, t, tau_prime), 1.0);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += p[j];
    }
    const double inv = 1.0 / static_cast<double>(text_.size());
    for (double& v : out) v *= inv;
    return out;
}

std::vector<double> Predictor::scores(std::span<const double> x) const {
    const Tensor f = state_.encoder->visual_forward(x, &state_.adapter);
    auto out = visual_scores(f.span());
    const auto t = text_scores(f.span());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += t[j];
    return out;
}

std::size_t Predictor::predict(std::span<const double> x) const {
    const auto sc = scores(x);
    std::size_t best = 0;
    for (std::size_t j = 1; j < sc.size(); ++j)
        if (sc[j] > sc[best]) best = j;
    return classes_[best];
}

double accuracy_percent(std::size_t correct, std::size_t total) {
    require(total > 0, ErrorCode::kInvalidInput, "accuracy over an empty test split");
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

Metrics metrics_from(std::vector<double> per_task) {
    require(!per_task.empty(), ErrorCode::kInvalidInput, "no task accuracies");
    Metrics m;
    m.per_task = std::move(per_task);
    m.last = m.per_task.back();
    m.avg = std::accumulate(m.per_task.begin(), m.per_task.end(), 0.0) / static_cast<double>(m.per_task.size());
    return m;
}

Metrics evaluate_protocol(std::span<const data::TaskData> tasks,
                          const std::function<std::size_t(std::size_t, const data::Sample&)>& predict) {
    std::vector<double> acc;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        require(!tasks[t].test.empty(), ErrorCode::kInvalidInput, "task " + std::to_string(t) + " has an empty test split");
        std::size_t correct = 0, total = 0;
        for (std::size_t i = 0; i <= t; ++i)
            for (const auto& smp : tasks[i].test) {
                correct += predict(t, smp) == smp.label;
                ++total;
            }
        acc.push_back(accuracy_percent(correct, total));
    }
    return metrics_from(std::move(acc));
}

double accuracy_on(const Predictor& predictor, std::span<const data::TaskData> tasks) {
    std::size_t correct = 0, total = 0;
    for (const auto& task : tasks) {
        require(!task.test.empty(), ErrorCode::kInvalidInput, "empty test split");
        for (const auto& smp : task.test) {
            correct += predictor.predict(smp.x) == smp.label;
            ++total;
        }
    }
    return accuracy_percent(correct, total);
}

data::TaskStream build_stream(const RunConfig& cfg) {
    if (cfg.data.source == DataConfig::Source::kSynthetic) {
        data::SyntheticSpec spec = cfg.data.synthetic;
        spec.seed = cfg.data_seed();
        return data::gen_synthetic(spec);
    }
    auto stream = data::load_feature_bank(cfg.data.bank_path, cfg.data.manifest_path,
                                          {cfg.data.bank_tasks, cfg.data.train_ratio, cfg.data_seed()});
    require(stream.dim == cfg.encoder.d_v, ErrorCode::kInvalidConfig,
            "feature bank dimension " + std::to_string(stream.dim) + " differs from encoder.d_v");
    return stream;
}

RunResult run_stream(const RunConfig& cfg, const data::TaskStream& stream, const TrainHooks* hooks) {
    RunResult res{{}, init_state(cfg, stream.registry)};
    std::vector<double> acc;
    for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
        train_task(res.state, stream.tasks[t], hooks);
        const Predictor predictor(res.state);
        acc.push_back(accuracy_on(predictor, std::span(stream.tasks).first(t + 1)));
    }
    res.metrics = metrics_from(std::move(acc));
    return res;
}

}  // namespace seca
