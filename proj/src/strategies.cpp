#include "clb/strategies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "clb/errors.hpp"
#include "clb/hash.hpp"

namespace clb {

const char* strategy_name(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::naive: return "naive";
        case StrategyKind::rehearsal: return "rehearsal";
        case StrategyKind::replay_review: return "replay_review";
        case StrategyKind::frozen_online: return "frozen_online";
        case StrategyKind::multihead_quota: return "multihead_quota";
        case StrategyKind::er: return "er";
        case StrategyKind::er_drl: return "er_drl";
    }
    return "?";
}

StrategyKind strategy_from_name(std::string_view name) {
    if (name == "naive") return StrategyKind::naive;
    if (name == "rehearsal") return StrategyKind::rehearsal;
    if (name == "replay_review") return StrategyKind::replay_review;
    if (name == "frozen_online") return StrategyKind::frozen_online;
    if (name == "multihead_quota") return StrategyKind::multihead_quota;
    if (name == "er") return StrategyKind::er;
    if (name == "er_drl") return StrategyKind::er_drl;
    throw ConfigError("unknown strategy name: " + std::string(name));
}

void StrategyConfig::validate(StrategyKind kind) const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (minibatch < 1) throw ConfigError("minibatch must be at least 1");
    const double rates[] = {lr, lr_replay, lr_review};
    for (double r : rates)
        if (!std::isfinite(r) || r <= 0.0)
            throw ConfigError("learning rates must be positive and finite");
    if (!std::isfinite(drl_lambda) || drl_lambda < 0.0)
        throw ConfigError("representation loss weight must be non-negative");
    if (kind == StrategyKind::replay_review && lr_review > lr_replay)
        throw ConfigError("review rate must not exceed the replay rate");
    if (kind == StrategyKind::frozen_online && epochs != 1)
        throw ConfigError("online strategy takes a single pass; epochs must be 1");
}

namespace {

using Clock = std::chrono::steady_clock;

void check_limits(const RunLimits& limits) {
    if (std::isnan(limits.max_wall_seconds) || limits.max_wall_seconds <= 0.0)
        throw ConfigError("wall-clock budget must be positive");
}

// Counts optimizer steps against the step and wall budgets. A blocked
// step marks the budget as hit; callers then unwind without training
// further.
struct StepBudget {
    std::uint64_t max_steps;
    double max_wall_seconds;
    Clock::time_point start;
    std::uint64_t steps = 0;
    bool hit = false;

    bool allow() {
        if (hit) return false;
        if (steps >= max_steps) {
            hit = true;
            return false;
        }
        const double elapsed =
            std::chrono::duration<double>(Clock::now() - start).count();
        if (elapsed > max_wall_seconds) {
            hit = true;
            return false;
        }
        ++steps;
        return true;
    }
};

MemoryItem to_item(const Example& ex) {
    MemoryItem item;
    item.features.assign(ex.features.begin(), ex.features.end());
    item.label = ex.label;
    item.session = ex.session;
    item.task = ex.task;
    return item;
}

std::vector<MemoryItem> to_items(const Batch& batch) {
    std::vector<MemoryItem> items;
    items.reserve(batch.examples.size());
    for (const Example& ex : batch.examples) items.push_back(to_item(ex));
    return items;
}

std::vector<MemoryItem> to_items(std::span<const Example> examples) {
    std::vector<MemoryItem> items;
    items.reserve(examples.size());
    for (const Example& ex : examples) items.push_back(to_item(ex));
    return items;
}

// Gathers data[order[pos .. pos+len)] into a dense batch.
std::pair<Matrix, std::vector<int>> gather(const std::vector<MemoryItem>& data,
                                           std::span<const std::size_t> order,
                                           std::size_t pos, std::size_t len) {
    const int dim = static_cast<int>(data[order[pos]].features.size());
    Matrix x(static_cast<int>(len), dim);
    std::vector<int> y(len);
    for (std::size_t r = 0; r < len; ++r) {
        const MemoryItem& item = data[order[pos + r]];
        if (static_cast<int>(item.features.size()) != dim)
            throw ConfigError("training items have mixed feature widths");
        for (int c = 0; c < dim; ++c)
            x.at(static_cast<int>(r), c) =
                item.features[static_cast<std::size_t>(c)];
        y[r] = item.label;
    }
    return {std::move(x), std::move(y)};
}

std::pair<Matrix, std::vector<int>> gather_all(
    const std::vector<MemoryItem>& data, std::size_t pos, std::size_t len) {
    static thread_local std::vector<std::size_t> natural;
    natural.resize(data.size());
    std::iota(natural.begin(), natural.end(), std::size_t{0});
    return gather(data, natural, pos, len);
}

// One shuffled pass of minibatch SGD over `data`. Returns true if the
// budget blocked a step (the pass is then incomplete).
bool sgd_epoch(Mlp& net, const std::vector<MemoryItem>& data, double lr,
               const DrlConfig& drl, int minibatch, Rng& shuffle_rng,
               StepBudget& budget, ResourceMeter& meter, const char* where) {
    if (data.empty()) return false;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    for (std::size_t pos = 0; pos < order.size();
         pos += static_cast<std::size_t>(minibatch)) {
        if (!budget.allow()) return true;
        const std::size_t len =
            std::min(static_cast<std::size_t>(minibatch), order.size() - pos);
        auto [x, y] = gather(data, order, pos, len);
        const ForwardTrace trace = net.forward(x);
        meter.note_activation_bytes(trace.activation_bytes());
        const LossGrad lg = combined_loss_grad(net, trace, y, drl);
        if (!std::isfinite(lg.loss))
            throw NumericError(std::string("non-finite loss in ") + where);
        sgd_step(net, lg.grad, lr);
    }
    return false;
}

// Like sgd_epoch, but every step also trains on a fresh draw from the
// reservoir (incoming items first, drawn items after).
bool replay_sgd_epoch(Mlp& net, const std::vector<MemoryItem>& data,
                      const ReservoirMemory& memory, std::size_t replay_sz,
                      double lr, const DrlConfig& drl, int minibatch,
                      Rng& shuffle_rng, Rng& replay_rng, StepBudget& budget,
                      ResourceMeter& meter, std::uint64_t& undersampled,
                      const char* where) {
    if (data.empty()) return false;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    for (std::size_t pos = 0; pos < order.size();
         pos += static_cast<std::size_t>(minibatch)) {
        if (!budget.allow()) return true;
        const std::size_t len =
            std::min(static_cast<std::size_t>(minibatch), order.size() - pos);
        std::vector<MemoryItem> step_items;
        step_items.reserve(len + replay_sz);
        for (std::size_t r = 0; r < len; ++r)
            step_items.push_back(data[order[pos + r]]);
        if (replay_sz > 0) {
            std::vector<MemoryItem> drawn = memory.sample(replay_sz, replay_rng);
            if (drawn.size() < replay_sz) ++undersampled;
            for (MemoryItem& item : drawn)
                step_items.push_back(std::move(item));
        }
        auto [x, y] = gather_all(step_items, 0, step_items.size());
        const ForwardTrace trace = net.forward(x);
        meter.note_activation_bytes(trace.activation_bytes());
        const LossGrad lg = combined_loss_grad(net, trace, y, drl);
        if (!std::isfinite(lg.loss))
            throw NumericError(std::string("non-finite loss in ") + where);
        sgd_step(net, lg.grad, lr);
    }
    return false;
}

// Exact gradient of the mean cross-entropy over all of `data`, computed
// in natural-order chunks so activation peaks stay at minibatch scale.
std::vector<double> full_xent_grad(const Mlp& net,
                                   const std::vector<MemoryItem>& data,
                                   int chunk, ResourceMeter& meter) {
    std::vector<double> acc(net.param_count(), 0.0);
    const double n = static_cast<double>(data.size());
    for (std::size_t pos = 0; pos < data.size();
         pos += static_cast<std::size_t>(chunk)) {
        const std::size_t len =
            std::min(static_cast<std::size_t>(chunk), data.size() - pos);
        auto [x, y] = gather_all(data, pos, len);
        const ForwardTrace trace = net.forward(x);
        meter.note_activation_bytes(trace.activation_bytes());
        const LossGrad lg = xent_loss_grad(net, trace, y);
        const double w = static_cast<double>(len) / n;
        for (std::size_t i = 0; i < acc.size(); ++i)
            acc[i] += w * lg.grad[i];
    }
    return acc;
}

// Running label frequencies with add-one smoothing, so priors stay
// strictly positive even for classes not yet seen.
struct PriorTracker {
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;

    explicit PriorTracker(int n_classes)
        : counts(static_cast<std::size_t>(n_classes), 0) {}

    void consume(const std::vector<MemoryItem>& items) {
        for (const MemoryItem& item : items) {
            ++counts[static_cast<std::size_t>(item.label)];
            ++total;
        }
    }

    std::vector<double> smoothed() const {
        std::vector<double> p(counts.size());
        const double denom =
            static_cast<double>(total) + static_cast<double>(counts.size());
        for (std::size_t i = 0; i < p.size(); ++i)
            p[i] = (static_cast<double>(counts[i]) + 1.0) / denom;
        return p;
    }
};

EvalResult evaluate_items(const Mlp& net, std::span<const MemoryItem> items,
                          const std::vector<double>* priors) {
    if (items.empty()) throw ConfigError("evaluation set is empty");
    if (priors && static_cast<int>(priors->size()) != net.output_dim())
        throw ConfigError("prior vector width does not match class count");

    const int n_classes = net.output_dim();
    std::vector<std::uint64_t> class_hits(static_cast<std::size_t>(n_classes));
    std::vector<std::uint64_t> class_seen(static_cast<std::size_t>(n_classes));
    std::vector<std::uint64_t> task_hits;
    std::vector<std::uint64_t> task_seen;
    std::uint64_t hits = 0;

    constexpr std::size_t chunk = 256;
    const int dim = net.input_dim();
    for (std::size_t pos = 0; pos < items.size(); pos += chunk) {
        const std::size_t len = std::min(chunk, items.size() - pos);
        Matrix x(static_cast<int>(len), dim);
        for (std::size_t r = 0; r < len; ++r) {
            const MemoryItem& item = items[pos + r];
            if (static_cast<int>(item.features.size()) != dim)
                throw ConfigError("evaluation items have wrong feature width");
            for (int c = 0; c < dim; ++c)
                x.at(static_cast<int>(r), c) =
                    item.features[static_cast<std::size_t>(c)];
        }
        const ForwardTrace trace = net.forward(x);
        const Matrix& logits = trace.logits();
        for (std::size_t r = 0; r < len; ++r) {
            const MemoryItem& item = items[pos + r];
            std::vector<double> probs = softmax_row(std::span<const double>(
                logits.a.data() + r * static_cast<std::size_t>(logits.cols),
                static_cast<std::size_t>(logits.cols)));
            int pred;
            if (priors) {
                const std::vector<double> scores =
                    prior_corrected_scores(probs, *priors);
                pred = argmax_lowest(scores);
            } else {
                pred = argmax_lowest(probs);
            }
            const int label = item.label;
            if (label < 0 || label >= n_classes)
                throw ConfigError("evaluation label out of range");
            const bool hit = pred == label;
            hits += hit;
            ++class_seen[static_cast<std::size_t>(label)];
            class_hits[static_cast<std::size_t>(label)] += hit;
            if (item.task >= 0) {
                const std::size_t t = static_cast<std::size_t>(item.task);
                if (task_seen.size() <= t) {
                    task_seen.resize(t + 1, 0);
                    task_hits.resize(t + 1, 0);
                }
                ++task_seen[t];
                task_hits[t] += hit;
            }
        }
    }

    EvalResult out;
    out.accuracy = static_cast<double>(hits) / static_cast<double>(items.size());
    out.per_class.resize(static_cast<std::size_t>(n_classes));
    for (std::size_t c = 0; c < out.per_class.size(); ++c)
        out.per_class[c] = class_seen[c] == 0
                               ? 0.0
                               : static_cast<double>(class_hits[c]) /
                                     static_cast<double>(class_seen[c]);
    out.per_task.resize(task_seen.size());
    for (std::size_t t = 0; t < task_seen.size(); ++t)
        out.per_task[t] = task_seen[t] == 0
                              ? 0.0
                              : static_cast<double>(task_hits[t]) /
                                    static_cast<double>(task_seen[t]);
    return out;
}

// Everything the single-head runners share: the net, the four RNG
// streams, the meter, the log, and the validation split.
struct SingleHeadState {
    const Stream& stream;
    const StrategyConfig& cfg;
    TrainLog log;
    ResourceMeter meter;
    StepBudget budget;
    Rng init_rng;
    Rng shuffle_rng;
    Rng memory_rng;
    Rng replay_rng;
    Mlp net;
    PriorTracker priors;
    std::vector<MemoryItem> val_items;
    std::vector<MemoryItem> test_items;
    std::vector<double> prior_buf;

    SingleHeadState(const Stream& stream_in, const ModelConfig& model,
                    const StrategyConfig& cfg_in, const RunLimits& limits,
                    StrategyKind kind)
        : stream(stream_in),
          cfg(cfg_in),
          budget{limits.max_steps, limits.max_wall_seconds, Clock::now()},
          init_rng(derive_seed(cfg_in.seed, rng_stream::model_init)),
          shuffle_rng(derive_seed(cfg_in.seed, rng_stream::shuffle)),
          memory_rng(derive_seed(cfg_in.seed, rng_stream::memory)),
          replay_rng(derive_seed(cfg_in.seed, rng_stream::replay)),
          priors(stream_in.n_classes()) {
        cfg.validate(kind);
        check_limits(limits);
        if (stream.batches().empty()) throw ConfigError("stream has no batches");
        log.strategy = strategy_name(kind);
        log.protocol = protocol_name(stream.protocol());
        log.seed = cfg.seed;
        log.total_batches = static_cast<int>(stream.batches().size());
        log.stream_hash_before = hex_u64(stream.content_hash());
        const EvalSplit split = split_test_pool(stream.test_set());
        val_items = to_items(split.validation);
        test_items = to_items(split.final_test);
        net = Mlp(stream.feature_dim(), model.hidden, stream.n_classes(),
                  init_rng);
        meter.set_param_bytes(net.param_bytes());
    }

    const std::vector<double>* prior_ptr() {
        if (!cfg.prior_correction) return nullptr;
        prior_buf = priors.smoothed();
        return &prior_buf;
    }

    void maybe_log_alignment(int batch_idx,
                             const std::vector<MemoryItem>& batch_items,
                             const std::vector<MemoryItem>& memory_items) {
        if (memory_items.empty()) return;
        const std::vector<double> g_cur =
            full_xent_grad(net, batch_items, cfg.minibatch, meter);
        const std::vector<double> g_mem =
            full_xent_grad(net, memory_items, cfg.minibatch, meter);
        const Alignment a = grad_alignment(g_cur, g_mem);
        log.alignment.push_back({batch_idx, a.inner, a.cosine});
    }

    void after_batch(const std::vector<MemoryItem>& batch_items,
                     std::size_t memory_count, std::size_t memory_bytes) {
        priors.consume(batch_items);
        log.memory_items.push_back(memory_count);
        log.memory_bytes.push_back(memory_bytes);
        const EvalResult r = evaluate_items(net, val_items, prior_ptr());
        log.val_acc.push_back(r.accuracy);
        if (!r.per_task.empty()) log.val_task_acc.push_back(r.per_task);
        ++log.processed_batches;
    }

    TrainLog finish() {
        const EvalResult r = evaluate_items(net, test_items, prior_ptr());
        log.final_test_acc = r.accuracy;
        log.final_per_class_acc = r.per_class;
        log.final_per_task_acc = r.per_task;
        log.over_budget = budget.hit;
        log.optimizer_steps = budget.steps;
        log.snapshots = meter.snapshots();
        log.stream_hash_after = hex_u64(stream.content_hash());
        log.wall_seconds =
            std::chrono::duration<double>(Clock::now() - budget.start).count();
        return std::move(log);
    }
};

}  // namespace

EvalSplit split_test_pool(std::span<const Example> pool) {
    if (pool.empty()) throw ConfigError("held-out pool is empty");
    EvalSplit split;
    std::vector<int> seen;
    for (const Example& ex : pool) {
        if (ex.label < 0) throw ConfigError("negative label in held-out pool");
        if (seen.size() <= static_cast<std::size_t>(ex.label))
            seen.resize(static_cast<std::size_t>(ex.label) + 1, 0);
        const int r = seen[static_cast<std::size_t>(ex.label)]++;
        if (r % 5 == 0)
            split.validation.push_back(ex);
        else
            split.final_test.push_back(ex);
    }
    return split;
}

EvalResult evaluate(const Mlp& net, std::span<const Example> test_set,
                    const std::vector<double>* priors) {
    const std::vector<MemoryItem> items = to_items(test_set);
    return evaluate_items(net, items, priors);
}

TrainLog run_naive(const Stream& stream, const ModelConfig& model,
                   const StrategyConfig& cfg, const RunLimits& limits) {
    SingleHeadState st(stream, model, cfg, limits, StrategyKind::naive);
    for (const Batch& batch : stream.batches()) {
        const std::vector<MemoryItem> items = to_items(batch);
        bool blocked = false;
        for (int e = 0; e < cfg.epochs && !blocked; ++e) {
            blocked = sgd_epoch(st.net, items, cfg.lr, DrlConfig{},
                                cfg.minibatch, st.shuffle_rng, st.budget,
                                st.meter, "naive");
            if (!blocked) st.meter.snapshot(0, 0);
        }
        if (blocked) break;
        st.after_batch(items, 0, 0);
    }
    return st.finish();
}

TrainLog run_rehearsal_baseline(const Stream& stream, const ModelConfig& model,
                                const StrategyConfig& cfg,
                                const RunLimits& limits) {
    SingleHeadState st(stream, model, cfg, limits, StrategyKind::rehearsal);
    GrowingMemory memory(cfg.growing_quota);
    for (std::size_t b = 0; b < stream.batches().size(); ++b) {
        const std::vector<MemoryItem> items = to_items(stream.batches()[b]);
        st.maybe_log_alignment(static_cast<int>(b), items, memory.items());

        std::vector<MemoryItem> train = items;
        train.insert(train.end(), memory.items().begin(), memory.items().end());
        bool blocked = false;
        for (int e = 0; e < cfg.epochs && !blocked; ++e) {
            blocked = sgd_epoch(st.net, train, cfg.lr, DrlConfig{},
                                cfg.minibatch, st.shuffle_rng, st.budget,
                                st.meter, "rehearsal");
            if (!blocked) st.meter.snapshot(memory.size_bytes(), 0);
        }
        if (blocked) break;
        memory.update(items, st.memory_rng);
        st.after_batch(items, memory.items().size(), memory.size_bytes());
    }
    return st.finish();
}

TrainLog run_replay_review(const Stream& stream, const ModelConfig& model,
                           const StrategyConfig& cfg, const RunLimits& limits) {
    SingleHeadState st(stream, model, cfg, limits, StrategyKind::replay_review);
    ReservoirMemory memory(cfg.mem_sz);
    // With both draws disabled the memory is never touched, which keeps
    // the run identical to plain SGD at the replay rate.
    const bool uses_memory = cfg.replay_sz > 0 || cfg.review_sz > 0;

    for (std::size_t b = 0; b < stream.batches().size(); ++b) {
        const std::vector<MemoryItem> items = to_items(stream.batches()[b]);
        if (uses_memory)
            st.maybe_log_alignment(static_cast<int>(b), items, memory.items());

        bool blocked = false;
        for (int e = 0; e < cfg.epochs && !blocked; ++e) {
            std::vector<MemoryItem> train = items;
            if (b > 0 && cfg.replay_sz > 0) {
                std::vector<MemoryItem> drawn =
                    memory.sample(cfg.replay_sz, st.replay_rng);
                if (drawn.size() < cfg.replay_sz) ++st.log.replay_undersampled;
                for (MemoryItem& item : drawn)
                    train.push_back(std::move(item));
            }
            blocked = sgd_epoch(st.net, train, cfg.lr_replay, DrlConfig{},
                                cfg.minibatch, st.shuffle_rng, st.budget,
                                st.meter, "replay_review");
            if (!blocked) st.meter.snapshot(memory.size_bytes(), 0);
        }
        if (blocked) break;
        if (uses_memory)
            for (const MemoryItem& item : items)
                memory.update(item, st.memory_rng);
        st.after_batch(items, memory.items().size(), memory.size_bytes());
    }

    if (!st.budget.hit && cfg.review_sz > 0 && !memory.items().empty()) {
        std::vector<MemoryItem> drawn =
            memory.sample(cfg.review_sz, st.replay_rng);
        st.log.review_clamped = drawn.size() < cfg.review_sz;
        const bool blocked =
            sgd_epoch(st.net, drawn, cfg.lr_review, DrlConfig{}, cfg.minibatch,
                      st.shuffle_rng, st.budget, st.meter, "review pass");
        if (!blocked) st.meter.snapshot(memory.size_bytes(), 0);
    }
    return st.finish();
}

namespace {

TrainLog run_step_replay(const Stream& stream, const ModelConfig& model,
                         const StrategyConfig& cfg, const RunLimits& limits,
                         StrategyKind kind, double lambda) {
    SingleHeadState st(stream, model, cfg, limits, kind);
    ReservoirMemory memory(cfg.mem_sz);
    const DrlConfig drl{lambda, cfg.drl_include_logits};

    for (std::size_t b = 0; b < stream.batches().size(); ++b) {
        const std::vector<MemoryItem> items = to_items(stream.batches()[b]);
        st.maybe_log_alignment(static_cast<int>(b), items, memory.items());

        bool blocked = false;
        for (int e = 0; e < cfg.epochs && !blocked; ++e) {
            blocked = replay_sgd_epoch(
                st.net, items, memory, cfg.replay_sz, cfg.lr, drl,
                cfg.minibatch, st.shuffle_rng, st.replay_rng, st.budget,
                st.meter, st.log.replay_undersampled, strategy_name(kind));
            if (!blocked) st.meter.snapshot(memory.size_bytes(), 0);
        }
        if (blocked) break;
        for (const MemoryItem& item : items) memory.update(item, st.memory_rng);
        st.after_batch(items, memory.items().size(), memory.size_bytes());
    }
    return st.finish();
}

}  // namespace

TrainLog run_er(const Stream& stream, const ModelConfig& model,
                const StrategyConfig& cfg, const RunLimits& limits) {
    return run_step_replay(stream, model, cfg, limits, StrategyKind::er, 0.0);
}

TrainLog run_er_drl(const Stream& stream, const ModelConfig& model,
                    const StrategyConfig& cfg, const RunLimits& limits) {
    return run_step_replay(stream, model, cfg, limits, StrategyKind::er_drl,
                           cfg.drl_lambda);
}

TrainLog run_frozen_feature_online(const Stream& stream,
                                   const ModelConfig& model,
                                   const StrategyConfig& cfg,
                                   const RunLimits& limits) {
    cfg.validate(StrategyKind::frozen_online);
    check_limits(limits);
    if (stream.batches().empty()) throw ConfigError("stream has no batches");

    TrainLog log;
    log.strategy = strategy_name(StrategyKind::frozen_online);
    log.protocol = protocol_name(stream.protocol());
    log.seed = cfg.seed;
    log.total_batches = static_cast<int>(stream.batches().size());
    log.stream_hash_before = hex_u64(stream.content_hash());

    StepBudget budget{limits.max_steps, limits.max_wall_seconds, Clock::now()};
    Rng init_rng(derive_seed(cfg.seed, rng_stream::model_init));
    Rng shuffle_rng(derive_seed(cfg.seed, rng_stream::shuffle));
    Rng memory_rng(derive_seed(cfg.seed, rng_stream::memory));
    Rng replay_rng(derive_seed(cfg.seed, rng_stream::replay));

    // Fixed feature map: a random projection drawn once, or the identity.
    // The projection consumes the init stream before the classifier.
    const int in_dim = stream.feature_dim();
    const int repr_dim =
        model.frozen_projection_dim > 0 ? model.frozen_projection_dim : in_dim;
    std::vector<double> projection;
    if (model.frozen_projection_dim > 0) {
        projection.resize(static_cast<std::size_t>(repr_dim) *
                          static_cast<std::size_t>(in_dim));
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
        for (double& v : projection) v = init_rng.uniform(-bound, bound);
    }
    auto project = [&](const Example& ex) {
        MemoryItem item;
        item.label = ex.label;
        item.session = ex.session;
        item.task = ex.task;
        if (projection.empty()) {
            item.features.assign(ex.features.begin(), ex.features.end());
            return item;
        }
        item.features.resize(static_cast<std::size_t>(repr_dim));
        for (int j = 0; j < repr_dim; ++j) {
            double z = 0.0;
            const double* row = projection.data() +
                                static_cast<std::size_t>(j) *
                                    static_cast<std::size_t>(in_dim);
            for (int i = 0; i < in_dim; ++i)
                z += row[i] * static_cast<double>(
                                  ex.features[static_cast<std::size_t>(i)]);
            item.features[static_cast<std::size_t>(j)] = z;
        }
        return item;
    };

    Mlp net(repr_dim, {}, stream.n_classes(), init_rng);
    ResourceMeter meter;
    meter.set_param_bytes(net.param_bytes() + projection.size() * sizeof(double));

    const EvalSplit split = split_test_pool(stream.test_set());
    std::vector<MemoryItem> val_items;
    val_items.reserve(split.validation.size());
    for (const Example& ex : split.validation) val_items.push_back(project(ex));
    std::vector<MemoryItem> test_items;
    test_items.reserve(split.final_test.size());
    for (const Example& ex : split.final_test) test_items.push_back(project(ex));

    ReservoirMemory memory(cfg.mem_sz);
    PriorTracker priors(stream.n_classes());
    std::vector<double> prior_buf;
    auto prior_ptr = [&]() -> const std::vector<double>* {
        if (!cfg.prior_correction) return nullptr;
        prior_buf = priors.smoothed();
        return &prior_buf;
    };

    for (std::size_t b = 0; b < stream.batches().size(); ++b) {
        std::vector<MemoryItem> items;
        items.reserve(stream.batches()[b].examples.size());
        for (const Example& ex : stream.batches()[b].examples)
            items.push_back(project(ex));

        if (!memory.items().empty()) {
            const std::vector<double> g_cur =
                full_xent_grad(net, items, cfg.minibatch, meter);
            const std::vector<double> g_mem =
                full_xent_grad(net, memory.items(), cfg.minibatch, meter);
            const Alignment a = grad_alignment(g_cur, g_mem);
            log.alignment.push_back({static_cast<int>(b), a.inner, a.cosine});
        }

        // Single online pass: each incoming representation is trained on
        // exactly once, then offered to the reservoir.
        std::vector<std::size_t> order(items.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(order);
        bool blocked = false;
        for (std::size_t pos = 0; pos < order.size() && !blocked;
             pos += static_cast<std::size_t>(cfg.minibatch)) {
            if (!budget.allow()) {
                blocked = true;
                break;
            }
            const std::size_t len = std::min(
                static_cast<std::size_t>(cfg.minibatch), order.size() - pos);
            std::vector<MemoryItem> step_items;
            step_items.reserve(len + cfg.replay_sz);
            for (std::size_t r = 0; r < len; ++r)
                step_items.push_back(items[order[pos + r]]);
            if (cfg.replay_sz > 0) {
                std::vector<MemoryItem> drawn =
                    memory.sample(cfg.replay_sz, replay_rng);
                if (drawn.size() < cfg.replay_sz) ++log.replay_undersampled;
                for (MemoryItem& item : drawn)
                    step_items.push_back(std::move(item));
            }
            auto [x, y] = gather_all(step_items, 0, step_items.size());
            const ForwardTrace trace = net.forward(x);
            meter.note_activation_bytes(trace.activation_bytes());
            const LossGrad lg = xent_loss_grad(net, trace, y);
            if (!std::isfinite(lg.loss))
                throw NumericError("non-finite loss in frozen_online");
            sgd_step(net, lg.grad, cfg.lr);
            for (std::size_t r = 0; r < len; ++r)
                memory.update(items[order[pos + r]], memory_rng);
        }
        if (blocked) break;
        meter.snapshot(memory.size_bytes(), 0);

        priors.consume(items);
        log.memory_items.push_back(memory.items().size());
        log.memory_bytes.push_back(memory.size_bytes());
        const EvalResult r = evaluate_items(net, val_items, prior_ptr());
        log.val_acc.push_back(r.accuracy);
        if (!r.per_task.empty()) log.val_task_acc.push_back(r.per_task);
        ++log.processed_batches;
    }

    const EvalResult r = evaluate_items(net, test_items, prior_ptr());
    log.final_test_acc = r.accuracy;
    log.final_per_class_acc = r.per_class;
    log.final_per_task_acc = r.per_task;
    log.over_budget = budget.hit;
    log.optimizer_steps = budget.steps;
    log.snapshots = meter.snapshots();
    log.stream_hash_after = hex_u64(stream.content_hash());
    log.wall_seconds =
        std::chrono::duration<double>(Clock::now() - budget.start).count();
    return log;
}

MultiheadModel::MultiheadModel(int input_dim,
                               const std::vector<int>& trunk_hidden,
                               int repr_dim, Rng& rng)
    : trunk_(input_dim, trunk_hidden, repr_dim, rng, /*relu_output=*/true) {}

TaskHead& MultiheadModel::add_head(int task, std::vector<int> classes,
                                   Rng& rng) {
    for (const TaskHead& h : heads_)
        if (h.task == task) throw ConfigError("head already exists for task");
    if (classes.empty()) throw ConfigError("head needs at least one class");
    std::sort(classes.begin(), classes.end());
    TaskHead head;
    head.task = task;
    head.classes = std::move(classes);
    head.linear.in = trunk_.output_dim();
    head.linear.out = static_cast<int>(head.classes.size());
    head.linear.w.resize(static_cast<std::size_t>(head.linear.in) *
                         static_cast<std::size_t>(head.linear.out));
    head.linear.b.assign(static_cast<std::size_t>(head.linear.out), 0.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(head.linear.in));
    for (double& v : head.linear.w) v = rng.uniform(-bound, bound);
    heads_.push_back(std::move(head));
    return heads_.back();
}

std::size_t MultiheadModel::param_bytes() const {
    std::size_t n = trunk_.param_bytes();
    for (const TaskHead& h : heads_) n += h.linear.param_count() * sizeof(double);
    return n;
}

namespace {

Matrix head_forward(const Layer& linear, const Matrix& repr) {
    Matrix out(repr.rows, linear.out);
    for (int r = 0; r < repr.rows; ++r)
        for (int j = 0; j < linear.out; ++j) {
            double z = linear.b[static_cast<std::size_t>(j)];
            const double* wrow = linear.w.data() +
                                 static_cast<std::size_t>(j) *
                                     static_cast<std::size_t>(linear.in);
            for (int i = 0; i < linear.in; ++i) z += repr.at(r, i) * wrow[i];
            out.at(r, j) = z;
        }
    return out;
}

int local_label(const TaskHead& head, int global_label) {
    const auto it = std::lower_bound(head.classes.begin(), head.classes.end(),
                                     global_label);
    if (it == head.classes.end() || *it != global_label)
        throw ConfigError("label not covered by this head");
    return static_cast<int>(it - head.classes.begin());
}

// One shuffled SGD pass through `data` on trunk + one linear head.
// update_trunk=false leaves the trunk untouched (head-only training).
bool head_phase_epoch(Mlp& trunk, TaskHead& head,
                      const std::vector<MemoryItem>& data, bool update_trunk,
                      double lr, int minibatch, Rng& shuffle_rng,
                      StepBudget& budget, ResourceMeter& meter,
                      const char* where) {
    if (data.empty()) return false;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order);
    for (std::size_t pos = 0; pos < order.size();
         pos += static_cast<std::size_t>(minibatch)) {
        if (!budget.allow()) return true;
        const std::size_t len =
            std::min(static_cast<std::size_t>(minibatch), order.size() - pos);
        auto [x, y_global] = gather(data, order, pos, len);
        std::vector<int> y(len);
        for (std::size_t r = 0; r < len; ++r)
            y[r] = local_label(head, y_global[r]);

        const ForwardTrace trace = trunk.forward(x);
        const Matrix& repr = trace.logits();
        const Matrix logits = head_forward(head.linear, repr);
        meter.note_activation_bytes(trace.activation_bytes() +
                                    logits.size_bytes());

        const double loss = xent_loss(logits, y);
        if (!std::isfinite(loss))
            throw NumericError(std::string("non-finite loss in ") + where);

        const int batch = logits.rows;
        Matrix dlogits(batch, logits.cols);
        for (int r = 0; r < batch; ++r) {
            const std::vector<double> p = softmax_row(std::span<const double>(
                logits.a.data() +
                    static_cast<std::size_t>(r) *
                        static_cast<std::size_t>(logits.cols),
                static_cast<std::size_t>(logits.cols)));
            for (int c = 0; c < logits.cols; ++c)
                dlogits.at(r, c) = p[static_cast<std::size_t>(c)] / batch;
            dlogits.at(r, y[static_cast<std::size_t>(r)]) -= 1.0 / batch;
        }

        // Head gradients.
        std::vector<double> dw(head.linear.w.size(), 0.0);
        std::vector<double> db(head.linear.b.size(), 0.0);
        for (int r = 0; r < batch; ++r)
            for (int j = 0; j < logits.cols; ++j) {
                const double dj = dlogits.at(r, j);
                if (dj == 0.0) continue;
                double* dwrow = dw.data() +
                                static_cast<std::size_t>(j) *
                                    static_cast<std::size_t>(head.linear.in);
                for (int i = 0; i < head.linear.in; ++i)
                    dwrow[i] += dj * repr.at(r, i);
                db[static_cast<std::size_t>(j)] += dj;
            }
        for (double g : dw)
            if (!std::isfinite(g)) throw NumericError("non-finite head gradient");
        for (double g : db)
            if (!std::isfinite(g)) throw NumericError("non-finite head gradient");

        if (update_trunk) {
            Matrix drepr(batch, head.linear.in);
            for (int r = 0; r < batch; ++r)
                for (int j = 0; j < logits.cols; ++j) {
                    const double dj = dlogits.at(r, j);
                    if (dj == 0.0) continue;
                    const double* wrow =
                        head.linear.w.data() +
                        static_cast<std::size_t>(j) *
                            static_cast<std::size_t>(head.linear.in);
                    for (int i = 0; i < head.linear.in; ++i)
                        drepr.at(r, i) += dj * wrow[i];
                }
            std::vector<double> trunk_grad(trunk.param_count(), 0.0);
            trunk.backward(trace, drepr, nullptr, trunk_grad);
            sgd_step(trunk, trunk_grad, lr);
        }

        for (std::size_t i = 0; i < dw.size(); ++i)
            head.linear.w[i] -= lr * dw[i];
        for (std::size_t i = 0; i < db.size(); ++i)
            head.linear.b[i] -= lr * db[i];
    }
    return false;
}

}  // namespace

EvalResult evaluate_multihead(const MultiheadModel& model,
                              std::span<const Example> test_set,
                              const std::vector<double>* priors) {
    if (test_set.empty()) throw ConfigError("evaluation set is empty");
    if (model.heads().empty()) throw ConfigError("model has no heads");

    std::vector<std::uint64_t> task_hits;
    std::vector<std::uint64_t> task_seen;
    int max_label = 0;
    for (const TaskHead& h : model.heads())
        max_label = std::max(max_label, h.classes.back());
    for (const Example& ex : test_set)
        max_label = std::max(max_label, ex.label);
    std::vector<std::uint64_t> class_hits(static_cast<std::size_t>(max_label) + 1);
    std::vector<std::uint64_t> class_seen(static_cast<std::size_t>(max_label) + 1);
    std::uint64_t hits = 0;

    constexpr std::size_t chunk = 256;
    const int dim = model.trunk().input_dim();
    for (std::size_t pos = 0; pos < test_set.size(); pos += chunk) {
        const std::size_t len = std::min(chunk, test_set.size() - pos);
        Matrix x(static_cast<int>(len), dim);
        for (std::size_t r = 0; r < len; ++r) {
            const Example& ex = test_set[pos + r];
            if (static_cast<int>(ex.features.size()) != dim)
                throw ConfigError("evaluation items have wrong feature width");
            for (int c = 0; c < dim; ++c)
                x.at(static_cast<int>(r), c) =
                    static_cast<double>(ex.features[static_cast<std::size_t>(c)]);
        }
        const ForwardTrace trace = model.trunk().forward(x);
        const Matrix& repr = trace.logits();

        for (std::size_t r = 0; r < len; ++r) {
            const Example& ex = test_set[pos + r];
            if (ex.task < 0)
                throw ProtocolError(
                    "task-routed evaluation needs a task label on every "
                    "example");
            const TaskHead* routed = nullptr;
            for (const TaskHead& head : model.heads())
                if (head.task == ex.task) {
                    routed = &head;
                    break;
                }
            if (!routed)
                throw ProtocolError("no head exists for task " +
                                    std::to_string(ex.task));
            Matrix row(1, routed->linear.in);
            for (int i = 0; i < routed->linear.in; ++i)
                row.at(0, i) = repr.at(static_cast<int>(r), i);
            const Matrix logits = head_forward(routed->linear, row);
            std::vector<double> probs = softmax_row(std::span<const double>(
                logits.a.data(), static_cast<std::size_t>(logits.cols)));
            if (priors) {
                for (std::size_t c = 0; c < probs.size(); ++c) {
                    const int global = routed->classes[c];
                    if (global >= static_cast<int>(priors->size()))
                        throw ConfigError("prior vector too short");
                    const double prior =
                        (*priors)[static_cast<std::size_t>(global)];
                    if (!(prior > 0.0))
                        throw ConfigError("priors must be strictly positive");
                    probs[c] /= prior;
                }
            }
            const int local = argmax_lowest(probs);
            const int best_label =
                routed->classes[static_cast<std::size_t>(local)];
            const bool hit = best_label == ex.label;
            hits += hit;
            ++class_seen[static_cast<std::size_t>(ex.label)];
            class_hits[static_cast<std::size_t>(ex.label)] += hit;
            if (ex.task >= 0) {
                const std::size_t t = static_cast<std::size_t>(ex.task);
                if (task_seen.size() <= t) {
                    task_seen.resize(t + 1, 0);
                    task_hits.resize(t + 1, 0);
                }
                ++task_seen[t];
                task_hits[t] += hit;
            }
        }
    }

    EvalResult out;
    out.accuracy =
        static_cast<double>(hits) / static_cast<double>(test_set.size());
    out.per_class.resize(class_seen.size());
    for (std::size_t c = 0; c < class_seen.size(); ++c)
        out.per_class[c] = class_seen[c] == 0
                               ? 0.0
                               : static_cast<double>(class_hits[c]) /
                                     static_cast<double>(class_seen[c]);
    out.per_task.resize(task_seen.size());
    for (std::size_t t = 0; t < task_seen.size(); ++t)
        out.per_task[t] = task_seen[t] == 0
                              ? 0.0
                              : static_cast<double>(task_hits[t]) /
                                    static_cast<double>(task_seen[t]);
    return out;
}

TrainLog run_multihead_pipeline(const Stream& stream, const ModelConfig& model,
                                const StrategyConfig& cfg,
                                const RunLimits& limits) {
    cfg.validate(StrategyKind::multihead_quota);
    check_limits(limits);
    if (stream.protocol() != Protocol::mtnc)
        throw ProtocolError(
            "task-routed strategy needs task labels at training and test time");
    if (stream.batches().empty()) throw ConfigError("stream has no batches");
    for (std::size_t t = 0; t < stream.batches().size(); ++t)
        if (stream.batches()[t].task != static_cast<int>(t))
            throw ProtocolError("stream tasks must be consecutive from 0");

    TrainLog log;
    log.strategy = strategy_name(StrategyKind::multihead_quota);
    log.protocol = protocol_name(stream.protocol());
    log.seed = cfg.seed;
    log.total_batches = static_cast<int>(stream.batches().size());
    log.stream_hash_before = hex_u64(stream.content_hash());

    StepBudget budget{limits.max_steps, limits.max_wall_seconds, Clock::now()};
    Rng init_rng(derive_seed(cfg.seed, rng_stream::model_init));
    Rng shuffle_rng(derive_seed(cfg.seed, rng_stream::shuffle));
    Rng memory_rng(derive_seed(cfg.seed, rng_stream::memory));

    MultiheadModel mh(stream.feature_dim(), model.hidden, model.trunk_repr_dim,
                      init_rng);
    ResourceMeter meter;
    meter.set_param_bytes(mh.param_bytes());

    std::filesystem::path work =
        limits.work_dir.empty() ? std::filesystem::path(".") : limits.work_dir;
    if (cfg.exemplars_on_disk) std::filesystem::create_directories(work);
    QuotaMemory exemplars(
        cfg.quota_budget,
        cfg.exemplars_on_disk ? QuotaMemory::Storage::disk
                              : QuotaMemory::Storage::ram,
        work / ("exemplars_" + std::to_string(cfg.seed) + ".clb"));

    const EvalSplit split = split_test_pool(stream.test_set());
    PriorTracker priors(stream.n_classes());
    std::vector<double> prior_buf;
    auto prior_ptr = [&]() -> const std::vector<double>* {
        if (!cfg.prior_correction) return nullptr;
        prior_buf = priors.smoothed();
        return &prior_buf;
    };

    auto snapshot = [&]() {
        meter.snapshot(exemplars.size_bytes(), exemplars.disk_bytes());
    };

    std::vector<int> all_classes(static_cast<std::size_t>(stream.n_classes()));
    std::iota(all_classes.begin(), all_classes.end(), 0);

    bool blocked = false;
    for (std::size_t t = 0; t < stream.batches().size() && !blocked; ++t) {
        const std::vector<MemoryItem> items = to_items(stream.batches()[t]);

        std::vector<int> classes;
        for (const MemoryItem& item : items)
            if (std::find(classes.begin(), classes.end(), item.label) ==
                classes.end())
                classes.push_back(item.label);
        TaskHead& head = mh.add_head(static_cast<int>(t), classes, init_rng);
        meter.set_param_bytes(mh.param_bytes());

        // New task: train its head (jointly with the trunk only for the
        // very first task).
        const bool joint = t == 0;
        for (int e = 0; e < cfg.epochs && !blocked; ++e) {
            blocked = head_phase_epoch(mh.trunk(), head, items, joint, cfg.lr,
                                       cfg.minibatch, shuffle_rng, budget,
                                       meter, "task head");
            if (!blocked) snapshot();
        }
        if (blocked) break;

        // Shrink old exemplar stores and admit the new task's share.
        exemplars.rebalance_and_store(static_cast<int>(t), items, memory_rng);

        if (t >= 1) {
            // Refresh the trunk on exemplars of every task seen so far,
            // through a throwaway head over all classes.
            const std::vector<MemoryItem> all_items = exemplars.all_items();
            TaskHead temp;
            temp.task = -1;
            temp.classes = all_classes;
            temp.linear.in = mh.trunk().output_dim();
            temp.linear.out = static_cast<int>(all_classes.size());
            temp.linear.w.resize(static_cast<std::size_t>(temp.linear.in) *
                                 static_cast<std::size_t>(temp.linear.out));
            temp.linear.b.assign(static_cast<std::size_t>(temp.linear.out), 0.0);
            const double bound =
                1.0 / std::sqrt(static_cast<double>(temp.linear.in));
            for (double& v : temp.linear.w) v = init_rng.uniform(-bound, bound);

            for (int e = 0; e < cfg.epochs && !blocked; ++e) {
                blocked = head_phase_epoch(mh.trunk(), temp, all_items, true,
                                           cfg.lr, cfg.minibatch, shuffle_rng,
                                           budget, meter, "trunk refresh");
                if (!blocked) snapshot();
            }
            if (blocked) break;

            // Re-fit every head to the refreshed trunk on its own
            // exemplars.
            for (std::size_t j = 0; j <= t && !blocked; ++j) {
                const std::vector<MemoryItem> task_items =
                    exemplars.task_items(static_cast<int>(j));
                for (int e = 0; e < cfg.epochs && !blocked; ++e) {
                    blocked = head_phase_epoch(
                        mh.trunk(), mh.heads()[j], task_items, false, cfg.lr,
                        cfg.minibatch, shuffle_rng, budget, meter, "head refit");
                    if (!blocked) snapshot();
                }
            }
            if (blocked) break;
        }

        priors.consume(items);
        log.memory_items.push_back(exemplars.total_items());
        log.memory_bytes.push_back(exemplars.size_bytes());
        // Tasks without a head yet cannot be routed; their validation
        // examples count as misses, like unseen classes do for the
        // single-head strategies.
        std::vector<Example> routable;
        routable.reserve(split.validation.size());
        for (const Example& ex : split.validation)
            if (ex.task >= 0 && ex.task <= static_cast<int>(t))
                routable.push_back(ex);
        double val = 0.0;
        std::vector<double> per_task;
        if (!routable.empty()) {
            const EvalResult r = evaluate_multihead(mh, routable, prior_ptr());
            val = r.accuracy * static_cast<double>(routable.size()) /
                  static_cast<double>(split.validation.size());
            per_task = r.per_task;
        }
        log.val_acc.push_back(val);
        if (!per_task.empty()) log.val_task_acc.push_back(per_task);
        ++log.processed_batches;
    }

    const EvalResult r = evaluate_multihead(mh, split.final_test, prior_ptr());
    log.final_test_acc = r.accuracy;
    log.final_per_class_acc = r.per_class;
    log.final_per_task_acc = r.per_task;
    log.over_budget = budget.hit;
    log.optimizer_steps = budget.steps;
    log.snapshots = meter.snapshots();
    log.stream_hash_after = hex_u64(stream.content_hash());
    log.wall_seconds =
        std::chrono::duration<double>(Clock::now() - budget.start).count();
    return log;
}

TrainLog run_strategy(StrategyKind kind, const Stream& stream,
                      const ModelConfig& model, const StrategyConfig& cfg,
                      const RunLimits& limits) {
    switch (kind) {
        case StrategyKind::naive: return run_naive(stream, model, cfg, limits);
        case StrategyKind::rehearsal:
            return run_rehearsal_baseline(stream, model, cfg, limits);
        case StrategyKind::replay_review:
            return run_replay_review(stream, model, cfg, limits);
        case StrategyKind::frozen_online:
            return run_frozen_feature_online(stream, model, cfg, limits);
        case StrategyKind::multihead_quota:
            return run_multihead_pipeline(stream, model, cfg, limits);
        case StrategyKind::er: return run_er(stream, model, cfg, limits);
        case StrategyKind::er_drl:
            return run_er_drl(stream, model, cfg, limits);
    }
    throw ConfigError("unknown strategy kind");
}

}  // namespace clb
