#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "clb/memory.hpp"
#include "clb/model.hpp"
#include "clb/streamgen.hpp"
#include "clb/trainlog.hpp"

namespace clb {

// naive            plain SGD over each incoming batch
// rehearsal        naive + growing memory replayed in full each batch
// replay_review    bounded reservoir, a replay draw joins each epoch's
//                  data, and one low-rate review pass runs at the end
// frozen_online    frozen feature map, single linear head, one online
//                  pass per batch with per-step replay of stored
//                  representations
// multihead_quota  shared trunk with one head per task and a fixed
//                  exemplar budget split evenly across tasks
// er               per-step replay from a reservoir
// er_drl           er plus the pairwise representation loss
enum class StrategyKind {
    naive,
    rehearsal,
    replay_review,
    frozen_online,
    multihead_quota,
    er,
    er_drl,
};

const char* strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(std::string_view name);  // throws ConfigError

struct ModelConfig {
    std::vector<int> hidden = {64};  // hidden widths of the single-head net
    // frozen_online: width of the fixed random projection; 0 keeps raw
    // features (identity map).
    int frozen_projection_dim = 0;
    // multihead_quota: width of the shared trunk's output representation.
    int trunk_repr_dim = 32;
};

struct StrategyConfig {
    int epochs = 1;
    int minibatch = 16;
    double lr = 0.1;
    // replay_review rates; the review pass may not exceed the replay rate.
    double lr_replay = 0.1;
    double lr_review = 0.02;
    std::size_t mem_sz = 200;     // reservoir capacity
    std::size_t replay_sz = 50;   // items drawn per replay
    std::size_t review_sz = 100;  // items drawn for the final review pass
    std::size_t growing_quota = 20;   // rehearsal: items kept per batch
    std::size_t quota_budget = 60;    // multihead_quota: total exemplar slots
    double drl_lambda = 0.0;          // er_drl: weight of the pairwise loss
    bool drl_include_logits = false;
    bool prior_correction = false;  // divide predicted probs by running priors
    bool exemplars_on_disk = false;  // multihead_quota: spill exemplars
    std::uint64_t seed = 1;

    void validate(StrategyKind kind) const;  // throws ConfigError
};

struct RunLimits {
    std::uint64_t max_steps = std::numeric_limits<std::uint64_t>::max();
    double max_wall_seconds = std::numeric_limits<double>::infinity();
    // Scratch directory for spill files; empty means current directory.
    std::filesystem::path work_dir;
};

TrainLog run_naive(const Stream& stream, const ModelConfig& model,
                   const StrategyConfig& cfg, const RunLimits& limits = {});
TrainLog run_rehearsal_baseline(const Stream& stream, const ModelConfig& model,
                                const StrategyConfig& cfg,
                                const RunLimits& limits = {});
TrainLog run_replay_review(const Stream& stream, const ModelConfig& model,
                           const StrategyConfig& cfg,
                           const RunLimits& limits = {});
TrainLog run_frozen_feature_online(const Stream& stream,
                                   const ModelConfig& model,
                                   const StrategyConfig& cfg,
                                   const RunLimits& limits = {});
TrainLog run_multihead_pipeline(const Stream& stream, const ModelConfig& model,
                                const StrategyConfig& cfg,
                                const RunLimits& limits = {});
TrainLog run_er(const Stream& stream, const ModelConfig& model,
                const StrategyConfig& cfg, const RunLimits& limits = {});
TrainLog run_er_drl(const Stream& stream, const ModelConfig& model,
                    const StrategyConfig& cfg, const RunLimits& limits = {});

TrainLog run_strategy(StrategyKind kind, const Stream& stream,
                      const ModelConfig& model, const StrategyConfig& cfg,
                      const RunLimits& limits = {});

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> per_class;  // indexed by label
    std::vector<double> per_task;   // indexed by task; empty if unlabelled
};

// Single-head evaluation. Predictions take the class with the highest
// softmax probability (optionally divided by its prior), lowest index on
// ties.
EvalResult evaluate(const Mlp& net, std::span<const Example> test_set,
                    const std::vector<double>* priors = nullptr);

// Validation/final-test split of a held-out pool: within each class,
// every fifth example (by pool order, starting with the first) goes to
// validation, the rest to the final test set.
struct EvalSplit {
    std::vector<Example> validation;
    std::vector<Example> final_test;
};
EvalSplit split_test_pool(std::span<const Example> pool);

// Task-routed model used by multihead_quota: a shared trunk whose
// representation feeds one linear head per task.
struct TaskHead {
    int task = 0;
    std::vector<int> classes;  // global labels, ascending
    Layer linear;
};

class MultiheadModel {
  public:
    MultiheadModel(int input_dim, const std::vector<int>& trunk_hidden,
                   int repr_dim, Rng& rng);

    Mlp& trunk() { return trunk_; }
    const Mlp& trunk() const { return trunk_; }
    std::vector<TaskHead>& heads() { return heads_; }
    const std::vector<TaskHead>& heads() const { return heads_; }

    TaskHead& add_head(int task, std::vector<int> classes, Rng& rng);
    std::size_t param_bytes() const;

  private:
    Mlp trunk_;
    std::vector<TaskHead> heads_;
};

// Route each example to the head matching its task label (the label is
// part of the protocol at training and test time alike), then predict
// the head's best class after optional prior correction. Examples
// without a task label, or with one no head covers, are a protocol
// error. Ties within a head go to the lower class index.
EvalResult evaluate_multihead(const MultiheadModel& model,
                              std::span<const Example> test_set,
                              const std::vector<double>* priors = nullptr);

}  // namespace clb
