#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "clb/meter.hpp"

namespace clb {

// Everything a strategy run records. All fields are deterministic for a
// fixed stream + config + seed except wall_seconds, which is kept out of
// the JSON when include_timing is false so reruns can be compared
// byte-for-byte.
struct TrainLog {
    std::string strategy;
    std::string protocol;
    std::uint64_t seed = 0;

    std::string stream_hash_before;
    std::string stream_hash_after;

    int total_batches = 0;
    int processed_batches = 0;
    std::uint64_t optimizer_steps = 0;
    bool over_budget = false;

    // After each consumed batch: accuracy on the validation split, and
    // (task-labelled streams only) per-task accuracies.
    std::vector<double> val_acc;
    std::vector<std::vector<double>> val_task_acc;

    // Gradient alignment between the incoming batch and the rehearsal
    // memory, one record per batch where the memory was non-empty.
    struct AlignmentRecord {
        int batch = 0;
        double inner = 0.0;
        double cosine = 0.0;
    };
    std::vector<AlignmentRecord> alignment;

    // Rehearsal storage growth, one entry per consumed batch.
    std::vector<std::uint64_t> memory_items;
    std::vector<std::uint64_t> memory_bytes;

    // One resource snapshot per training epoch.
    std::vector<ResourceMeter::Snapshot> snapshots;

    double final_test_acc = 0.0;
    std::vector<double> final_per_class_acc;
    std::vector<double> final_per_task_acc;

    // Replay draws that found fewer stored items than requested.
    std::uint64_t replay_undersampled = 0;
    // Review draw was clamped to the number of stored items.
    bool review_clamped = false;

    double wall_seconds = 0.0;

    nlohmann::json to_json(bool include_timing = true) const;
    static TrainLog from_json(const nlohmann::json& j);
};

}  // namespace clb
