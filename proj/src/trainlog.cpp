#include "clb/trainlog.hpp"

namespace clb {

using nlohmann::json;

json TrainLog::to_json(bool include_timing) const {
    json j;
    j["strategy"] = strategy;
    j["protocol"] = protocol;
    j["seed"] = seed;
    j["stream_hash_before"] = stream_hash_before;
    j["stream_hash_after"] = stream_hash_after;
    j["total_batches"] = total_batches;
    j["processed_batches"] = processed_batches;
    j["optimizer_steps"] = optimizer_steps;
    j["over_budget"] = over_budget;
    j["val_acc"] = val_acc;
    j["val_task_acc"] = val_task_acc;

    json align = json::array();
    for (const AlignmentRecord& a : alignment)
        align.push_back({{"batch", a.batch},
                         {"inner", a.inner},
                         {"cosine", a.cosine}});
    j["alignment"] = align;

    j["memory_items"] = memory_items;
    j["memory_bytes"] = memory_bytes;

    json snaps = json::array();
    for (const auto& s : snapshots)
        snaps.push_back({{"ram_bytes", s.ram_bytes},
                         {"disk_bytes", s.disk_bytes}});
    j["snapshots"] = snaps;

    j["final_test_acc"] = final_test_acc;
    j["final_per_class_acc"] = final_per_class_acc;
    j["final_per_task_acc"] = final_per_task_acc;
    j["replay_undersampled"] = replay_undersampled;
    j["review_clamped"] = review_clamped;
    if (include_timing) j["wall_seconds"] = wall_seconds;
    return j;
}

TrainLog TrainLog::from_json(const json& j) {
    TrainLog log;
    log.strategy = j.at("strategy").get<std::string>();
    log.protocol = j.at("protocol").get<std::string>();
    log.seed = j.at("seed").get<std::uint64_t>();
    log.stream_hash_before = j.at("stream_hash_before").get<std::string>();
    log.stream_hash_after = j.at("stream_hash_after").get<std::string>();
    log.total_batches = j.at("total_batches").get<int>();
    log.processed_batches = j.at("processed_batches").get<int>();
    log.optimizer_steps = j.at("optimizer_steps").get<std::uint64_t>();
    log.over_budget = j.at("over_budget").get<bool>();
    log.val_acc = j.at("val_acc").get<std::vector<double>>();
    log.val_task_acc =
        j.at("val_task_acc").get<std::vector<std::vector<double>>>();
    for (const auto& a : j.at("alignment")) {
        AlignmentRecord rec;
        rec.batch = a.at("batch").get<int>();
        rec.inner = a.at("inner").get<double>();
        rec.cosine = a.at("cosine").get<double>();
        log.alignment.push_back(rec);
    }
    log.memory_items = j.at("memory_items").get<std::vector<std::uint64_t>>();
    log.memory_bytes = j.at("memory_bytes").get<std::vector<std::uint64_t>>();
    for (const auto& s : j.at("snapshots")) {
        ResourceMeter::Snapshot snap;
        snap.ram_bytes = s.at("ram_bytes").get<std::uint64_t>();
        snap.disk_bytes = s.at("disk_bytes").get<std::uint64_t>();
        log.snapshots.push_back(snap);
    }
    log.final_test_acc = j.at("final_test_acc").get<double>();
    log.final_per_class_acc =
        j.at("final_per_class_acc").get<std::vector<double>>();
    log.final_per_task_acc =
        j.at("final_per_task_acc").get<std::vector<double>>();
    log.replay_undersampled = j.at("replay_undersampled").get<std::uint64_t>();
    log.review_clamped = j.at("review_clamped").get<bool>();
    if (j.contains("wall_seconds"))
        log.wall_seconds = j.at("wall_seconds").get<double>();
    return log;
}

}  // namespace clb
