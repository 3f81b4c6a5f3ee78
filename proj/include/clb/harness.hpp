#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "clb/scoreboard.hpp"
#include "clb/strategies.hpp"
#include "clb/streamgen.hpp"

namespace clb {

inline constexpr const char* engine_version = "clb 1.0";

enum class Track { ni, mtnc, nic, all };
const char* track_name(Track t);
Track track_from_name(std::string_view name);  // throws ConfigError

struct Budget {
    std::uint64_t max_steps = std::numeric_limits<std::uint64_t>::max();
    double max_wall_seconds = std::numeric_limits<double>::infinity();
};

// A full experiment: one strategy, one track (or all three), a list of
// seeds. Every seed reseeds the world and the strategy together.
struct ExperimentSpec {
    Track track = Track::ni;
    StrategyKind strategy = StrategyKind::naive;
    ModelConfig model;
    StrategyConfig strategy_config;
    WorldConfig world;
    int mtnc_first_classes = 10;
    int mtnc_later_classes = 5;
    int nic_first_classes = 10;
    std::vector<std::uint64_t> seeds = {1};
    Budget budget;

    // Shrinks the world to the desk scale: 10 classes in 5 categories,
    // 5 sessions (3 train), 32 features, 30 examples per class-session,
    // tasks of 2 classes and a 2-class opening batch.
    void apply_desk_preset();

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentSpec from_json(const nlohmann::json& j);
    static ExperimentSpec load_file(const std::filesystem::path& path);
};

// Builds the stream for one concrete track of the spec, with the world
// reseeded to `seed`.
Stream build_stream(const ExperimentSpec& spec, Track track,
                    std::uint64_t seed);

struct RunRecord {
    std::string engine = engine_version;
    Track track = Track::ni;
    StrategyKind strategy = StrategyKind::naive;
    std::uint64_t seed = 0;
    bool aggregate = false;  // mean row over the three tracks of one seed
    RunMetrics metrics;
    TrainLog log;  // default-empty for aggregate records
    nlohmann::json config_echo;

    std::string default_filename() const;
    nlohmann::json to_json(bool include_timing = true) const;
    static RunRecord from_json(const nlohmann::json& j);
};

// Runs every (seed, track) combination, optionally on `jobs` worker
// threads. Record order is deterministic: seeds outer, tracks inner,
// with each seed's aggregate row (track "all" only) after its children.
// Scratch files go under work_dir.
std::vector<RunRecord> run_experiment(const ExperimentSpec& spec, int jobs = 1,
                                      const std::filesystem::path& work_dir = {});

void write_records(std::span<const RunRecord> records,
                   const std::filesystem::path& dir);
RunRecord read_record_file(const std::filesystem::path& path);

// One leaderboard over the given records (rows named
// <strategy>_seed<k>). All records must be from the same track, and
// aggregate rows cannot mix with plain ones.
Scoreboard score_records(std::span<const RunRecord> records);

// Per-run series plus paired per-seed final-accuracy deltas between
// every pair of strategies sharing a (track, seed).
nlohmann::json report_json(std::span<const RunRecord> records);
std::string run_series_csv(const RunRecord& record);

}  // namespace clb
