#pragma once

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "clb/trainlog.hpp"

namespace clb {

// The seven raw columns every run is judged on. Accuracies are fractions
// in [0, 1]; run_time is minutes; memory and disk are MB.
struct RunMetrics {
    double test_acc = 0.0;
    double val_acc_avg = 0.0;
    double run_time = 0.0;
    double ram_avg = 0.0;
    double ram_max = 0.0;
    double disk_avg = 0.0;
    double disk_max = 0.0;
    bool over_budget = false;

    void validate() const;  // throws ConfigError
};

// Fixed aggregation weights: test accuracy 0.3, validation-phase
// accuracy 0.1, run time 0.15, RAM 0.125 (averaged over avg and max),
// disk 0.125 (averaged over avg and max).
struct ScoreWeights {
    double test = 0.3;
    double val = 0.1;
    double time = 0.15;
    double ram = 0.125;
    double disk = 0.125;
};

struct ScoreRow {
    std::string name;
    RunMetrics raw;
    double published = std::nan("");  // optional reference score

    // Filled by normalize() / compute_scores() / rank_rows().
    double n_test = 0, n_val = 0, n_time = 0;
    double n_ram_avg = 0, n_ram_max = 0, n_disk_avg = 0, n_disk_max = 0;
    double cl_score = 0.0;
    int rank = 0;
};

// One leaderboard: rows are normalized per column against each other
// (min-max; cost columns flipped so lower raw is better), then combined
// with the fixed weights. A column with no spread normalizes to 1 for
// every row. Rows flagged over budget take the worst time score.
class Scoreboard {
  public:
    void add_row(std::string name, const RunMetrics& metrics,
                 double published = std::nan(""));

    void normalize();
    void compute_scores(const ScoreWeights& weights = {});
    void rank_rows();  // descending score; ties by test_acc then name

    const std::vector<ScoreRow>& rows() const { return rows_; }
    const ScoreRow& row(std::string_view name) const;  // throws ConfigError

    nlohmann::json to_json() const;
    std::string to_csv() const;

  private:
    std::vector<ScoreRow> rows_;
};

// Per-name mean of every raw column across the three tracks. Every name
// in `ni` must appear in all three lists; over-budget flags are OR-ed.
// Result preserves the order of `ni`.
struct NamedMetrics {
    std::string name;
    RunMetrics metrics;
};
std::vector<NamedMetrics> all_track_aggregate(
    std::span<const NamedMetrics> ni, std::span<const NamedMetrics> mtnc,
    std::span<const NamedMetrics> nic);

// Spearman rank correlation with average ranks on ties. Requires equal
// sizes, n >= 2, and spread in both inputs.
double spearman(std::span<const double> a, std::span<const double> b);

// Mean of the per-batch validation accuracies. Throws ConfigError when
// the run recorded none.
double avg_val_accuracy(const TrainLog& log);

// Raw scoring columns of a finished run.
RunMetrics metrics_from_log(const TrainLog& log);

// Reference leaderboard CSV: header
// team,test_acc,val_acc_avg,run_time,ram_avg,ram_max,disk_avg,disk_max,published_score
struct FixtureRow {
    std::string team;
    RunMetrics metrics;
    double published = 0.0;
};
std::vector<FixtureRow> load_fixture_csv(const std::filesystem::path& path);

Scoreboard scoreboard_from_fixture(std::span<const FixtureRow> rows);

}  // namespace clb
