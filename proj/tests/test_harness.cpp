// Experiment orchestration: spec round-trips, deterministic record
// ordering, parallel/serial equivalence, and the reporting surfaces.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "clb/errors.hpp"
#include "clb/harness.hpp"

using namespace clb;

namespace {

ExperimentSpec desk_spec(Track track, StrategyKind strategy,
                         std::vector<std::uint64_t> seeds) {
    ExperimentSpec spec;
    spec.apply_desk_preset();
    spec.track = track;
    spec.strategy = strategy;
    spec.strategy_config.epochs = 1;
    spec.strategy_config.lr = 0.2;
    spec.seeds = std::move(seeds);
    return spec;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const char* tag)
        : path(std::filesystem::temp_directory_path() /
               (std::string("clb_harness_") + tag)) {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

// Timing-free dump used for determinism comparisons.
std::string stable_dump(const RunRecord& rec) { return rec.to_json(false).dump(); }

}  // namespace

TEST_CASE("track names round-trip") {
    for (Track t : {Track::ni, Track::mtnc, Track::nic, Track::all})
        CHECK(track_from_name(track_name(t)) == t);
    CHECK_THROWS_AS(track_from_name("nc"), ConfigError);
}

TEST_CASE("desk preset shrinks the world") {
    ExperimentSpec spec;
    spec.apply_desk_preset();
    CHECK(spec.world.n_classes == 10);
    CHECK(spec.world.n_categories == 5);
    CHECK(spec.world.n_sessions == 5);
    CHECK(spec.world.n_train_sessions == 3);
    CHECK(spec.world.feature_dim == 32);
    CHECK(spec.world.examples_per_class_session == 30);
    CHECK(spec.mtnc_first_classes == 2);
    CHECK(spec.mtnc_later_classes == 2);
    CHECK(spec.nic_first_classes == 2);
}

TEST_CASE("experiment spec round-trips through JSON") {
    ExperimentSpec spec = desk_spec(Track::mtnc, StrategyKind::er_drl, {3, 4});
    spec.strategy_config.drl_lambda = 3e-4;
    spec.strategy_config.mem_sz = 123;
    spec.model.hidden = {48, 24};
    spec.budget.max_steps = 5000;

    const nlohmann::json j = spec.to_json();
    const ExperimentSpec back = ExperimentSpec::from_json(j);
    CHECK(back.to_json() == j);
    CHECK(back.track == Track::mtnc);
    CHECK(back.strategy == StrategyKind::er_drl);
    CHECK(back.seeds == std::vector<std::uint64_t>{3, 4});
    CHECK(back.budget.max_steps == 5000);
    CHECK(back.strategy_config.drl_lambda == 3e-4);
    CHECK(back.model.hidden == std::vector<int>{48, 24});
}

TEST_CASE("spec parsing applies the desk flag and rejects junk") {
    const ExperimentSpec desk = ExperimentSpec::from_json(
        nlohmann::json{{"track", "nic"}, {"desk", true}});
    CHECK(desk.world.n_classes == 10);
    CHECK(desk.nic_first_classes == 2);

    CHECK_THROWS_AS(
        ExperimentSpec::from_json(nlohmann::json{{"track", "sideways"}}),
        ConfigError);
    CHECK_THROWS_AS(
        ExperimentSpec::from_json(nlohmann::json{{"strategy", "adam"}}),
        ConfigError);
    CHECK_THROWS_AS(
        ExperimentSpec::from_json(nlohmann::json{{"seeds", "one"}}),
        ConfigError);

    TempDir tmp("spec");
    const std::filesystem::path bad = tmp.path / "bad.json";
    {
        std::ofstream f(bad);
        f << "{ not json";
    }
    CHECK_THROWS_AS(ExperimentSpec::load_file(bad), ConfigError);
    CHECK_THROWS_AS(ExperimentSpec::load_file(tmp.path / "absent.json"),
                    ConfigError);

    const std::filesystem::path good = tmp.path / "good.json";
    {
        std::ofstream f(good);
        f << nlohmann::json{{"track", "ni"}, {"desk", true}}.dump();
    }
    CHECK(ExperimentSpec::load_file(good).track == Track::ni);
}

TEST_CASE("streams are built per track with the requested seed") {
    const ExperimentSpec spec = desk_spec(Track::all, StrategyKind::naive, {1});
    CHECK(build_stream(spec, Track::ni, 1).batches().size() == 3);
    CHECK(build_stream(spec, Track::mtnc, 1).batches().size() == 5);
    CHECK(build_stream(spec, Track::nic, 1).batches().size() == 29);
    CHECK(build_stream(spec, Track::ni, 1).content_hash() !=
          build_stream(spec, Track::ni, 2).content_hash());
    CHECK_THROWS_AS(build_stream(spec, Track::all, 1), ConfigError);
}

TEST_CASE("experiment validation") {
    ExperimentSpec spec = desk_spec(Track::ni, StrategyKind::naive, {1});
    spec.validate();

    ExperimentSpec no_seeds = spec;
    no_seeds.seeds.clear();
    CHECK_THROWS_AS(no_seeds.validate(), ConfigError);

    ExperimentSpec bad_budget = spec;
    bad_budget.budget.max_wall_seconds = -1.0;
    CHECK_THROWS_AS(bad_budget.validate(), ConfigError);

    CHECK_THROWS_AS(run_experiment(spec, 0), ConfigError);
}

TEST_CASE("records come back in seed-major order with full provenance") {
    TempDir tmp("order");
    const ExperimentSpec spec = desk_spec(Track::ni, StrategyKind::naive, {5, 9});
    const std::vector<RunRecord> recs = run_experiment(spec, 1, tmp.path);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].seed == 5);
    CHECK(recs[1].seed == 9);
    for (const RunRecord& rec : recs) {
        CHECK(rec.track == Track::ni);
        CHECK(rec.strategy == StrategyKind::naive);
        CHECK_FALSE(rec.aggregate);
        CHECK(rec.engine == engine_version);
        CHECK(rec.log.seed == rec.seed);
        CHECK(rec.config_echo == spec.to_json());
        // Metrics are derived from the log, nothing else.
        const RunMetrics m = metrics_from_log(rec.log);
        CHECK(rec.metrics.test_acc == m.test_acc);
        CHECK(rec.metrics.ram_max == m.ram_max);
    }
    CHECK(recs[0].log.final_test_acc != recs[1].log.final_test_acc);
}

TEST_CASE("the combined track appends one aggregate row per seed") {
    TempDir tmp("agg");
    const ExperimentSpec spec = desk_spec(Track::all, StrategyKind::naive, {1, 2});
    const std::vector<RunRecord> recs = run_experiment(spec, 1, tmp.path);
    REQUIRE(recs.size() == 8);

    for (std::size_t s = 0; s < 2; ++s) {
        const std::size_t base = s * 4;
        CHECK(recs[base + 0].track == Track::ni);
        CHECK(recs[base + 1].track == Track::mtnc);
        CHECK(recs[base + 2].track == Track::nic);
        CHECK(recs[base + 3].track == Track::all);
        CHECK(recs[base + 3].aggregate);
        const double mean = (recs[base].metrics.test_acc +
                             recs[base + 1].metrics.test_acc +
                             recs[base + 2].metrics.test_acc) /
                            3.0;
        CHECK(recs[base + 3].metrics.test_acc == doctest::Approx(mean));
        CHECK_FALSE(recs[base + 3].metrics.over_budget);
        // Aggregate rows carry no training log.
        CHECK(recs[base + 3].log.val_acc.empty());
    }
}

TEST_CASE("worker count does not change any record") {
    TempDir tmp1("jobs1");
    TempDir tmp4("jobs4");
    const ExperimentSpec spec = desk_spec(Track::all, StrategyKind::er, {1, 2});
    const std::vector<RunRecord> serial = run_experiment(spec, 1, tmp1.path);
    const std::vector<RunRecord> parallel = run_experiment(spec, 4, tmp4.path);
    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i)
        CHECK(stable_dump(serial[i]) == stable_dump(parallel[i]));
}

TEST_CASE("reruns are identical except for wall-clock fields") {
    TempDir tmp("rerun");
    const ExperimentSpec spec =
        desk_spec(Track::mtnc, StrategyKind::rehearsal, {7});
    const std::vector<RunRecord> a = run_experiment(spec, 1, tmp.path);
    const std::vector<RunRecord> b = run_experiment(spec, 1, tmp.path);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(stable_dump(a[i]) == stable_dump(b[i]));
    // The timing-inclusive dump differs only in the timing fields.
    nlohmann::json ja = a[0].to_json();
    nlohmann::json jb = b[0].to_json();
    ja["metrics"].erase("run_time");
    jb["metrics"].erase("run_time");
    ja["log"].erase("wall_seconds");
    jb["log"].erase("wall_seconds");
    CHECK(ja == jb);
}

TEST_CASE("records survive the round-trip through disk") {
    TempDir tmp("rw");
    const ExperimentSpec spec = desk_spec(Track::ni, StrategyKind::naive, {3});
    const std::vector<RunRecord> recs = run_experiment(spec, 1, tmp.path);
    write_records(recs, tmp.path / "records");

    const std::filesystem::path expected =
        tmp.path / "records" / "record_ni_naive_seed3.json";
    REQUIRE(std::filesystem::exists(expected));
    const RunRecord back = read_record_file(expected);
    CHECK(back.to_json() == recs[0].to_json());

    CHECK_THROWS_AS(read_record_file(tmp.path / "absent.json"), FormatError);
    const std::filesystem::path garbage = tmp.path / "garbage.json";
    {
        std::ofstream f(garbage);
        f << "{\"engine\": \"clb 1.0\"}";
    }
    CHECK_THROWS_AS(read_record_file(garbage), FormatError);

    RunRecord agg;
    agg.track = Track::all;
    agg.aggregate = true;
    CHECK(agg.default_filename() == "record_all_naive_seed0_aggregate.json");
}

TEST_CASE("scoring refuses mixed record sets") {
    TempDir tmp("score");
    const ExperimentSpec ni = desk_spec(Track::ni, StrategyKind::naive, {1, 2});
    const ExperimentSpec mtnc = desk_spec(Track::mtnc, StrategyKind::naive, {1});
    std::vector<RunRecord> recs = run_experiment(ni, 1, tmp.path);

    const Scoreboard board = score_records(recs);
    REQUIRE(board.rows().size() == 2);
    CHECK(board.row("naive_seed1").rank >= 1);
    CHECK(board.row("naive_seed2").rank >= 1);

    std::vector<RunRecord> mixed = recs;
    mixed.push_back(run_experiment(mtnc, 1, tmp.path)[0]);
    CHECK_THROWS_AS(score_records(mixed), ConfigError);

    std::vector<RunRecord> with_agg = recs;
    RunRecord agg = recs[0];
    agg.aggregate = true;
    with_agg.push_back(agg);
    CHECK_THROWS_AS(score_records(with_agg), ConfigError);

    CHECK_THROWS_AS(score_records(std::vector<RunRecord>{}), ConfigError);
}

TEST_CASE("the per-run series table lines up batches with their signals") {
    TempDir tmp("series");
    ExperimentSpec spec = desk_spec(Track::mtnc, StrategyKind::rehearsal, {1});
    spec.strategy_config.growing_quota = 60;
    const std::vector<RunRecord> recs = run_experiment(spec, 1, tmp.path);
    const std::string csv = run_series_csv(recs[0]);

    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line ==
          "batch,val_acc,memory_items,memory_bytes,alignment_inner,"
          "alignment_cosine");
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    REQUIRE(rows.size() == 5);
    // Batch 0 trains against an empty memory: no alignment columns.
    CHECK(rows[0].substr(rows[0].size() - 2) == ",,");
    // Later batches carry one.
    CHECK(rows[4].find(",,") == std::string::npos);

    RunRecord agg;
    agg.aggregate = true;
    const std::string only_header = run_series_csv(agg);
    CHECK(only_header.find('\n') == only_header.size() - 1);
}

TEST_CASE("the report pairs strategies per seed and summarizes deltas") {
    TempDir tmp("report");
    ExperimentSpec naive = desk_spec(Track::mtnc, StrategyKind::naive, {1, 2});
    naive.strategy_config.epochs = 8;
    ExperimentSpec reh = desk_spec(Track::mtnc, StrategyKind::rehearsal, {1, 2});
    reh.strategy_config.epochs = 8;
    reh.strategy_config.growing_quota = 180;

    std::vector<RunRecord> recs = run_experiment(naive, 1, tmp.path);
    const std::vector<RunRecord> more = run_experiment(reh, 1, tmp.path);
    recs.insert(recs.end(), more.begin(), more.end());

    const nlohmann::json report = report_json(recs);
    REQUIRE(report.at("runs").size() == 4);
    // Per-task forgetting on a task-labelled track: naive forgets task 0
    // almost completely, rehearsal keeps it.
    const auto& naive_run = report.at("runs")[0];
    REQUIRE(naive_run.contains("val_task_forgetting"));
    const double naive_forget =
        naive_run.at("val_task_forgetting")[0].get<double>();
    const auto& reh_run = report.at("runs")[2];
    const double reh_forget = reh_run.at("val_task_forgetting")[0].get<double>();
    CHECK(naive_forget >= 0.5);
    CHECK(reh_forget < naive_forget);

    // One delta per (track, seed) strategy pair.
    REQUIRE(report.at("paired_deltas").size() == 2);
    for (const auto& d : report.at("paired_deltas")) {
        CHECK(d.at("strategy_a") == "naive");
        CHECK(d.at("strategy_b") == "rehearsal");
        CHECK(d.at("delta_test_acc").get<double>() < 0.0);
    }
    REQUIRE(report.at("paired_summary").size() == 1);
    const auto& s = report.at("paired_summary")[0];
    CHECK(s.at("paired_seeds") == 2);
    CHECK(s.at("mean_delta_test_acc").get<double>() < -0.3);

    CHECK_THROWS_AS(report_json(std::vector<RunRecord>{}), ConfigError);
}
