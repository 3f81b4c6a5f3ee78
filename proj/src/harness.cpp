#include "clb/harness.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>
#include <utility>

#include "clb/errors.hpp"

namespace clb {

using nlohmann::json;

const char* track_name(Track t) {
    switch (t) {
        case Track::ni: return "ni";
        case Track::mtnc: return "mtnc";
        case Track::nic: return "nic";
        case Track::all: return "all";
    }
    return "?";
}

Track track_from_name(std::string_view name) {
    if (name == "ni") return Track::ni;
    if (name == "mtnc") return Track::mtnc;
    if (name == "nic") return Track::nic;
    if (name == "all") return Track::all;
    throw ConfigError("unknown track name: " + std::string(name));
}

void ExperimentSpec::apply_desk_preset() {
    world.n_classes = 10;
    world.n_categories = 5;
    world.n_sessions = 5;
    world.n_train_sessions = 3;
    world.feature_dim = 32;
    world.examples_per_class_session = 30;
    world.category_spread = 3.0;
    world.class_spread = 1.0;
    world.session_shift_scale = 0.35;
    world.session_rotations = 3;
    world.noise_scale = 0.7;
    mtnc_first_classes = 2;
    mtnc_later_classes = 2;
    nic_first_classes = 2;
}

void ExperimentSpec::validate() const {
    world.validate();
    strategy_config.validate(strategy);
    if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (std::isnan(budget.max_wall_seconds) || budget.max_wall_seconds <= 0.0)
        throw ConfigError("wall-clock budget must be positive");
}

namespace {

json world_to_json(const WorldConfig& w) {
    return json{{"n_classes", w.n_classes},
                {"n_categories", w.n_categories},
                {"n_sessions", w.n_sessions},
                {"n_train_sessions", w.n_train_sessions},
                {"feature_dim", w.feature_dim},
                {"examples_per_class_session", w.examples_per_class_session},
                {"category_spread", w.category_spread},
                {"class_spread", w.class_spread},
                {"session_shift_scale", w.session_shift_scale},
                {"session_rotations", w.session_rotations},
                {"noise_scale", w.noise_scale},
                {"seed", w.seed}};
}

template <typename T>
void fetch(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

WorldConfig world_from_json(const json& j) {
    WorldConfig w;
    fetch(j, "n_classes", w.n_classes);
    fetch(j, "n_categories", w.n_categories);
    fetch(j, "n_sessions", w.n_sessions);
    fetch(j, "n_train_sessions", w.n_train_sessions);
    fetch(j, "feature_dim", w.feature_dim);
    fetch(j, "examples_per_class_session", w.examples_per_class_session);
    fetch(j, "category_spread", w.category_spread);
    fetch(j, "class_spread", w.class_spread);
    fetch(j, "session_shift_scale", w.session_shift_scale);
    fetch(j, "session_rotations", w.session_rotations);
    fetch(j, "noise_scale", w.noise_scale);
    fetch(j, "seed", w.seed);
    return w;
}

json model_to_json(const ModelConfig& m) {
    return json{{"hidden", m.hidden},
                {"frozen_projection_dim", m.frozen_projection_dim},
                {"trunk_repr_dim", m.trunk_repr_dim}};
}

ModelConfig model_from_json(const json& j) {
    ModelConfig m;
    fetch(j, "hidden", m.hidden);
    fetch(j, "frozen_projection_dim", m.frozen_projection_dim);
    fetch(j, "trunk_repr_dim", m.trunk_repr_dim);
    return m;
}

json strat_to_json(const StrategyConfig& s) {
    return json{{"epochs", s.epochs},
                {"minibatch", s.minibatch},
                {"lr", s.lr},
                {"lr_replay", s.lr_replay},
                {"lr_review", s.lr_review},
                {"mem_sz", s.mem_sz},
                {"replay_sz", s.replay_sz},
                {"review_sz", s.review_sz},
                {"growing_quota", s.growing_quota},
                {"quota_budget", s.quota_budget},
                {"drl_lambda", s.drl_lambda},
                {"drl_include_logits", s.drl_include_logits},
                {"prior_correction", s.prior_correction},
                {"exemplars_on_disk", s.exemplars_on_disk},
                {"seed", s.seed}};
}

StrategyConfig strat_from_json(const json& j) {
    StrategyConfig s;
    fetch(j, "epochs", s.epochs);
    fetch(j, "minibatch", s.minibatch);
    fetch(j, "lr", s.lr);
    fetch(j, "lr_replay", s.lr_replay);
    fetch(j, "lr_review", s.lr_review);
    fetch(j, "mem_sz", s.mem_sz);
    fetch(j, "replay_sz", s.replay_sz);
    fetch(j, "review_sz", s.review_sz);
    fetch(j, "growing_quota", s.growing_quota);
    fetch(j, "quota_budget", s.quota_budget);
    fetch(j, "drl_lambda", s.drl_lambda);
    fetch(j, "drl_include_logits", s.drl_include_logits);
    fetch(j, "prior_correction", s.prior_correction);
    fetch(j, "exemplars_on_disk", s.exemplars_on_disk);
    fetch(j, "seed", s.seed);
    return s;
}

}  // namespace

json ExperimentSpec::to_json() const {
    json j;
    j["track"] = track_name(track);
    j["strategy"] = strategy_name(strategy);
    j["model"] = model_to_json(model);
    j["strategy_config"] = strat_to_json(strategy_config);
    j["world"] = world_to_json(world);
    j["protocol_params"] = {{"mtnc_first_classes", mtnc_first_classes},
                            {"mtnc_later_classes", mtnc_later_classes},
                            {"nic_first_classes", nic_first_classes}};
    j["seeds"] = seeds;
    json b;
    if (budget.max_steps != std::numeric_limits<std::uint64_t>::max())
        b["max_steps"] = budget.max_steps;
    if (std::isfinite(budget.max_wall_seconds))
        b["max_wall_seconds"] = budget.max_wall_seconds;
    j["budget"] = b;
    return j;
}

ExperimentSpec ExperimentSpec::from_json(const json& j) {
    try {
        ExperimentSpec spec;
        if (j.contains("track"))
            spec.track = track_from_name(j.at("track").get<std::string>());
        if (j.contains("strategy"))
            spec.strategy =
                strategy_from_name(j.at("strategy").get<std::string>());
        if (j.contains("model")) spec.model = model_from_json(j.at("model"));
        if (j.contains("strategy_config"))
            spec.strategy_config = strat_from_json(j.at("strategy_config"));
        if (j.contains("world")) spec.world = world_from_json(j.at("world"));
        if (j.contains("protocol_params")) {
            const json& p = j.at("protocol_params");
            fetch(p, "mtnc_first_classes", spec.mtnc_first_classes);
            fetch(p, "mtnc_later_classes", spec.mtnc_later_classes);
            fetch(p, "nic_first_classes", spec.nic_first_classes);
        }
        fetch(j, "seeds", spec.seeds);
        if (j.contains("budget")) {
            const json& b = j.at("budget");
            fetch(b, "max_steps", spec.budget.max_steps);
            fetch(b, "max_wall_seconds", spec.budget.max_wall_seconds);
        }
        if (j.contains("desk") && j.at("desk").get<bool>())
            spec.apply_desk_preset();
        return spec;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed experiment spec: ") + e.what());
    }
}

ExperimentSpec ExperimentSpec::load_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open experiment spec: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("experiment spec is not valid JSON: ") +
                          e.what());
    }
    return from_json(j);
}

Stream build_stream(const ExperimentSpec& spec, Track track,
                    std::uint64_t seed) {
    WorldConfig wc = spec.world;
    wc.seed = seed;
    const World world = generate_world(wc);
    switch (track) {
        case Track::ni: return make_ni_stream(world);
        case Track::mtnc:
            return make_mtnc_stream(world, spec.mtnc_first_classes,
                                    spec.mtnc_later_classes);
        case Track::nic: return make_nic_stream(world, spec.nic_first_classes);
        case Track::all: break;
    }
    throw ConfigError("cannot build a stream for the aggregate track");
}

std::string RunRecord::default_filename() const {
    std::string name = "record_";
    name += track_name(track);
    name += '_';
    name += strategy_name(strategy);
    name += "_seed" + std::to_string(seed);
    if (aggregate) name += "_aggregate";
    name += ".json";
    return name;
}

json RunRecord::to_json(bool include_timing) const {
    json j;
    j["engine"] = engine;
    j["track"] = track_name(track);
    j["strategy"] = strategy_name(strategy);
    j["seed"] = seed;
    j["aggregate"] = aggregate;
    json m;
    m["test_acc"] = metrics.test_acc;
    m["val_acc_avg"] = metrics.val_acc_avg;
    if (include_timing) m["run_time"] = metrics.run_time;
    m["ram_avg"] = metrics.ram_avg;
    m["ram_max"] = metrics.ram_max;
    m["disk_avg"] = metrics.disk_avg;
    m["disk_max"] = metrics.disk_max;
    m["over_budget"] = metrics.over_budget;
    j["metrics"] = m;
    if (!aggregate) j["log"] = log.to_json(include_timing);
    j["config"] = config_echo;
    return j;
}

RunRecord RunRecord::from_json(const json& j) {
    try {
        RunRecord rec;
        rec.engine = j.at("engine").get<std::string>();
        rec.track = track_from_name(j.at("track").get<std::string>());
        rec.strategy = strategy_from_name(j.at("strategy").get<std::string>());
        rec.seed = j.at("seed").get<std::uint64_t>();
        rec.aggregate = j.at("aggregate").get<bool>();
        const json& m = j.at("metrics");
        rec.metrics.test_acc = m.at("test_acc").get<double>();
        rec.metrics.val_acc_avg = m.at("val_acc_avg").get<double>();
        if (m.contains("run_time"))
            rec.metrics.run_time = m.at("run_time").get<double>();
        rec.metrics.ram_avg = m.at("ram_avg").get<double>();
        rec.metrics.ram_max = m.at("ram_max").get<double>();
        rec.metrics.disk_avg = m.at("disk_avg").get<double>();
        rec.metrics.disk_max = m.at("disk_max").get<double>();
        rec.metrics.over_budget = m.at("over_budget").get<bool>();
        if (!rec.aggregate) rec.log = TrainLog::from_json(j.at("log"));
        if (j.contains("config")) rec.config_echo = j.at("config");
        return rec;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed run record: ") + e.what());
    }
}

std::vector<RunRecord> run_experiment(const ExperimentSpec& spec, int jobs,
                                      const std::filesystem::path& work_dir) {
    spec.validate();
    if (jobs < 1) throw ConfigError("jobs must be at least 1");

    const std::vector<Track> tracks =
        spec.track == Track::all
            ? std::vector<Track>{Track::ni, Track::mtnc, Track::nic}
            : std::vector<Track>{spec.track};
    const json config_echo = spec.to_json();
    const std::filesystem::path scratch =
        work_dir.empty() ? std::filesystem::path(".") : work_dir;

    struct Task {
        std::uint64_t seed;
        Track track;
    };
    std::vector<Task> tasks;
    for (std::uint64_t seed : spec.seeds)
        for (Track t : tracks) tasks.push_back({seed, t});

    std::vector<RunRecord> results(tasks.size());
    std::vector<std::exception_ptr> errors(tasks.size());

    auto run_one = [&](std::size_t i) {
        const Task& task = tasks[i];
        try {
            const Stream stream = build_stream(spec, task.track, task.seed);
            StrategyConfig cfg = spec.strategy_config;
            cfg.seed = task.seed;
            RunLimits limits;
            limits.max_steps = spec.budget.max_steps;
            limits.max_wall_seconds = spec.budget.max_wall_seconds;
            limits.work_dir =
                scratch / (std::string("run_") + track_name(task.track) +
                           "_seed" + std::to_string(task.seed));
            RunRecord rec;
            rec.track = task.track;
            rec.strategy = spec.strategy;
            rec.seed = task.seed;
            rec.log = run_strategy(spec.strategy, stream, spec.model, cfg, limits);
            rec.metrics = metrics_from_log(rec.log);
            rec.config_echo = config_echo;
            results[i] = std::move(rec);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    const int workers = std::min<int>(jobs, static_cast<int>(tasks.size()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < tasks.size(); ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&]() {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= tasks.size()) return;
                    run_one(i);
                }
            });
        for (std::thread& th : pool) th.join();
    }
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);

    if (spec.track != Track::all) return results;

    // Interleave each seed's aggregate row after its three children.
    std::vector<RunRecord> with_aggregates;
    with_aggregates.reserve(results.size() + spec.seeds.size());
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
        const RunRecord* children[3] = {};
        for (std::size_t t = 0; t < 3; ++t) {
            const std::size_t i = s * 3 + t;
            with_aggregates.push_back(results[i]);
            children[t] = &with_aggregates.back();
        }
        const NamedMetrics a{"run", children[0]->metrics};
        const NamedMetrics b{"run", children[1]->metrics};
        const NamedMetrics c{"run", children[2]->metrics};
        const std::vector<NamedMetrics> agg = all_track_aggregate(
            std::span(&a, 1), std::span(&b, 1), std::span(&c, 1));
        RunRecord rec;
        rec.track = Track::all;
        rec.strategy = spec.strategy;
        rec.seed = spec.seeds[s];
        rec.aggregate = true;
        rec.metrics = agg[0].metrics;
        rec.config_echo = config_echo;
        with_aggregates.push_back(std::move(rec));
    }
    return with_aggregates;
}

void write_records(std::span<const RunRecord> records,
                   const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const RunRecord& rec : records) {
        const std::filesystem::path path = dir / rec.default_filename();
        std::ofstream f(path);
        if (!f) throw FormatError("cannot write record: " + path.string());
        f << rec.to_json().dump(2) << '\n';
    }
}

RunRecord read_record_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open record: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("record is not valid JSON: ") + e.what());
    }
    return RunRecord::from_json(j);
}

Scoreboard score_records(std::span<const RunRecord> records) {
    if (records.empty()) throw ConfigError("no records to score");
    const Track track = records[0].track;
    const bool aggregate = records[0].aggregate;
    Scoreboard board;
    for (const RunRecord& rec : records) {
        if (rec.track != track || rec.aggregate != aggregate)
            throw ConfigError(
                "records span different tracks; score one track at a time");
        board.add_row(std::string(strategy_name(rec.strategy)) + "_seed" +
                          std::to_string(rec.seed),
                      rec.metrics);
    }
    board.normalize();
    board.compute_scores();
    board.rank_rows();
    return board;
}

std::string run_series_csv(const RunRecord& record) {
    std::ostringstream out;
    out << "batch,val_acc,memory_items,memory_bytes,alignment_inner,"
           "alignment_cosine\n";
    if (record.aggregate) return out.str();
    std::map<int, const TrainLog::AlignmentRecord*> align;
    for (const auto& a : record.log.alignment) align[a.batch] = &a;
    const std::size_t n = record.log.val_acc.size();
    for (std::size_t b = 0; b < n; ++b) {
        out << b << ',' << record.log.val_acc[b] << ',';
        if (b < record.log.memory_items.size())
            out << record.log.memory_items[b];
        out << ',';
        if (b < record.log.memory_bytes.size())
            out << record.log.memory_bytes[b];
        out << ',';
        const auto it = align.find(static_cast<int>(b));
        if (it != align.end())
            out << it->second->inner << ',' << it->second->cosine;
        else
            out << ',';
        out << '\n';
    }
    return out.str();
}

json report_json(std::span<const RunRecord> records) {
    if (records.empty()) throw ConfigError("no records to report on");

    json runs = json::array();
    for (const RunRecord& rec : records) {
        json r;
        r["track"] = track_name(rec.track);
        r["strategy"] = strategy_name(rec.strategy);
        r["seed"] = rec.seed;
        r["aggregate"] = rec.aggregate;
        r["final_test_acc"] = rec.metrics.test_acc;
        r["val_acc_avg"] = rec.metrics.val_acc_avg;
        r["over_budget"] = rec.metrics.over_budget;
        if (!rec.aggregate) {
            r["val_acc"] = rec.log.val_acc;
            r["final_per_class_acc"] = rec.log.final_per_class_acc;
            r["final_per_task_acc"] = rec.log.final_per_task_acc;
            r["optimizer_steps"] = rec.log.optimizer_steps;
            // Per-task forgetting: peak validation accuracy over the run
            // minus the last value.
            if (!rec.log.val_task_acc.empty()) {
                const auto& last = rec.log.val_task_acc.back();
                json forgetting = json::array();
                for (std::size_t t = 0; t < last.size(); ++t) {
                    double peak = 0.0;
                    for (const auto& row : rec.log.val_task_acc)
                        if (t < row.size() && row[t] > peak) peak = row[t];
                    forgetting.push_back(peak - last[t]);
                }
                r["val_task_forgetting"] = forgetting;
            }
        }
        runs.push_back(std::move(r));
    }

    // Paired per-seed deltas of final test accuracy for every strategy
    // pair observed on the same (track, seed).
    std::map<std::pair<std::string, std::uint64_t>,
             std::map<std::string, double>>
        cell;
    for (const RunRecord& rec : records) {
        if (rec.aggregate) continue;
        cell[{track_name(rec.track), rec.seed}][strategy_name(rec.strategy)] =
            rec.metrics.test_acc;
    }
    json deltas = json::array();
    std::map<std::pair<std::string, std::string>,
             std::pair<double, int>>
        summary;  // (a>b pair keyed with track) -> (sum, n)
    std::map<std::string, std::map<std::pair<std::string, std::string>,
                                   std::pair<double, int>>>
        per_track_summary;
    for (const auto& [key, by_strategy] : cell) {
        const auto& [track, seed] = key;
        for (auto ita = by_strategy.begin(); ita != by_strategy.end(); ++ita)
            for (auto itb = std::next(ita); itb != by_strategy.end(); ++itb) {
                const double d = ita->second - itb->second;
                deltas.push_back({{"track", track},
                                  {"seed", seed},
                                  {"strategy_a", ita->first},
                                  {"strategy_b", itb->first},
                                  {"delta_test_acc", d}});
                auto& [sum, n] =
                    per_track_summary[track][{ita->first, itb->first}];
                sum += d;
                ++n;
            }
    }
    json summaries = json::array();
    for (const auto& [track, pairs] : per_track_summary)
        for (const auto& [pair, acc] : pairs)
            summaries.push_back({{"track", track},
                                 {"strategy_a", pair.first},
                                 {"strategy_b", pair.second},
                                 {"mean_delta_test_acc", acc.first / acc.second},
                                 {"paired_seeds", acc.second}});

    return json{{"runs", runs},
                {"paired_deltas", deltas},
                {"paired_summary", summaries}};
}

}  // namespace clb
