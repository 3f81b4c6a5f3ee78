// Command line front end: run experiments, score record sets or
// reference CSVs, emit reports, and dump generated streams.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clb/errors.hpp"
#include "clb/harness.hpp"
#include "clb/hash.hpp"
#include "clb/scoreboard.hpp"
#include "clb/stream_io.hpp"
#include "clb/streamgen.hpp"

namespace {

// 0 ok, 2 bad configuration or protocol misuse, 3 bad file format,
// 4 finished but over budget, 5 numerical failure, 1 anything else.
constexpr int exit_ok = 0;
constexpr int exit_other = 1;
constexpr int exit_config = 2;
constexpr int exit_format = 3;
constexpr int exit_over_budget = 4;
constexpr int exit_numeric = 5;

void print_board(const clb::Scoreboard& board, std::ostream& os) {
    os << "rank  score   test    val     time    ram_max  disk_max  name\n";
    for (const clb::ScoreRow& row : board.rows()) {
        char line[256];
        std::snprintf(line, sizeof line,
                      "%-5d %-7.4f %-7.4f %-7.4f %-7.2f %-8.1f %-9.1f %s",
                      row.rank, row.cl_score, row.raw.test_acc,
                      row.raw.val_acc_avg, row.raw.run_time, row.raw.ram_max,
                      row.raw.disk_max, row.name.c_str());
        os << line << '\n';
    }
}

int cmd_run(const std::string& spec_path, bool desk, int jobs,
            const std::string& out_dir) {
    clb::ExperimentSpec spec;
    if (!spec_path.empty()) spec = clb::ExperimentSpec::load_file(spec_path);
    if (desk) spec.apply_desk_preset();
    if (const char* env = std::getenv("CLB_SEED")) {
        spec.seeds = {std::strtoull(env, nullptr, 10)};
    }
    const std::filesystem::path out =
        out_dir.empty() ? std::filesystem::path("records")
                        : std::filesystem::path(out_dir);
    const std::vector<clb::RunRecord> records =
        clb::run_experiment(spec, jobs, out / "scratch");
    clb::write_records(records, out);
    bool over = false;
    for (const clb::RunRecord& rec : records) {
        std::cout << rec.default_filename() << "  test_acc="
                  << rec.metrics.test_acc
                  << (rec.metrics.over_budget ? "  OVER BUDGET" : "") << '\n';
        over = over || rec.metrics.over_budget;
    }
    return over ? exit_over_budget : exit_ok;
}

int cmd_score(const std::string& fixture, const std::vector<std::string>& files,
              const std::string& out_base) {
    if (fixture.empty() == files.empty())
        throw clb::ConfigError(
            "score needs either --fixture or a list of record files");
    clb::Scoreboard board;
    if (!fixture.empty()) {
        const auto rows = clb::load_fixture_csv(fixture);
        board = clb::scoreboard_from_fixture(rows);
    } else {
        std::vector<clb::RunRecord> records;
        records.reserve(files.size());
        for (const std::string& f : files)
            records.push_back(clb::read_record_file(f));
        board = clb::score_records(records);
    }
    print_board(board, std::cout);
    if (!out_base.empty()) {
        std::ofstream js(out_base + ".json");
        js << board.to_json().dump(2) << '\n';
        std::ofstream cs(out_base + ".csv");
        cs << board.to_csv();
        if (!js || !cs)
            throw clb::FormatError("cannot write scoreboard to " + out_base);
    }
    return exit_ok;
}

int cmd_report(const std::vector<std::string>& files,
               const std::string& out_dir) {
    std::vector<clb::RunRecord> records;
    records.reserve(files.size());
    for (const std::string& f : files)
        records.push_back(clb::read_record_file(f));
    const nlohmann::json rep = clb::report_json(records);
    if (out_dir.empty()) {
        std::cout << rep.dump(2) << '\n';
        return exit_ok;
    }
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    {
        std::ofstream f(dir / "report.json");
        if (!f) throw clb::FormatError("cannot write report.json");
        f << rep.dump(2) << '\n';
    }
    for (const clb::RunRecord& rec : records) {
        if (rec.aggregate) continue;
        std::string name = rec.default_filename();
        name.replace(name.size() - 5, 5, "_series.csv");
        std::ofstream f(dir / name);
        if (!f) throw clb::FormatError("cannot write " + name);
        f << clb::run_series_csv(rec);
    }
    std::cout << "report written to " << out_dir << '\n';
    return exit_ok;
}

int cmd_gen_stream(const std::string& protocol, const std::string& out_path,
                   bool desk, std::uint64_t seed, int first, int later) {
    clb::ExperimentSpec spec;
    if (desk) spec.apply_desk_preset();
    if (first > 0) {
        spec.mtnc_first_classes = first;
        spec.nic_first_classes = first;
    }
    if (later > 0) spec.mtnc_later_classes = later;
    spec.track = clb::track_from_name(protocol);
    if (spec.track == clb::Track::all)
        throw clb::ConfigError("gen-stream needs one concrete protocol");
    const clb::Stream stream = clb::build_stream(spec, spec.track, seed);
    clb::write_stream_file(stream, out_path);
    std::cout << protocol << ": " << stream.batches().size() << " batches, "
              << stream.test_set().size() << " test examples, hash "
              << clb::hex_u64(stream.content_hash()) << '\n';
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual learning benchmark engine"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, out_base, fixture, protocol = "ni";
    std::string stream_out = "stream.clb";
    std::vector<std::string> record_files;
    bool desk = false;
    int jobs = 1, first = 0, later = 0;
    std::uint64_t seed = 1;

    CLI::App* run = app.add_subcommand("run", "run an experiment spec");
    run->add_option("--spec", spec_path, "experiment spec JSON");
    run->add_flag("--desk", desk, "apply the small-world preset");
    run->add_option("--jobs", jobs, "worker threads");
    run->add_option("--out", out_dir, "output directory (default records/)");

    CLI::App* score = app.add_subcommand("score", "build a leaderboard");
    score->add_option("--fixture", fixture, "reference leaderboard CSV");
    score->add_option("--out", out_base, "basename for .json/.csv output");
    score->add_option("records", record_files, "run record JSON files");

    CLI::App* report = app.add_subcommand("report", "summarize run records");
    report->add_option("--out", out_dir, "output directory");
    report->add_option("records", record_files, "run record JSON files")
        ->required();

    CLI::App* gen = app.add_subcommand("gen-stream", "write a stream file");
    gen->add_option("--protocol", protocol, "ni, mtnc or nic");
    gen->add_option("--out", stream_out, "output path");
    gen->add_flag("--desk", desk, "apply the small-world preset");
    gen->add_option("--seed", seed, "world seed");
    gen->add_option("--first", first, "classes in the opening batch");
    gen->add_option("--later", later, "classes per later task (mtnc)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(spec_path, desk, jobs, out_dir);
        if (score->parsed()) return cmd_score(fixture, record_files, out_base);
        if (report->parsed()) return cmd_report(record_files, out_dir);
        if (gen->parsed())
            return cmd_gen_stream(protocol, stream_out, desk, seed, first,
                                  later);
    } catch (const clb::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    } catch (const clb::ProtocolError& e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return exit_config;
    } catch (const clb::FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return exit_format;
    } catch (const clb::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_other;
    }
    return exit_other;
}
