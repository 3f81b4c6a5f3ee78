#include "clb/scoreboard.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "clb/errors.hpp"

namespace clb {

void RunMetrics::validate() const {
    const double vals[] = {test_acc, val_acc_avg, run_time, ram_avg,
                           ram_max,  disk_avg,    disk_max};
    for (double v : vals)
        if (!std::isfinite(v)) throw ConfigError("non-finite metric value");
    if (test_acc < 0.0 || test_acc > 1.0 || val_acc_avg < 0.0 ||
        val_acc_avg > 1.0)
        throw ConfigError("accuracies must lie in [0, 1]");
    if (run_time < 0.0 || ram_avg < 0.0 || ram_max < 0.0 || disk_avg < 0.0 ||
        disk_max < 0.0)
        throw ConfigError("time and resource metrics must be non-negative");
}

void Scoreboard::add_row(std::string name, const RunMetrics& metrics,
                         double published) {
    metrics.validate();
    ScoreRow row;
    row.name = std::move(name);
    row.raw = metrics;
    row.published = published;
    rows_.push_back(std::move(row));
}

namespace {

using Getter = double RunMetrics::*;
using Setter = double ScoreRow::*;

// benefit: higher raw is better; cost: lower raw is better.
struct Column {
    Getter raw;
    Setter norm;
    bool benefit;
};

constexpr Column columns[] = {
    {&RunMetrics::test_acc, &ScoreRow::n_test, true},
    {&RunMetrics::val_acc_avg, &ScoreRow::n_val, true},
    {&RunMetrics::run_time, &ScoreRow::n_time, false},
    {&RunMetrics::ram_avg, &ScoreRow::n_ram_avg, false},
    {&RunMetrics::ram_max, &ScoreRow::n_ram_max, false},
    {&RunMetrics::disk_avg, &ScoreRow::n_disk_avg, false},
    {&RunMetrics::disk_max, &ScoreRow::n_disk_max, false},
};

}  // namespace

void Scoreboard::normalize() {
    if (rows_.empty()) throw ConfigError("cannot normalize an empty board");
    for (const Column& col : columns) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const ScoreRow& r : rows_) {
            lo = std::min(lo, r.raw.*col.raw);
            hi = std::max(hi, r.raw.*col.raw);
        }
        for (ScoreRow& r : rows_) {
            double n;
            if (hi == lo) {
                n = 1.0;  // no spread: every row takes the best value
            } else {
                n = (r.raw.*col.raw - lo) / (hi - lo);
                if (!col.benefit) n = 1.0 - n;
            }
            r.*col.norm = n;
        }
    }
    // Budget violations take the worst possible time score.
    for (ScoreRow& r : rows_)
        if (r.raw.over_budget) r.n_time = 0.0;
}

void Scoreboard::compute_scores(const ScoreWeights& w) {
    for (ScoreRow& r : rows_) {
        r.cl_score = w.test * r.n_test + w.val * r.n_val + w.time * r.n_time +
                     w.ram * 0.5 * (r.n_ram_avg + r.n_ram_max) +
                     w.disk * 0.5 * (r.n_disk_avg + r.n_disk_max);
    }
}

void Scoreboard::rank_rows() {
    std::vector<std::size_t> order(rows_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
        const ScoreRow& ra = rows_[a];
        const ScoreRow& rb = rows_[b];
        if (ra.cl_score != rb.cl_score) return ra.cl_score > rb.cl_score;
        if (ra.raw.test_acc != rb.raw.test_acc)
            return ra.raw.test_acc > rb.raw.test_acc;
        return ra.name < rb.name;
    });
    for (std::size_t pos = 0; pos < order.size(); ++pos)
        rows_[order[pos]].rank = static_cast<int>(pos + 1);
}

const ScoreRow& Scoreboard::row(std::string_view name) const {
    for (const ScoreRow& r : rows_)
        if (r.name == name) return r;
    throw ConfigError("no row named " + std::string(name));
}

nlohmann::json Scoreboard::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const ScoreRow& r : rows_) {
        nlohmann::json j;
        j["name"] = r.name;
        j["raw"] = {{"test_acc", r.raw.test_acc},
                    {"val_acc_avg", r.raw.val_acc_avg},
                    {"run_time", r.raw.run_time},
                    {"ram_avg", r.raw.ram_avg},
                    {"ram_max", r.raw.ram_max},
                    {"disk_avg", r.raw.disk_avg},
                    {"disk_max", r.raw.disk_max},
                    {"over_budget", r.raw.over_budget}};
        j["normalized"] = {{"test_acc", r.n_test},
                           {"val_acc_avg", r.n_val},
                           {"run_time", r.n_time},
                           {"ram_avg", r.n_ram_avg},
                           {"ram_max", r.n_ram_max},
                           {"disk_avg", r.n_disk_avg},
                           {"disk_max", r.n_disk_max}};
        j["cl_score"] = r.cl_score;
        j["rank"] = r.rank;
        if (!std::isnan(r.published)) j["published"] = r.published;
        rows.push_back(std::move(j));
    }
    return nlohmann::json{{"rows", rows}};
}

std::string Scoreboard::to_csv() const {
    std::ostringstream out;
    out << "rank,team,cl_score,test_acc,val_acc_avg,run_time,ram_avg,ram_max,"
           "disk_avg,disk_max\n";
    std::vector<const ScoreRow*> by_rank;
    by_rank.reserve(rows_.size());
    for (const ScoreRow& r : rows_) by_rank.push_back(&r);
    std::sort(by_rank.begin(), by_rank.end(),
              [](const ScoreRow* a, const ScoreRow* b) {
                  return a->rank < b->rank;
              });
    char buf[64];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return std::string(buf);
    };
    for (const ScoreRow* r : by_rank) {
        out << r->rank << ',' << r->name << ',' << num(r->cl_score) << ','
            << num(r->raw.test_acc) << ',' << num(r->raw.val_acc_avg) << ','
            << num(r->raw.run_time) << ',' << num(r->raw.ram_avg) << ','
            << num(r->raw.ram_max) << ',' << num(r->raw.disk_avg) << ','
            << num(r->raw.disk_max) << '\n';
    }
    return out.str();
}

std::vector<NamedMetrics> all_track_aggregate(
    std::span<const NamedMetrics> ni, std::span<const NamedMetrics> mtnc,
    std::span<const NamedMetrics> nic) {
    auto index = [](std::span<const NamedMetrics> rows) {
        std::map<std::string, const RunMetrics*> m;
        for (const NamedMetrics& r : rows) m[r.name] = &r.metrics;
        return m;
    };
    const auto m_mtnc = index(mtnc);
    const auto m_nic = index(nic);

    std::vector<NamedMetrics> out;
    out.reserve(ni.size());
    for (const NamedMetrics& row : ni) {
        auto it1 = m_mtnc.find(row.name);
        auto it2 = m_nic.find(row.name);
        if (it1 == m_mtnc.end() || it2 == m_nic.end())
            throw ConfigError("team missing from one of the three tracks: " +
                              row.name);
        const RunMetrics& a = row.metrics;
        const RunMetrics& b = *it1->second;
        const RunMetrics& c = *it2->second;
        RunMetrics mean;
        mean.test_acc = (a.test_acc + b.test_acc + c.test_acc) / 3.0;
        mean.val_acc_avg = (a.val_acc_avg + b.val_acc_avg + c.val_acc_avg) / 3.0;
        mean.run_time = (a.run_time + b.run_time + c.run_time) / 3.0;
        mean.ram_avg = (a.ram_avg + b.ram_avg + c.ram_avg) / 3.0;
        mean.ram_max = (a.ram_max + b.ram_max + c.ram_max) / 3.0;
        mean.disk_avg = (a.disk_avg + b.disk_avg + c.disk_avg) / 3.0;
        mean.disk_max = (a.disk_max + b.disk_max + c.disk_max) / 3.0;
        mean.over_budget = a.over_budget || b.over_budget || c.over_budget;
        out.push_back({row.name, mean});
    }
    return out;
}

namespace {

// Ascending average ranks, 1-based; ties share the mean position.
std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ConfigError("rank correlation needs equal-length inputs");
    if (a.size() < 2)
        throw ConfigError("rank correlation needs at least two points");
    const std::vector<double> ra = average_ranks(a);
    const std::vector<double> rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0)
        throw ConfigError("rank correlation undefined for constant input");
    return cov / std::sqrt(va * vb);
}

double avg_val_accuracy(const TrainLog& log) {
    if (log.val_acc.empty())
        throw ConfigError("run recorded no validation accuracies");
    double sum = 0.0;
    for (double v : log.val_acc) sum += v;
    return sum / static_cast<double>(log.val_acc.size());
}

RunMetrics metrics_from_log(const TrainLog& log) {
    RunMetrics m;
    m.test_acc = log.final_test_acc;
    // A run aborted before its first validation point scores the worst
    // possible validation accuracy instead of failing.
    m.val_acc_avg = (log.val_acc.empty() && log.over_budget)
                        ? 0.0
                        : avg_val_accuracy(log);
    m.run_time = log.wall_seconds / 60.0;
    // Rebuild averages from the logged snapshots.
    double ram_sum = 0, disk_sum = 0, ram_max = 0, disk_max = 0;
    for (const auto& s : log.snapshots) {
        const double ram = ResourceMeter::to_mb(s.ram_bytes);
        const double disk = ResourceMeter::to_mb(s.disk_bytes);
        ram_sum += ram;
        disk_sum += disk;
        ram_max = std::max(ram_max, ram);
        disk_max = std::max(disk_max, disk);
    }
    if (!log.snapshots.empty()) {
        m.ram_avg = ram_sum / static_cast<double>(log.snapshots.size());
        m.disk_avg = disk_sum / static_cast<double>(log.snapshots.size());
    }
    m.ram_max = ram_max;
    m.disk_max = disk_max;
    m.over_budget = log.over_budget;
    return m;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_num(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError("bad number '" + s + "' in " + context);
    }
}

}  // namespace

std::vector<FixtureRow> load_fixture_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open fixture: " + path.string());
    std::string line;
    if (!std::getline(f, line))
        throw FormatError("empty fixture: " + path.string());
    const std::string expected =
        "team,test_acc,val_acc_avg,run_time,ram_avg,ram_max,disk_avg,"
        "disk_max,published_score";
    {
        std::string header = line;
        if (!header.empty() && header.back() == '\r') header.pop_back();
        if (header != expected)
            throw FormatError("unexpected fixture header in " + path.string());
    }
    std::vector<FixtureRow> rows;
    while (std::getline(f, line)) {
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 9)
            throw FormatError("fixture row needs 9 fields: " + line);
        FixtureRow row;
        row.team = fields[0];
        row.metrics.test_acc = parse_num(fields[1], row.team);
        row.metrics.val_acc_avg = parse_num(fields[2], row.team);
        row.metrics.run_time = parse_num(fields[3], row.team);
        row.metrics.ram_avg = parse_num(fields[4], row.team);
        row.metrics.ram_max = parse_num(fields[5], row.team);
        row.metrics.disk_avg = parse_num(fields[6], row.team);
        row.metrics.disk_max = parse_num(fields[7], row.team);
        row.published = parse_num(fields[8], row.team);
        rows.push_back(std::move(row));
    }
    if (rows.empty())
        throw FormatError("fixture has no data rows: " + path.string());
    return rows;
}

Scoreboard scoreboard_from_fixture(std::span<const FixtureRow> rows) {
    Scoreboard board;
    for (const FixtureRow& r : rows) board.add_row(r.team, r.metrics, r.published);
    board.normalize();
    board.compute_scores();
    board.rank_rows();
    return board;
}

}  // namespace clb
