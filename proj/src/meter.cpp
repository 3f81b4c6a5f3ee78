#include "clb/meter.hpp"

#include <fstream>
#include <string>

namespace clb {

namespace {

double avg_of(const std::vector<ResourceMeter::Snapshot>& snaps,
              std::uint64_t ResourceMeter::Snapshot::* field) {
    if (snaps.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& s : snaps) sum += ResourceMeter::to_mb(s.*field);
    return sum / static_cast<double>(snaps.size());
}

double max_of(const std::vector<ResourceMeter::Snapshot>& snaps,
              std::uint64_t ResourceMeter::Snapshot::* field) {
    double best = 0.0;
    for (const auto& s : snaps) {
        const double v = ResourceMeter::to_mb(s.*field);
        if (v > best) best = v;
    }
    return best;
}

}  // namespace

double ResourceMeter::ram_avg_mb() const {
    return avg_of(snapshots_, &Snapshot::ram_bytes);
}

double ResourceMeter::ram_max_mb() const {
    return max_of(snapshots_, &Snapshot::ram_bytes);
}

double ResourceMeter::disk_avg_mb() const {
    return avg_of(snapshots_, &Snapshot::disk_bytes);
}

double ResourceMeter::disk_max_mb() const {
    return max_of(snapshots_, &Snapshot::disk_bytes);
}

double ResourceMeter::measured_rss_mb() {
    std::ifstream f("/proc/self/status");
    std::string line;
    while (std::getline(f, line)) {
        if (line.rfind("VmRSS:", 0) == 0) {
            // Format: "VmRSS:    12345 kB"
            std::size_t pos = line.find_first_of("0123456789");
            if (pos == std::string::npos) return 0.0;
            return std::stod(line.substr(pos)) / 1024.0;
        }
    }
    return 0.0;
}

}  // namespace clb
