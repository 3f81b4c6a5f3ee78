#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace clb {

// Deterministic resource accounting. RAM per snapshot is the sum of
// model parameter bytes, the peak activation bytes seen so far, and the
// rehearsal storage held in RAM at snapshot time; disk is whatever the
// strategy has spilled. Strategies snapshot once per training epoch.
// Reported figures are MB (1 MB = 1024 * 1024 bytes).
class ResourceMeter {
  public:
    struct Snapshot {
        std::uint64_t ram_bytes = 0;
        std::uint64_t disk_bytes = 0;
    };

    void set_param_bytes(std::size_t n) { param_bytes_ = n; }
    void note_activation_bytes(std::size_t n) {
        if (n > peak_activation_bytes_) peak_activation_bytes_ = n;
    }

    void snapshot(std::size_t memory_bytes, std::size_t disk_bytes) {
        snapshots_.push_back(
            {param_bytes_ + peak_activation_bytes_ + memory_bytes, disk_bytes});
    }

    const std::vector<Snapshot>& snapshots() const { return snapshots_; }
    std::size_t param_bytes() const { return param_bytes_; }
    std::size_t peak_activation_bytes() const { return peak_activation_bytes_; }

    double ram_avg_mb() const;
    double ram_max_mb() const;
    double disk_avg_mb() const;
    double disk_max_mb() const;

    static double to_mb(std::uint64_t bytes) {
        return static_cast<double>(bytes) / (1024.0 * 1024.0);
    }

    // Current process resident set size, for side-by-side reporting only;
    // never part of scoring or determinism checks. Returns 0 if the
    // platform does not expose it.
    static double measured_rss_mb();

  private:
    std::size_t param_bytes_ = 0;
    std::size_t peak_activation_bytes_ = 0;
    std::vector<Snapshot> snapshots_;
};

}  // namespace clb
