#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "clb/rng.hpp"

namespace clb {

// One stored rehearsal item. Features are kept in double precision (the
// training representation); byte accounting charges 8 bytes per feature
// plus 4 for the label.
struct MemoryItem {
    std::vector<double> features;
    std::int32_t label = 0;
    std::int32_t session = -1;
    std::int32_t task = -1;
};

inline std::size_t item_bytes(const MemoryItem& item) {
    return item.features.size() * sizeof(double) + sizeof(std::int32_t);
}

std::size_t items_bytes(std::span<const MemoryItem> items);

// Uniform sample of min(k, pool size) items without replacement. Order
// of the result follows the draw order. k == 0 or an empty pool returns
// empty without consuming randomness. with_replacement allows k beyond
// the pool size.
std::vector<MemoryItem> sample_items(std::span<const MemoryItem> pool,
                                     std::size_t k, Rng& rng,
                                     bool with_replacement = false);

// Classic reservoir: after t offered items every one of them is held
// with probability capacity / t.
class ReservoirMemory {
  public:
    explicit ReservoirMemory(std::size_t capacity);

    void update(MemoryItem item, Rng& rng);
    std::vector<MemoryItem> sample(std::size_t k, Rng& rng) const {
        return sample_items(items_, k, rng);
    }

    const std::vector<MemoryItem>& items() const { return items_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t seen() const { return seen_; }
    std::size_t size_bytes() const { return items_bytes(items_); }

  private:
    std::size_t capacity_ = 0;
    std::size_t seen_ = 0;
    std::vector<MemoryItem> items_;
};

// Unbounded store fed a fixed-size uniform draw from every batch.
class GrowingMemory {
  public:
    explicit GrowingMemory(std::size_t quota_per_batch);

    void update(std::span<const MemoryItem> batch, Rng& rng);
    std::vector<MemoryItem> sample(std::size_t k, Rng& rng) const {
        return sample_items(items_, k, rng);
    }

    const std::vector<MemoryItem>& items() const { return items_; }
    std::size_t quota_per_batch() const { return quota_; }
    std::size_t batches_seen() const { return batches_seen_; }
    std::size_t size_bytes() const { return items_bytes(items_); }

  private:
    std::size_t quota_ = 0;
    std::size_t batches_seen_ = 0;
    std::vector<MemoryItem> items_;
};

// Fixed total budget split evenly across tasks: after storing task i the
// per-task quota is floor(budget / (i+1)); earlier stores are
// downsampled to the new quota first. Leftover slots from the floor stay
// unused. Optionally spills the items to a single file and keeps only
// counts in RAM.
class QuotaMemory {
  public:
    enum class Storage { ram, disk };

    explicit QuotaMemory(std::size_t budget, Storage storage = Storage::ram,
                         std::filesystem::path spill_path = {});

    // task_id must equal the number of tasks stored so far.
    void rebalance_and_store(int task_id,
                             std::span<const MemoryItem> task_samples,
                             Rng& rng);

    std::vector<MemoryItem> task_items(int task_id) const;
    std::vector<MemoryItem> all_items() const;
    std::vector<std::size_t> task_counts() const;

    int tasks_stored() const { return static_cast<int>(counts_.size()); }
    std::size_t budget() const { return budget_; }
    std::size_t total_items() const;
    // RAM accounting: zero when spilled to disk.
    std::size_t size_bytes() const;
    std::size_t disk_bytes() const;

  private:
    void load_from_disk(std::vector<std::vector<MemoryItem>>& stores) const;
    void save_to_disk(const std::vector<std::vector<MemoryItem>>& stores);

    std::size_t budget_ = 0;
    Storage storage_ = Storage::ram;
    std::filesystem::path spill_path_;
    std::vector<std::vector<MemoryItem>> stores_;  // empty in disk mode
    std::vector<std::size_t> counts_;
};

}  // namespace clb
