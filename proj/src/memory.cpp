#include "clb/memory.hpp"

#include <algorithm>
#include <numeric>
#include <utility>

#include "clb/errors.hpp"
#include "clb/stream_io.hpp"

namespace clb {

std::size_t items_bytes(std::span<const MemoryItem> items) {
    std::size_t n = 0;
    for (const MemoryItem& item : items) n += item_bytes(item);
    return n;
}

std::vector<MemoryItem> sample_items(std::span<const MemoryItem> pool,
                                     std::size_t k, Rng& rng,
                                     bool with_replacement) {
    std::vector<MemoryItem> out;
    if (k == 0 || pool.empty()) return out;  // consumes no randomness

    if (with_replacement) {
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i)
            out.push_back(pool[rng.index(pool.size())]);
        return out;
    }

    k = std::min(k, pool.size());
    // Partial Fisher-Yates over an index array: exactly k draws.
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + rng.index(idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(pool[idx[i]]);
    return out;
}

namespace {

// Uniformly keep `keep` of `n` positions, preserving original order.
std::vector<std::size_t> keeper_indices(std::size_t n, std::size_t keep,
                                        Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < keep; ++i) {
        std::size_t j = i + rng.index(idx.size() - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

ReservoirMemory::ReservoirMemory(std::size_t capacity) : capacity_(capacity) {}

void ReservoirMemory::update(MemoryItem item, Rng& rng) {
    ++seen_;
    if (capacity_ == 0) return;  // consumes no randomness
    if (items_.size() < capacity_) {
        items_.push_back(std::move(item));
        return;
    }
    const std::uint64_t j = rng.below(static_cast<std::uint64_t>(seen_));
    if (j < capacity_) items_[static_cast<std::size_t>(j)] = std::move(item);
}

GrowingMemory::GrowingMemory(std::size_t quota_per_batch)
    : quota_(quota_per_batch) {}

void GrowingMemory::update(std::span<const MemoryItem> batch, Rng& rng) {
    ++batches_seen_;
    const std::size_t k = std::min(quota_, batch.size());
    if (k == 0) return;  // consumes no randomness
    std::vector<MemoryItem> drawn = sample_items(batch, k, rng);
    for (MemoryItem& item : drawn) items_.push_back(std::move(item));
}

QuotaMemory::QuotaMemory(std::size_t budget, Storage storage,
                         std::filesystem::path spill_path)
    : budget_(budget), storage_(storage), spill_path_(std::move(spill_path)) {
    if (storage_ == Storage::disk && spill_path_.empty())
        throw ConfigError("disk-backed quota memory needs a spill path");
}

void QuotaMemory::rebalance_and_store(int task_id,
                                      std::span<const MemoryItem> task_samples,
                                      Rng& rng) {
    if (task_id != tasks_stored())
        throw ConfigError("task ids must arrive consecutively from 0");

    std::vector<std::vector<MemoryItem>> stores;
    if (storage_ == Storage::disk)
        load_from_disk(stores);
    else
        stores = std::move(stores_);

    const std::size_t quota = budget_ / static_cast<std::size_t>(task_id + 1);

    for (auto& store : stores) {
        if (store.size() <= quota) continue;
        std::vector<std::size_t> keep = keeper_indices(store.size(), quota, rng);
        std::vector<MemoryItem> next;
        next.reserve(keep.size());
        for (std::size_t i : keep) next.push_back(std::move(store[i]));
        store = std::move(next);
    }

    std::vector<MemoryItem> fresh;
    if (task_samples.size() <= quota) {
        fresh.assign(task_samples.begin(), task_samples.end());
    } else {
        std::vector<std::size_t> keep =
            keeper_indices(task_samples.size(), quota, rng);
        fresh.reserve(keep.size());
        for (std::size_t i : keep) fresh.push_back(task_samples[i]);
    }
    stores.push_back(std::move(fresh));

    counts_.clear();
    for (const auto& store : stores) counts_.push_back(store.size());

    if (storage_ == Storage::disk) {
        save_to_disk(stores);
    } else {
        stores_ = std::move(stores);
    }
}

std::vector<MemoryItem> QuotaMemory::task_items(int task_id) const {
    if (task_id < 0 || task_id >= tasks_stored())
        throw ConfigError("task id not stored");
    if (storage_ == Storage::ram)
        return stores_[static_cast<std::size_t>(task_id)];
    std::vector<std::vector<MemoryItem>> stores;
    load_from_disk(stores);
    return stores[static_cast<std::size_t>(task_id)];
}

std::vector<MemoryItem> QuotaMemory::all_items() const {
    std::vector<MemoryItem> out;
    if (storage_ == Storage::ram) {
        for (const auto& store : stores_)
            out.insert(out.end(), store.begin(), store.end());
        return out;
    }
    std::vector<std::vector<MemoryItem>> stores;
    load_from_disk(stores);
    for (const auto& store : stores)
        out.insert(out.end(), store.begin(), store.end());
    return out;
}

std::vector<std::size_t> QuotaMemory::task_counts() const { return counts_; }

std::size_t QuotaMemory::total_items() const {
    std::size_t n = 0;
    for (std::size_t c : counts_) n += c;
    return n;
}

std::size_t QuotaMemory::size_bytes() const {
    if (storage_ == Storage::disk) return 0;
    std::size_t n = 0;
    for (const auto& store : stores_) n += items_bytes(store);
    return n;
}

std::size_t QuotaMemory::disk_bytes() const {
    if (storage_ == Storage::ram) return 0;
    std::error_code ec;
    const auto n = std::filesystem::file_size(spill_path_, ec);
    return ec ? 0 : static_cast<std::size_t>(n);
}

void QuotaMemory::save_to_disk(
    const std::vector<std::vector<MemoryItem>>& stores) {
    ByteWriter w;
    write_container_header(w, ContainerKind::memory);
    w.u32(static_cast<std::uint32_t>(stores.size()));
    for (const auto& store : stores) {
        w.u32(static_cast<std::uint32_t>(store.size()));
        for (const MemoryItem& item : store) {
            w.i32(item.label);
            w.i32(item.session);
            w.i32(item.task);
            w.u32(static_cast<std::uint32_t>(item.features.size()));
            for (double v : item.features) w.f64(v);
        }
    }
    write_file(spill_path_, w.bytes());
}

void QuotaMemory::load_from_disk(
    std::vector<std::vector<MemoryItem>>& stores) const {
    stores.clear();
    if (counts_.empty()) return;  // nothing spilled yet
    const auto bytes = read_file(spill_path_);
    ByteReader r(bytes);
    read_container_header(r, ContainerKind::memory);
    const std::uint32_t n_stores = r.u32();
    r.require_payload(n_stores, 4);
    stores.resize(n_stores);
    for (auto& store : stores) {
        const std::uint32_t n_items = r.u32();
        r.require_payload(n_items, 16);
        store.reserve(n_items);
        for (std::uint32_t i = 0; i < n_items; ++i) {
            MemoryItem item;
            item.label = r.i32();
            item.session = r.i32();
            item.task = r.i32();
            const std::uint32_t dim = r.u32();
            r.require_payload(dim, 8);
            item.features.resize(dim);
            for (double& v : item.features) v = r.f64();
            store.push_back(std::move(item));
        }
    }
    if (!r.done()) throw FormatError("trailing bytes after memory payload");
}

}  // namespace clb
