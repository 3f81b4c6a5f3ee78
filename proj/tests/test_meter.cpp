#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "clb/memory.hpp"
#include "clb/meter.hpp"

using namespace clb;

TEST_CASE("ram snapshots sum parameters, peak activations and memory") {
    ResourceMeter m;
    m.set_param_bytes(1000);
    m.note_activation_bytes(2048);
    m.note_activation_bytes(512);  // below peak, ignored
    CHECK(m.peak_activation_bytes() == 2048);

    // 1000 stored items of 64 features: 1000 * (64*8 + 4) bytes.
    MemoryItem it;
    it.features.assign(64, 0.0);
    const std::vector<MemoryItem> items(1000, it);
    const std::size_t mem_bytes = items_bytes(items);
    CHECK(mem_bytes == 516000);

    m.snapshot(mem_bytes, 0);
    REQUIRE(m.snapshots().size() == 1);
    CHECK(m.snapshots()[0].ram_bytes == 1000 + 2048 + 516000);
    CHECK(m.snapshots()[0].disk_bytes == 0);
}

TEST_CASE("averages and maxima are over all snapshots") {
    ResourceMeter m;
    m.set_param_bytes(0);
    m.snapshot(1024 * 1024, 0);           // 1 MB ram
    m.snapshot(3 * 1024 * 1024, 1024 * 1024);  // 3 MB ram, 1 MB disk
    CHECK(m.ram_avg_mb() == doctest::Approx(2.0));
    CHECK(m.ram_max_mb() == doctest::Approx(3.0));
    CHECK(m.disk_avg_mb() == doctest::Approx(0.5));
    CHECK(m.disk_max_mb() == doctest::Approx(1.0));
}

TEST_CASE("mb conversion uses binary megabytes") {
    CHECK(ResourceMeter::to_mb(1048576) == 1.0);
    CHECK(ResourceMeter::to_mb(524288) == 0.5);
}

TEST_CASE("no snapshots means zero usage") {
    ResourceMeter m;
    CHECK(m.ram_avg_mb() == 0.0);
    CHECK(m.ram_max_mb() == 0.0);
    CHECK(m.disk_avg_mb() == 0.0);
    CHECK(m.disk_max_mb() == 0.0);
}

TEST_CASE("growing activation peak never decreases") {
    ResourceMeter m;
    m.note_activation_bytes(100);
    m.snapshot(0, 0);
    m.note_activation_bytes(50);
    m.snapshot(0, 0);
    CHECK(m.snapshots()[0].ram_bytes == 100);
    CHECK(m.snapshots()[1].ram_bytes == 100);
}

TEST_CASE("rss readout exists on linux and is harmless elsewhere") {
    // Report-only figure; just make sure the call cannot blow up and is
    // plausible when present.
    const double rss = ResourceMeter::measured_rss_mb();
    CHECK(rss >= 0.0);
    CHECK(rss < 1024.0 * 64);
}
