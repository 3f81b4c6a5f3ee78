#include "clb/streamgen.hpp"

#include <cmath>
#include <utility>

#include "clb/errors.hpp"
#include "clb/hash.hpp"
#include "clb/rng.hpp"

namespace clb {

const char* protocol_name(Protocol p) {
    switch (p) {
        case Protocol::ni: return "ni";
        case Protocol::mtnc: return "mtnc";
        case Protocol::nic: return "nic";
    }
    return "?";
}

Protocol protocol_from_name(std::string_view name) {
    if (name == "ni") return Protocol::ni;
    if (name == "mtnc") return Protocol::mtnc;
    if (name == "nic") return Protocol::nic;
    throw ConfigError("unknown protocol name: " + std::string(name));
}

void WorldConfig::validate() const {
    if (n_classes < 1) throw ConfigError("n_classes must be positive");
    if (n_categories < 1 || n_categories > n_classes)
        throw ConfigError("n_categories must be in [1, n_classes]");
    if (n_classes % n_categories != 0)
        throw ConfigError("n_classes must be divisible by n_categories");
    if (n_sessions < 2) throw ConfigError("need at least 2 sessions");
    if (n_train_sessions < 1 || n_train_sessions >= n_sessions)
        throw ConfigError("n_train_sessions must leave at least 1 test session");
    if (feature_dim < 2) throw ConfigError("feature_dim must be at least 2");
    if (examples_per_class_session < 1)
        throw ConfigError("examples_per_class_session must be positive");
    if (category_spread < 0 || class_spread < 0 || session_shift_scale < 0 ||
        noise_scale < 0)
        throw ConfigError("spreads and noise scale must be non-negative");
    if (session_rotations < 0)
        throw ConfigError("session_rotations must be non-negative");
}

void SessionTransform::apply(std::vector<double>& x) const {
    for (const PlaneRotation& r : rotations) {
        const double c = std::cos(r.angle);
        const double s = std::sin(r.angle);
        const double xi = x[static_cast<std::size_t>(r.i)];
        const double xj = x[static_cast<std::size_t>(r.j)];
        x[static_cast<std::size_t>(r.i)] = xi * c - xj * s;
        x[static_cast<std::size_t>(r.j)] = xi * s + xj * c;
    }
    for (std::size_t k = 0; k < shift.size(); ++k) x[k] += shift[k];
}

World generate_world(const WorldConfig& config) {
    config.validate();
    World world;
    world.config = config;
    const int d = config.feature_dim;

    Rng rng(derive_seed(config.seed, rng_stream::world));

    world.category_means.resize(static_cast<std::size_t>(config.n_categories));
    for (auto& mean : world.category_means) {
        mean.resize(static_cast<std::size_t>(d));
        for (double& v : mean) v = rng.normal(0.0, config.category_spread);
    }

    world.class_prototypes.resize(static_cast<std::size_t>(config.n_classes));
    for (int c = 0; c < config.n_classes; ++c) {
        const auto& mean =
            world.category_means[static_cast<std::size_t>(world.category_of(c))];
        auto& proto = world.class_prototypes[static_cast<std::size_t>(c)];
        proto.resize(static_cast<std::size_t>(d));
        for (int k = 0; k < d; ++k)
            proto[static_cast<std::size_t>(k)] =
                mean[static_cast<std::size_t>(k)] +
                rng.normal(0.0, config.class_spread);
    }

    world.session_transforms.resize(static_cast<std::size_t>(config.n_sessions));
    for (auto& tf : world.session_transforms) {
        tf.rotations.resize(static_cast<std::size_t>(config.session_rotations));
        for (auto& rot : tf.rotations) {
            rot.i = static_cast<int>(rng.index(static_cast<std::size_t>(d)));
            do {
                rot.j = static_cast<int>(rng.index(static_cast<std::size_t>(d)));
            } while (rot.j == rot.i);
            rot.angle = rng.normal(0.0, config.session_shift_scale);
        }
        tf.shift.resize(static_cast<std::size_t>(d));
        for (double& v : tf.shift)
            v = rng.normal(0.0, config.session_shift_scale);
    }
    return world;
}

namespace {

// All examples of one (class, session) cell. Seeded independently of
// everything else, so every protocol sees byte-identical examples for
// the same world.
std::vector<Example> make_cell(const World& world, int cls, int session) {
    const WorldConfig& cfg = world.config;
    const int d = cfg.feature_dim;
    Rng rng(derive_seed(
        derive_seed(derive_seed(cfg.seed, rng_stream::examples),
                    static_cast<std::uint64_t>(cls)),
        static_cast<std::uint64_t>(session)));

    const auto& proto = world.class_prototypes[static_cast<std::size_t>(cls)];
    const auto& tf = world.session_transforms[static_cast<std::size_t>(session)];

    std::vector<Example> out;
    out.reserve(static_cast<std::size_t>(cfg.examples_per_class_session));
    std::vector<double> x(static_cast<std::size_t>(d));
    for (int n = 0; n < cfg.examples_per_class_session; ++n) {
        for (int k = 0; k < d; ++k)
            x[static_cast<std::size_t>(k)] =
                proto[static_cast<std::size_t>(k)] +
                rng.normal(0.0, cfg.noise_scale);
        tf.apply(x);
        Example ex;
        ex.features.resize(static_cast<std::size_t>(d));
        for (int k = 0; k < d; ++k)
            ex.features[static_cast<std::size_t>(k)] =
                static_cast<float>(x[static_cast<std::size_t>(k)]);
        ex.label = cls;
        ex.session = session;
        out.push_back(std::move(ex));
    }
    return out;
}

void append_cell(std::vector<Example>& dst, const World& world, int cls,
                 int session, int task = -1) {
    std::vector<Example> cell = make_cell(world, cls, session);
    for (Example& ex : cell) {
        ex.task = task;
        dst.push_back(std::move(ex));
    }
}

std::uint64_t hash_stream(Protocol protocol, const std::vector<Batch>& batches,
                          const std::vector<Example>& test_set,
                          std::uint64_t world_seed, int feature_dim,
                          int n_classes, int n_sessions) {
    Fnv1a64 h;
    h.update_u8(static_cast<std::uint8_t>(protocol));
    h.update_i32(feature_dim);
    h.update_i32(n_classes);
    h.update_i32(n_sessions);
    h.update_u64(world_seed);
    h.update_u32(static_cast<std::uint32_t>(batches.size()));
    auto hash_example = [&h](const Example& ex) {
        h.update_i32(ex.label);
        h.update_i32(ex.session);
        h.update_i32(ex.task);
        for (float f : ex.features) h.update_f32(f);
    };
    for (const Batch& b : batches) {
        h.update_i32(b.task);
        h.update_u32(static_cast<std::uint32_t>(b.examples.size()));
        for (const Example& ex : b.examples) hash_example(ex);
    }
    h.update_u32(static_cast<std::uint32_t>(test_set.size()));
    for (const Example& ex : test_set) hash_example(ex);
    return h.digest();
}

}  // namespace

Stream::Stream(Protocol protocol, std::vector<Batch> batches,
               std::vector<Example> test_set, std::uint64_t world_seed,
               int feature_dim, int n_classes, int n_sessions)
    : protocol_(protocol),
      batches_(std::move(batches)),
      test_set_(std::move(test_set)),
      world_seed_(world_seed),
      feature_dim_(feature_dim),
      n_classes_(n_classes),
      n_sessions_(n_sessions) {}

std::uint64_t Stream::content_hash() const {
    return hash_stream(protocol_, batches_, test_set_, world_seed_,
                       feature_dim_, n_classes_, n_sessions_);
}

std::vector<Example> make_test_set(const World& world) {
    const WorldConfig& cfg = world.config;
    std::vector<Example> out;
    out.reserve(static_cast<std::size_t>(cfg.test_sessions()) *
                static_cast<std::size_t>(cfg.n_classes) *
                static_cast<std::size_t>(cfg.examples_per_class_session));
    for (int s = cfg.n_train_sessions; s < cfg.n_sessions; ++s)
        for (int c = 0; c < cfg.n_classes; ++c) append_cell(out, world, c, s);
    return out;
}

Stream make_ni_stream(const World& world) {
    const WorldConfig& cfg = world.config;
    std::vector<Batch> batches;
    batches.reserve(static_cast<std::size_t>(cfg.n_train_sessions));
    for (int s = 0; s < cfg.n_train_sessions; ++s) {
        Batch b;
        for (int c = 0; c < cfg.n_classes; ++c)
            append_cell(b.examples, world, c, s);
        batches.push_back(std::move(b));
    }
    return Stream(Protocol::ni, std::move(batches), make_test_set(world),
                  cfg.seed, cfg.feature_dim, cfg.n_classes, cfg.n_sessions);
}

Stream make_mtnc_stream(const World& world, int first_task_classes,
                        int later_task_classes) {
    const WorldConfig& cfg = world.config;
    if (first_task_classes < 1 || first_task_classes > cfg.n_classes)
        throw ConfigError("first_task_classes out of range");
    const int rest = cfg.n_classes - first_task_classes;
    if (rest > 0 && (later_task_classes < 1 || rest % later_task_classes != 0))
        throw ConfigError(
            "later_task_classes must evenly split the remaining classes");
    const int n_tasks = 1 + (rest > 0 ? rest / later_task_classes : 0);

    std::vector<int> task_of_class(static_cast<std::size_t>(cfg.n_classes));
    for (int c = 0; c < cfg.n_classes; ++c)
        task_of_class[static_cast<std::size_t>(c)] =
            c < first_task_classes
                ? 0
                : 1 + (c - first_task_classes) / later_task_classes;

    std::vector<Batch> batches(static_cast<std::size_t>(n_tasks));
    for (int t = 0; t < n_tasks; ++t)
        batches[static_cast<std::size_t>(t)].task = t;
    for (int c = 0; c < cfg.n_classes; ++c) {
        const int t = task_of_class[static_cast<std::size_t>(c)];
        for (int s = 0; s < cfg.n_train_sessions; ++s)
            append_cell(batches[static_cast<std::size_t>(t)].examples, world, c,
                        s, t);
    }

    std::vector<Example> test_set = make_test_set(world);
    for (Example& ex : test_set)
        ex.task = task_of_class[static_cast<std::size_t>(ex.label)];

    return Stream(Protocol::mtnc, std::move(batches), std::move(test_set),
                  cfg.seed, cfg.feature_dim, cfg.n_classes, cfg.n_sessions);
}

Stream make_nic_stream(const World& world, int first_batch_classes) {
    const WorldConfig& cfg = world.config;
    if (first_batch_classes < 1 || first_batch_classes > cfg.n_classes)
        throw ConfigError("first_batch_classes out of range");

    std::vector<Batch> batches;
    Batch first;
    for (int c = 0; c < first_batch_classes; ++c)
        append_cell(first.examples, world, c, 0);
    batches.push_back(std::move(first));

    // Every remaining (class, session) cell becomes its own batch, in an
    // order fixed by the world seed.
    std::vector<std::pair<int, int>> cells;
    for (int c = 0; c < cfg.n_classes; ++c)
        for (int s = 0; s < cfg.n_train_sessions; ++s)
            if (!(c < first_batch_classes && s == 0)) cells.emplace_back(c, s);
    Rng order_rng(derive_seed(cfg.seed, rng_stream::order));
    order_rng.shuffle(cells);

    for (const auto& [c, s] : cells) {
        Batch b;
        append_cell(b.examples, world, c, s);
        batches.push_back(std::move(b));
    }

    return Stream(Protocol::nic, std::move(batches), make_test_set(world),
                  cfg.seed, cfg.feature_dim, cfg.n_classes, cfg.n_sessions);
}

}  // namespace clb
