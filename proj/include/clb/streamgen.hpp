#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace clb {

enum class Protocol { ni, mtnc, nic };

const char* protocol_name(Protocol p);
Protocol protocol_from_name(std::string_view name);  // throws ConfigError

// Parameters of the synthetic object-recognition world. Classes are
// grouped into categories sharing a category mean; each class has its
// own prototype near that mean; each session applies a fixed smooth
// transform (a few plane rotations plus a shift) to everything recorded
// in it, standing in for changes of background and pose.
struct WorldConfig {
    int n_classes = 50;
    int n_categories = 10;
    int n_sessions = 11;
    int n_train_sessions = 8;
    int feature_dim = 64;
    int examples_per_class_session = 300;
    double category_spread = 3.0;
    double class_spread = 1.0;
    double session_shift_scale = 0.35;
    int session_rotations = 3;
    double noise_scale = 0.7;
    std::uint64_t seed = 1;

    int test_sessions() const { return n_sessions - n_train_sessions; }
    void validate() const;  // throws ConfigError
};

// Rigid per-session transform: rotations applied in order, then shift.
struct SessionTransform {
    struct PlaneRotation {
        int i = 0;
        int j = 1;
        double angle = 0.0;
    };
    std::vector<PlaneRotation> rotations;
    std::vector<double> shift;

    void apply(std::vector<double>& x) const;
};

struct World {
    WorldConfig config;
    std::vector<std::vector<double>> category_means;    // K x d
    std::vector<std::vector<double>> class_prototypes;  // C x d
    std::vector<SessionTransform> session_transforms;   // S

    int category_of(int cls) const {
        return cls / (config.n_classes / config.n_categories);
    }
};

// One labelled feature vector. `session` is the recording session it was
// generated in; `task` is -1 unless the protocol provides task labels.
struct Example {
    std::vector<float> features;
    std::int32_t label = 0;
    std::int32_t session = 0;
    std::int32_t task = -1;
};

struct Batch {
    std::vector<Example> examples;
    std::int32_t task = -1;  // -1 when the protocol has no task labels
};

// An ordered training stream plus the shared held-out test set. Immutable
// after construction; content_hash() walks every payload byte on each
// call, so hashing before and after a run proves the run did not touch
// the data.
class Stream {
  public:
    Stream(Protocol protocol, std::vector<Batch> batches,
           std::vector<Example> test_set, std::uint64_t world_seed,
           int feature_dim, int n_classes, int n_sessions);

    Protocol protocol() const { return protocol_; }
    const std::vector<Batch>& batches() const { return batches_; }
    const std::vector<Example>& test_set() const { return test_set_; }
    std::uint64_t world_seed() const { return world_seed_; }
    int feature_dim() const { return feature_dim_; }
    int n_classes() const { return n_classes_; }
    int n_sessions() const { return n_sessions_; }
    std::uint64_t content_hash() const;

  private:
    Protocol protocol_;
    std::vector<Batch> batches_;
    std::vector<Example> test_set_;
    std::uint64_t world_seed_ = 0;
    int feature_dim_ = 0;
    int n_classes_ = 0;
    int n_sessions_ = 0;
};

// Draws category means, class prototypes and session transforms. Pure
// function of the config (including its seed).
World generate_world(const WorldConfig& config);

// New-instances stream: one batch per training session, every class in
// every batch. Batch count = n_train_sessions.
Stream make_ni_stream(const World& world);

// Multi-task new-classes stream: disjoint class groups, one task per
// batch, task labels present on every example and at test time. The
// first task takes `first_task_classes` classes, later tasks
// `later_task_classes` each; the split must cover n_classes exactly.
Stream make_mtnc_stream(const World& world, int first_task_classes = 10,
                        int later_task_classes = 5);

// New-instances-and-classes stream: the first batch aggregates one
// session of each of `first_batch_classes` classes; every remaining
// (class, session) pair becomes its own single-class batch, in an order
// drawn once from the world seed. Batch count =
// n_classes * n_train_sessions - first_batch_classes + 1.
Stream make_nic_stream(const World& world, int first_batch_classes = 10);

// Held-out pool: all examples from the test sessions (the sessions after
// the first n_train_sessions). Identical across protocols of one world.
std::vector<Example> make_test_set(const World& world);

}  // namespace clb
