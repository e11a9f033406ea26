#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "slomo/matrix.hpp"
#include "slomo/network.hpp"
#include "slomo/rng.hpp"

namespace slomo {

struct LabeledBatch {
  Matrix x;
  std::vector<std::size_t> labels;
};

struct TaskOptions {
  std::size_t num_classes = 10;
  std::size_t input_dim = 32;
  std::size_t n_train = 4000;
  std::size_t n_eval = 640;  // clean pool size; every domain corrupts this pool
  double mean_radius = 4.0;
  double base_noise = 1.0;
  double baseline = 0.5;  // per-coordinate offsets drawn from U(0, 2 * baseline)
  std::uint64_t seed = 0;
};

// Gaussian classes around means drawn uniformly on a sphere, shifted by a
// shared per-coordinate baseline. The clean eval pool uses a seed stream
// disjoint from the training set.
class SyntheticTask {
 public:
  explicit SyntheticTask(const TaskOptions& options);

  const TaskOptions& options() const { return options_; }
  const Matrix& class_means() const { return means_; }
  const Vector& baseline() const { return baseline_; }
  const LabeledBatch& train() const { return train_; }
  const LabeledBatch& clean_eval() const { return clean_eval_; }

  // Balanced labels (i mod C, shuffled), one draw per row.
  LabeledBatch sample(std::size_t n, std::uint64_t seed) const;

 private:
  TaskOptions options_;
  Matrix means_;
  Vector baseline_;
  LabeledBatch train_;
  LabeledBatch clean_eval_;
};

SyntheticTask make_task(const TaskOptions& options);

enum class CorruptionFamily { AdditiveNoise, Smooth, ContrastScale, Occlusion, Rotation };
inline constexpr std::size_t kFamilyCount = 5;

const char* to_string(CorruptionFamily family);
CorruptionFamily corruption_family_from_string(const std::string& name);

// Severity 1..5; severity 0 is the identity.
struct Corruption {
  CorruptionFamily family = CorruptionFamily::AdditiveNoise;
  int severity = 5;
  std::uint64_t seed = 0;  // fixes the domain's structural randomness (rotation planes)
};

// Per-row randomness (noise) is drawn from `rng`; the transform itself is a
// function of (family, severity, seed).
//   AdditiveNoise: x + N(0, (0.1 s)^2)
//   Smooth:        (1 - 0.15 s) x + 0.15 s * (moving average over 2s+1 coordinates)
//   ContrastScale: x * (1 - 0.15 s)
//   Occlusion:     central round(0.1 s * d) coordinates zeroed
//   Rotation:      disjoint random coordinate planes rotated by s * pi / 16
Matrix corrupt(const Matrix& batch, const Corruption& corruption, Rng& rng);

struct Domain {
  std::size_t id = 0;
  std::size_t group = 0;
  Corruption corruption;
  std::string name;
};

// One group per corruption family, `variants_per_group` seeded variants each.
std::vector<Domain> make_domains(std::uint64_t seed, std::size_t groups,
                                 std::size_t variants_per_group, int severity = 5);

// The clean eval pool corrupted by `corruption`; deterministic.
LabeledBatch domain_eval_set(const SyntheticTask& task, const Corruption& corruption);

struct SourceTraining {
  std::size_t epochs = 30;
  double lr = 0.05;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  double min_accuracy = 0.95;
};

// Mini-batch SGD with cross-entropy on the clean training set. Throws
// NumericError if clean eval accuracy stays below `min_accuracy`.
NetworkParams train_source(const SyntheticTask& task, const NetworkSpec& spec,
                           const SourceTraining& options);

// Fraction of correct argmax predictions in RunningStats mode.
double accuracy(const NetworkSpec& spec, const NetworkParams& params, const LabeledBatch& data);

struct DomainError {
  std::size_t domain_index = 0;  // position in the input list
  double error = 0.0;
};

// Source error per domain, stably sorted from lowest to highest.
std::vector<DomainError> rank_by_source_error(const SyntheticTask& task, const NetworkSpec& spec,
                                              const NetworkParams& source,
                                              std::span<const Domain> domains);

// ((t - 1) mod (K r)) mod K + 1
std::size_t cyclic_index(std::size_t t, std::size_t groups, std::size_t rate);

enum class Setting {
  Continual,
  Mixed,
  Gradual,
  Episodic,
  Cyclic,
  CrossGroup,
  Easy2Hard,
  Hard2Easy,
  MixedAfterContinual,
  ContinualAfterMixed,
};

const char* to_string(Setting setting);
Setting setting_from_string(const std::string& name);

enum class CyclicMode { Protocol, Dwell };

struct ScheduleOptions {
  Setting setting = Setting::Continual;
  std::size_t batch_size = 64;
  std::size_t cycles = 2;
  CyclicMode cyclic_mode = CyclicMode::Protocol;
  std::size_t dwell = 1;          // consecutive batches per group in Dwell mode
  std::size_t dwell_steps = 0;    // stream length in Dwell mode
  std::size_t gradual_batches_per_level = 2;
  std::uint64_t seed = 0;
};

// Index of one batch within a domain's eval set at a given severity.
struct EventKey {
  std::size_t domain = 0;  // position in the schedule's domain list
  int severity = 5;
  std::size_t batch = 0;
  bool reset = false;
  std::size_t cycle = 0;

  friend bool operator==(const EventKey&, const EventKey&) = default;
  friend auto operator<=>(const EventKey&, const EventKey&) = default;
};

struct StreamEvent {
  LabeledBatch batch;  // labels are for scoring only
  std::size_t domain_id = 0;
  std::size_t group = 0;
  int severity = 5;
  bool reset = false;
  std::size_t cycle = 0;
};

// A fully planned stream whose batches are materialized on demand. The plan
// is a deterministic function of (setting, domains, schedule seed); batch
// contents are a deterministic function of (task, domain, severity, batch).
class StreamSchedule {
 public:
  StreamSchedule(const SyntheticTask& task, std::vector<Domain> domains, ScheduleOptions options,
                 std::vector<std::size_t> difficulty_order = {});

  std::size_t size() const { return plan_.size(); }
  const std::vector<EventKey>& plan() const { return plan_; }
  const std::vector<Domain>& domains() const { return domains_; }
  const ScheduleOptions& options() const { return options_; }

  // Batches per domain at a severity (the final one may be short).
  std::size_t batches_per_domain() const;

  StreamEvent event(std::size_t index) const;
  // Next event in order, or nothing once the stream is exhausted.
  std::optional<StreamEvent> next();
  void rewind() { cursor_ = 0; }

  nlohmann::ordered_json describe() const;

 private:
  void build_plan(std::vector<std::size_t> difficulty_order);
  void append_pass(const std::vector<std::size_t>& order, bool resets, std::size_t cycle);
  void append_mixed(std::size_t cycle);
  const LabeledBatch& eval_set(std::size_t domain, int severity) const;

  const SyntheticTask* task_;
  std::vector<Domain> domains_;
  ScheduleOptions options_;
  std::vector<std::size_t> difficulty_order_;
  std::vector<EventKey> plan_;
  std::size_t cursor_ = 0;
  mutable std::map<std::pair<std::size_t, int>, LabeledBatch> eval_cache_;
};

}  // namespace slomo
