#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "slomo/matrix.hpp"

namespace slomo {

// Entropies below this are raised to it before storage so that inverse-entropy
// weights stay finite.
inline constexpr double kEntropyFloor = 1e-6;

struct QueueEntry {
  Vector feature;
  double entropy = 0.0;
  std::uint64_t sequence = 0;  // admission order, used for tie-breaking
};

enum class InsertOutcome { Inserted, ReplacedMaxEntropy, RejectedCriteria, RejectedFullHigherEntropy };

const char* to_string(InsertOutcome outcome);

struct StoreOptions {
  std::size_t num_classes = 10;
  std::size_t feature_dim = 0;
  std::size_t capacity = 10;         // K
  std::size_t evict_interval = 50;   // p
  double sigma = 0.5;                // entropy threshold
  double delta = 0.2;                // PLPD threshold
};

struct NearestPrototype {
  std::size_t label = 0;
  double similarity = 0.0;
};

// Per-class bounded priority queues of confident, stable features together
// with their inverse-entropy weighted prototypes.
//
// Each queue is ordered by (entropy, admission sequence), so the
// lowest-entropy entry (periodic eviction) and the highest-entropy entry
// (replacement) are both reachable in O(log K). On entropy ties the older
// entry is the one removed. Prototypes are recomputed for the touched class
// after every mutation, so const accessors never write.
class PrototypeStore {
 public:
  explicit PrototypeStore(const StoreOptions& options);

  InsertOutcome try_insert(std::size_t label, std::span<const double> feature, double entropy,
                           double plpd);

  // Advances the step counter; every `evict_interval` steps the
  // lowest-entropy entry of each non-empty queue is dropped. The result marks
  // the classes that lost an entry.
  std::vector<bool> tick();

  const std::optional<Vector>& prototype(std::size_t label) const;
  std::optional<NearestPrototype> nearest_prototype(std::span<const double> feature) const;

  std::size_t queue_size(std::size_t label) const;
  std::vector<std::size_t> queue_sizes() const;
  std::size_t total_size() const;
  bool has_any_prototype() const;
  // Entries of one class in ascending (entropy, age) order.
  std::vector<QueueEntry> entries(std::size_t label) const;

  std::uint64_t step_counter() const { return step_counter_; }
  const StoreOptions& options() const { return options_; }

  void clear();

  // {"options": {...}, "step": t, "classes": [[{"feature": [...], "entropy": h}, ...], ...]}
  nlohmann::ordered_json to_json() const;
  static PrototypeStore from_json(const nlohmann::ordered_json& snapshot);

  friend bool operator==(const PrototypeStore& a, const PrototypeStore& b);

 private:
  struct ByEntropyThenAge {
    bool operator()(const QueueEntry& a, const QueueEntry& b) const {
      if (a.entropy != b.entropy) return a.entropy < b.entropy;
      return a.sequence < b.sequence;
    }
  };
  using Queue = std::multiset<QueueEntry, ByEntropyThenAge>;

  void check_label(std::size_t label) const;
  void refresh_prototype(std::size_t label);
  Queue::iterator oldest_max_entropy(Queue& queue);

  StoreOptions options_;
  std::vector<Queue> queues_;
  std::vector<std::optional<Vector>> prototypes_;
  std::uint64_t step_counter_ = 0;
  std::uint64_t next_sequence_ = 0;
};

}  // namespace slomo
