#include "slomo/protostore.hpp"

#include <algorithm>
#include <string>

#include "slomo/error.hpp"
#include "slomo/reliability.hpp"

namespace slomo {

const char* to_string(InsertOutcome outcome) {
  switch (outcome) {
    case InsertOutcome::Inserted: return "inserted";
    case InsertOutcome::ReplacedMaxEntropy: return "replaced_max_entropy";
    case InsertOutcome::RejectedCriteria: return "rejected_criteria";
    case InsertOutcome::RejectedFullHigherEntropy: return "rejected_full_higher_entropy";
  }
  return "?";
}

PrototypeStore::PrototypeStore(const StoreOptions& options)
    : options_(options), queues_(options.num_classes), prototypes_(options.num_classes) {
  if (options_.num_classes < 1) throw ConfigError("num_classes", "need at least one class");
  if (options_.capacity < 1) throw ConfigError("queue_size", "queue capacity must be >= 1");
  if (options_.evict_interval < 1) throw ConfigError("evict_interval", "must be >= 1");
  if (!(options_.sigma > 0.0)) throw ConfigError("sigma", "sigma must be > 0");
}

void PrototypeStore::check_label(std::size_t label) const {
  if (label >= options_.num_classes) {
    throw ShapeError("class index " + std::to_string(label) + " out of range");
  }
}

InsertOutcome PrototypeStore::try_insert(std::size_t label, std::span<const double> feature,
                                         double entropy, double plpd) {
  check_label(label);
  if (options_.feature_dim == 0) options_.feature_dim = feature.size();
  if (feature.size() != options_.feature_dim) {
    throw ShapeError("feature dimension " + std::to_string(feature.size()) + " != store's " +
                     std::to_string(options_.feature_dim));
  }
  if (!dual_criterion(entropy, plpd, options_.sigma, options_.delta)) {
    return InsertOutcome::RejectedCriteria;
  }
  const double stored = std::max(entropy, kEntropyFloor);
  Queue& queue = queues_[label];
  InsertOutcome outcome = InsertOutcome::Inserted;
  if (queue.size() >= options_.capacity) {
    auto worst = oldest_max_entropy(queue);
    if (!(stored < worst->entropy)) return InsertOutcome::RejectedFullHigherEntropy;
    queue.erase(worst);
    outcome = InsertOutcome::ReplacedMaxEntropy;
  }
  queue.insert(QueueEntry{Vector(feature.begin(), feature.end()), stored, next_sequence_++});
  refresh_prototype(label);
  return outcome;
}

PrototypeStore::Queue::iterator PrototypeStore::oldest_max_entropy(Queue& queue) {
  const double max_entropy = std::prev(queue.end())->entropy;
  return std::find_if(queue.lower_bound(QueueEntry{{}, max_entropy, 0}), queue.end(),
                      [&](const QueueEntry& e) { return e.entropy == max_entropy; });
}

std::vector<bool> PrototypeStore::tick() {
  ++step_counter_;
  std::vector<bool> evicted(options_.num_classes, false);
  if (step_counter_ % options_.evict_interval != 0) return evicted;
  for (std::size_t c = 0; c < queues_.size(); ++c) {
    if (queues_[c].empty()) continue;
    queues_[c].erase(queues_[c].begin());
    refresh_prototype(c);
    evicted[c] = true;
  }
  return evicted;
}

void PrototypeStore::refresh_prototype(std::size_t label) {
  const Queue& queue = queues_[label];
  if (queue.empty()) {
    prototypes_[label].reset();
    return;
  }
  Vector proto(options_.feature_dim, 0.0);
  double total = 0.0;
  for (const auto& e : queue) {
    const double w = 1.0 / e.entropy;
    total += w;
    for (std::size_t k = 0; k < proto.size(); ++k) proto[k] += w * e.feature[k];
  }
  for (double& v : proto) v /= total;
  prototypes_[label] = std::move(proto);
}

const std::optional<Vector>& PrototypeStore::prototype(std::size_t label) const {
  check_label(label);
  return prototypes_[label];
}

std::optional<NearestPrototype> PrototypeStore::nearest_prototype(
    std::span<const double> feature) const {
  const double fnorm = norm(feature);
  if (!(fnorm > 0.0)) throw NumericError("nearest_prototype: zero-norm query");
  std::optional<NearestPrototype> best;
  for (std::size_t c = 0; c < prototypes_.size(); ++c) {
    if (!prototypes_[c]) continue;
    const Vector& p = *prototypes_[c];
    if (p.size() != feature.size()) throw ShapeError("nearest_prototype: dimension mismatch");
    const double pnorm = norm(p);
    const double sim = pnorm > 0.0 ? dot(feature, p) / (fnorm * pnorm) : 0.0;
    if (!best || sim > best->similarity) best = NearestPrototype{c, sim};
  }
  return best;
}

std::size_t PrototypeStore::queue_size(std::size_t label) const {
  check_label(label);
  return queues_[label].size();
}

std::vector<std::size_t> PrototypeStore::queue_sizes() const {
  std::vector<std::size_t> sizes;
  for (const auto& q : queues_) sizes.push_back(q.size());
  return sizes;
}

std::size_t PrototypeStore::total_size() const {
  std::size_t n = 0;
  for (const auto& q : queues_) n += q.size();
  return n;
}

bool PrototypeStore::has_any_prototype() const {
  return std::any_of(prototypes_.begin(), prototypes_.end(),
                     [](const auto& p) { return p.has_value(); });
}

std::vector<QueueEntry> PrototypeStore::entries(std::size_t label) const {
  check_label(label);
  return {queues_[label].begin(), queues_[label].end()};
}

void PrototypeStore::clear() {
  for (auto& q : queues_) q.clear();
  for (auto& p : prototypes_) p.reset();
  step_counter_ = 0;
  next_sequence_ = 0;
}

nlohmann::ordered_json PrototypeStore::to_json() const {
  nlohmann::ordered_json j;
  j["options"] = {{"num_classes", options_.num_classes},
                  {"feature_dim", options_.feature_dim},
                  {"capacity", options_.capacity},
                  {"evict_interval", options_.evict_interval},
                  {"sigma", options_.sigma},
                  {"delta", options_.delta}};
  j["step"] = step_counter_;
  auto classes = nlohmann::ordered_json::array();
  for (const auto& q : queues_) {
    auto list = nlohmann::ordered_json::array();
    for (const auto& e : q) list.push_back({{"feature", e.feature}, {"entropy", e.entropy}});
    classes.push_back(std::move(list));
  }
  j["classes"] = std::move(classes);
  return j;
}

PrototypeStore PrototypeStore::from_json(const nlohmann::ordered_json& snapshot) {
  const auto& o = snapshot.at("options");
  StoreOptions options;
  options.num_classes = o.at("num_classes").get<std::size_t>();
  options.feature_dim = o.at("feature_dim").get<std::size_t>();
  options.capacity = o.at("capacity").get<std::size_t>();
  options.evict_interval = o.at("evict_interval").get<std::size_t>();
  options.sigma = o.at("sigma").get<double>();
  options.delta = o.at("delta").get<double>();
  PrototypeStore store(options);
  store.step_counter_ = snapshot.at("step").get<std::uint64_t>();
  const auto& classes = snapshot.at("classes");
  if (classes.size() != options.num_classes) throw ShapeError("snapshot class count mismatch");
  for (std::size_t c = 0; c < classes.size(); ++c) {
    // Listed in (entropy, age) order, so sequential numbering preserves ties.
    for (const auto& e : classes[c]) {
      QueueEntry entry{e.at("feature").get<Vector>(), e.at("entropy").get<double>(),
                       store.next_sequence_++};
      if (entry.feature.size() != options.feature_dim) {
        throw ShapeError("snapshot feature dimension mismatch");
      }
      store.queues_[c].insert(std::move(entry));
    }
    store.refresh_prototype(c);
  }
  return store;
}

bool operator==(const PrototypeStore& a, const PrototypeStore& b) {
  if (a.step_counter_ != b.step_counter_ || a.queues_.size() != b.queues_.size()) return false;
  for (std::size_t c = 0; c < a.queues_.size(); ++c) {
    const auto ea = a.entries(c);
    const auto eb = b.entries(c);
    if (ea.size() != eb.size()) return false;
    for (std::size_t i = 0; i < ea.size(); ++i) {
      if (ea[i].feature != eb[i].feature || ea[i].entropy != eb[i].entropy) return false;
    }
  }
  return true;
}

}  // namespace slomo
