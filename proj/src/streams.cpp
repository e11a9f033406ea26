#include "slomo/streams.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "slomo/error.hpp"
#include "slomo/losses.hpp"
#include "slomo/reliability.hpp"
#include "slomo/trio.hpp"

namespace slomo {

namespace {

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kEvalStream = 2;
constexpr std::uint64_t kMeansStream = 3;

}  // namespace

SyntheticTask::SyntheticTask(const TaskOptions& options) : options_(options) {
  if (options_.num_classes < 2) throw ConfigError("num_classes", "need at least 2 classes");
  if (options_.input_dim < 4) throw ConfigError("input_dim", "input_dim must be >= 4");
  if (options_.n_train < options_.num_classes || options_.n_eval < 2) {
    throw ConfigError("n_train", "train/eval sizes too small");
  }
  Rng rng(mix_seed({options_.seed, kMeansStream}));
  std::normal_distribution<double> gauss(0.0, 1.0);
  means_ = Matrix(options_.num_classes, options_.input_dim);
  for (std::size_t c = 0; c < options_.num_classes; ++c) {
    auto row = means_.row(c);
    for (double& v : row) v = gauss(rng);
    const double scale = options_.mean_radius / norm(row);
    for (double& v : row) v *= scale;
  }
  baseline_ = Vector(options_.input_dim);
  std::uniform_real_distribution<double> unit(0.0, 2.0);
  for (double& v : baseline_) v = options_.baseline * unit(rng);
  train_ = sample(options_.n_train, mix_seed({options_.seed, kTrainStream}));
  clean_eval_ = sample(options_.n_eval, mix_seed({options_.seed, kEvalStream}));
}

LabeledBatch SyntheticTask::sample(std::size_t n, std::uint64_t seed) const {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, options_.base_noise);
  LabeledBatch out;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = i % options_.num_classes;
  std::shuffle(out.labels.begin(), out.labels.end(), rng);
  out.x = Matrix(n, options_.input_dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto mean = means_.row(out.labels[i]);
    auto row = out.x.row(i);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = baseline_[k] + mean[k] + gauss(rng);
  }
  return out;
}

SyntheticTask make_task(const TaskOptions& options) { return SyntheticTask(options); }

const char* to_string(CorruptionFamily family) {
  switch (family) {
    case CorruptionFamily::AdditiveNoise: return "noise";
    case CorruptionFamily::Smooth: return "smooth";
    case CorruptionFamily::ContrastScale: return "contrast";
    case CorruptionFamily::Occlusion: return "occlusion";
    case CorruptionFamily::Rotation: return "rotation";
  }
  return "?";
}

CorruptionFamily corruption_family_from_string(const std::string& name) {
  for (std::size_t f = 0; f < kFamilyCount; ++f) {
    const auto family = static_cast<CorruptionFamily>(f);
    if (name == to_string(family)) return family;
  }
  throw ConfigError("family", "unknown corruption family '" + name + "'");
}

Matrix corrupt(const Matrix& batch, const Corruption& corruption, Rng& rng) {
  if (corruption.severity < 0 || corruption.severity > 5) {
    throw ConfigError("severity", "severity must lie in 0..5");
  }
  const int s = corruption.severity;
  if (s == 0) return batch;
  const std::size_t d = batch.cols();
  Matrix out = batch;
  switch (corruption.family) {
    case CorruptionFamily::AdditiveNoise: {
      std::normal_distribution<double> gauss(0.0, 0.1 * s);
      for (double& v : out.data()) v += gauss(rng);
      break;
    }
    case CorruptionFamily::Smooth: {
      const auto w = static_cast<std::size_t>(s);
      const double blend = 0.15 * s;
      for (std::size_t r = 0; r < batch.rows(); ++r) {
        auto src = batch.row(r);
        auto dst = out.row(r);
        for (std::size_t j = 0; j < d; ++j) {
          const std::size_t lo = j >= w ? j - w : 0;
          const std::size_t hi = std::min(d - 1, j + w);
          double sum = 0.0;
          for (std::size_t k = lo; k <= hi; ++k) sum += src[k];
          dst[j] = (1.0 - blend) * src[j] + blend * sum / static_cast<double>(hi - lo + 1);
        }
      }
      break;
    }
    case CorruptionFamily::ContrastScale: {
      const double factor = 1.0 - 0.15 * s;
      for (double& v : out.data()) v *= factor;
      break;
    }
    case CorruptionFamily::Occlusion: {
      const auto count = static_cast<std::size_t>(std::llround(0.1 * s * static_cast<double>(d)));
      const std::size_t start = (d - count) / 2;
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        std::fill(row.begin() + static_cast<std::ptrdiff_t>(start),
                  row.begin() + static_cast<std::ptrdiff_t>(start + count), 0.0);
      }
      break;
    }
    case CorruptionFamily::Rotation: {
      Rng structure(corruption.seed);
      std::vector<std::size_t> perm(d);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), structure);
      const double angle = s * std::numbers::pi / 16.0;
      const double cs = std::cos(angle);
      const double sn = std::sin(angle);
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto src = batch.row(r);
        auto dst = out.row(r);
        for (std::size_t p = 0; p + 1 < d; p += 2) {
          const std::size_t a = perm[p];
          const std::size_t b = perm[p + 1];
          dst[a] = cs * src[a] - sn * src[b];
          dst[b] = sn * src[a] + cs * src[b];
        }
      }
      break;
    }
  }
  return out;
}

std::vector<Domain> make_domains(std::uint64_t seed, std::size_t groups,
                                 std::size_t variants_per_group, int severity) {
  if (groups < 1 || groups > kFamilyCount) throw ConfigError("groups", "groups must lie in 1..5");
  if (variants_per_group < 1) throw ConfigError("variants_per_group", "must be >= 1");
  std::vector<Domain> domains;
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t v = 0; v < variants_per_group; ++v) {
      Domain dom;
      dom.id = domains.size();
      dom.group = g;
      dom.corruption = {static_cast<CorruptionFamily>(g), severity, mix_seed({seed, g, v})};
      dom.name = std::string(to_string(dom.corruption.family)) + "-" + std::to_string(v);
      domains.push_back(dom);
    }
  }
  return domains;
}

LabeledBatch domain_eval_set(const SyntheticTask& task, const Corruption& corruption) {
  Rng rng(mix_seed({corruption.seed, static_cast<std::uint64_t>(corruption.severity),
                    static_cast<std::uint64_t>(corruption.family)}));
  LabeledBatch out;
  out.x = corrupt(task.clean_eval().x, corruption, rng);
  out.labels = task.clean_eval().labels;
  return out;
}

double accuracy(const NetworkSpec& spec, const NetworkParams& params, const LabeledBatch& data) {
  const Matrix logits = evaluate(spec, params, data.x, StatsMode::RunningStats).logits;
  const auto predicted = pseudo_labels(logits).labels;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

NetworkParams train_source(const SyntheticTask& task, const NetworkSpec& spec,
                           const SourceTraining& options) {
  spec.validate();
  if (spec.input_dim() != task.options().input_dim ||
      spec.num_classes != task.options().num_classes) {
    throw ShapeError("network spec does not match task dimensions");
  }
  if (options.batch_size < 2) throw ConfigError("source_batch_size", "must be >= 2");
  NetworkParams params = init_params(spec, mix_seed({options.seed, 0x50u}));
  const TrainableMask mask = full_mask(spec);
  const LabeledBatch& train = task.train();
  const std::size_t n = train.x.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed({options.seed, 0x51u}));
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    // Cosine decay keeps the final running statistics stable.
    const double lr = options.lr * 0.5 *
                      (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                                      static_cast<double>(options.epochs)));
    for (std::size_t start = 0; start + 1 < n; start += options.batch_size) {
      const std::size_t end = std::min(n, start + options.batch_size);
      if (end - start < 2) break;
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix xb = train.x.select_rows(idx);
      std::vector<std::size_t> yb;
      for (std::size_t i : idx) yb.push_back(train.labels[i]);
      const ForwardResult f = forward(spec, params, xb, StatsMode::BatchStats);
      const LossResult ce = cross_entropy(f.logits, yb);
      apply_sgd(params, backward(spec, params, f.cache, ce.grad), lr, mask);
    }
  }
  const double acc = accuracy(spec, params, task.clean_eval());
  if (acc < options.min_accuracy) {
    throw NumericError("source training reached clean accuracy " + std::to_string(acc) +
                       " below the required " + std::to_string(options.min_accuracy));
  }
  return params;
}

std::vector<DomainError> rank_by_source_error(const SyntheticTask& task, const NetworkSpec& spec,
                                              const NetworkParams& source,
                                              std::span<const Domain> domains) {
  std::vector<DomainError> out;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    out.push_back({i, 1.0 - accuracy(spec, source, domain_eval_set(task, domains[i].corruption))});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const DomainError& a, const DomainError& b) { return a.error < b.error; });
  return out;
}

std::size_t cyclic_index(std::size_t t, std::size_t groups, std::size_t rate) {
  if (t < 1 || groups < 1 || rate < 1) throw ConfigError("cyclic", "t, K and r must be >= 1");
  return ((t - 1) % (groups * rate)) % groups + 1;
}

namespace {

constexpr std::pair<Setting, const char*> kSettingNames[] = {
    {Setting::Continual, "continual"},
    {Setting::Mixed, "mixed"},
    {Setting::Gradual, "gradual"},
    {Setting::Episodic, "episodic"},
    {Setting::Cyclic, "cyclic"},
    {Setting::CrossGroup, "cross_group"},
    {Setting::Easy2Hard, "easy2hard"},
    {Setting::Hard2Easy, "hard2easy"},
    {Setting::MixedAfterContinual, "mixed_after_continual"},
    {Setting::ContinualAfterMixed, "continual_after_mixed"},
};

}  // namespace

const char* to_string(Setting setting) {
  for (const auto& [s, name] : kSettingNames) {
    if (s == setting) return name;
  }
  return "?";
}

Setting setting_from_string(const std::string& name) {
  for (const auto& [s, n] : kSettingNames) {
    if (name == n) return s;
  }
  throw ConfigError("setting", "unknown setting '" + name + "'");
}

StreamSchedule::StreamSchedule(const SyntheticTask& task, std::vector<Domain> domains,
                               ScheduleOptions options, std::vector<std::size_t> difficulty_order)
    : task_(&task), domains_(std::move(domains)), options_(options) {
  if (domains_.empty()) throw ConfigError("domains", "schedule needs at least one domain");
  if (options_.batch_size < 2) throw ConfigError("batch_size", "batch_size must be >= 2");
  build_plan(std::move(difficulty_order));
}

std::size_t StreamSchedule::batches_per_domain() const {
  const std::size_t n = task_->options().n_eval;
  return (n + options_.batch_size - 1) / options_.batch_size;
}

void StreamSchedule::append_pass(const std::vector<std::size_t>& order, bool resets,
                                 std::size_t cycle) {
  const std::size_t per_domain = batches_per_domain();
  for (std::size_t d : order) {
    const int severity = domains_[d].corruption.severity;
    for (std::size_t b = 0; b < per_domain; ++b) {
      plan_.push_back({d, severity, b, resets && b == 0, cycle});
    }
  }
}

void StreamSchedule::append_mixed(std::size_t cycle) {
  const std::size_t start = plan_.size();
  std::vector<std::size_t> all(domains_.size());
  std::iota(all.begin(), all.end(), 0);
  append_pass(all, false, cycle);
  Rng rng(mix_seed({options_.seed, 0x6d69786564ULL, cycle}));
  std::shuffle(plan_.begin() + static_cast<std::ptrdiff_t>(start), plan_.end(), rng);
}

void StreamSchedule::build_plan(std::vector<std::size_t> difficulty_order) {
  std::vector<std::size_t> in_order(domains_.size());
  std::iota(in_order.begin(), in_order.end(), 0);
  for (std::size_t d : difficulty_order) {
    if (d >= domains_.size()) throw ConfigError("domains", "difficulty order names unknown domain");
  }
  difficulty_order_ = difficulty_order;

  std::size_t groups = 0;
  for (const auto& d : domains_) groups = std::max(groups, d.group + 1);
  std::vector<std::vector<std::size_t>> by_group(groups);
  for (std::size_t i = 0; i < domains_.size(); ++i) by_group[domains_[i].group].push_back(i);

  switch (options_.setting) {
    case Setting::Continual:
      append_pass(in_order, false, 0);
      break;
    case Setting::Episodic:
      append_pass(in_order, true, 0);
      break;
    case Setting::Mixed:
      append_mixed(0);
      break;
    case Setting::Gradual: {
      const int ramp[] = {1, 2, 3, 4, 5, 4, 3, 2, 1};
      const std::size_t per_level =
          std::min(options_.gradual_batches_per_level, batches_per_domain());
      for (std::size_t d : in_order) {
        for (int s : ramp) {
          for (std::size_t b = 0; b < per_level; ++b) plan_.push_back({d, s, b, false, 0});
        }
      }
      break;
    }
    case Setting::Cyclic: {
      if (options_.cycles < 1) throw ConfigError("cycles", "cycles must be >= 1");
      if (options_.cyclic_mode == CyclicMode::Protocol) {
        for (std::size_t c = 0; c < options_.cycles; ++c) {
          for (const auto& members : by_group) append_pass(members, false, c);
        }
      } else {
        if (options_.dwell < 1) throw ConfigError("dwell", "dwell must be >= 1");
        const std::size_t steps = options_.dwell_steps > 0
                                      ? options_.dwell_steps
                                      : options_.cycles * domains_.size() * batches_per_domain();
        std::vector<std::size_t> visits(groups, 0);
        const std::size_t per_domain = batches_per_domain();
        for (std::size_t t = 1; t <= steps; ++t) {
          const std::size_t block = (t - 1) / options_.dwell + 1;
          const std::size_t g = cyclic_index(block, groups, options_.dwell) - 1;
          const auto& members = by_group[g];
          const std::size_t v = visits[g]++;
          const std::size_t d = members[v % members.size()];
          plan_.push_back({d, domains_[d].corruption.severity, (v / members.size()) % per_domain,
                           false, (block - 1) / groups});
        }
      }
      break;
    }
    case Setting::CrossGroup: {
      std::vector<std::size_t> order;
      std::size_t widest = 0;
      for (const auto& m : by_group) widest = std::max(widest, m.size());
      for (std::size_t v = 0; v < widest; ++v) {
        for (const auto& m : by_group) {
          if (v < m.size()) order.push_back(m[v]);
        }
      }
      append_pass(order, false, 0);
      break;
    }
    case Setting::Easy2Hard:
    case Setting::Hard2Easy: {
      if (difficulty_order.size() != domains_.size()) {
        throw ConfigError("setting", "easy2hard/hard2easy need a full difficulty ranking");
      }
      if (options_.setting == Setting::Hard2Easy) {
        std::reverse(difficulty_order.begin(), difficulty_order.end());
      }
      append_pass(difficulty_order, false, 0);
      break;
    }
    case Setting::MixedAfterContinual:
      append_pass(in_order, false, 0);
      append_mixed(1);
      break;
    case Setting::ContinualAfterMixed:
      append_mixed(0);
      append_pass(in_order, false, 1);
      break;
  }
}

const LabeledBatch& StreamSchedule::eval_set(std::size_t domain, int severity) const {
  const auto key = std::make_pair(domain, severity);
  auto it = eval_cache_.find(key);
  if (it == eval_cache_.end()) {
    Corruption c = domains_[domain].corruption;
    c.severity = severity;
    it = eval_cache_.emplace(key, domain_eval_set(*task_, c)).first;
  }
  return it->second;
}

StreamEvent StreamSchedule::event(std::size_t index) const {
  const EventKey& key = plan_.at(index);
  const LabeledBatch& pool = eval_set(key.domain, key.severity);
  const std::size_t begin = key.batch * options_.batch_size;
  const std::size_t end = std::min(pool.x.rows(), begin + options_.batch_size);
  std::vector<std::size_t> rows(end - begin);
  std::iota(rows.begin(), rows.end(), begin);
  StreamEvent ev;
  ev.batch.x = pool.x.select_rows(rows);
  ev.batch.labels.assign(pool.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                         pool.labels.begin() + static_cast<std::ptrdiff_t>(end));
  ev.domain_id = domains_[key.domain].id;
  ev.group = domains_[key.domain].group;
  ev.severity = key.severity;
  ev.reset = key.reset;
  ev.cycle = key.cycle;
  return ev;
}

std::optional<StreamEvent> StreamSchedule::next() {
  if (cursor_ >= plan_.size()) return std::nullopt;
  return event(cursor_++);
}

nlohmann::ordered_json StreamSchedule::describe() const {
  nlohmann::ordered_json j;
  j["setting"] = to_string(options_.setting);
  j["seed"] = options_.seed;
  j["batch_size"] = options_.batch_size;
  j["batches_per_domain"] = batches_per_domain();
  j["cycles"] = options_.cycles;
  j["cyclic_mode"] = options_.cyclic_mode == CyclicMode::Protocol ? "protocol" : "dwell";
  j["dwell"] = options_.dwell;
  j["gradual_batches_per_level"] = options_.gradual_batches_per_level;
  auto doms = nlohmann::ordered_json::array();
  for (const auto& d : domains_) {
    doms.push_back({{"id", d.id},
                    {"name", d.name},
                    {"group", d.group},
                    {"family", to_string(d.corruption.family)},
                    {"severity", d.corruption.severity},
                    {"seed", d.corruption.seed}});
  }
  j["domains"] = std::move(doms);
  j["difficulty_order"] = difficulty_order_;
  j["events"] = plan_.size();
  return j;
}

}  // namespace slomo
