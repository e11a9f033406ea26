#include "slomo/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>

#include "slomo/error.hpp"

namespace slomo {

namespace {

using Json = nlohmann::ordered_json;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) parts.push_back(trim(item));
  return parts;
}

double to_double(const std::string& key, const std::string& text) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ConfigError(key, "expected a finite number, got '" + text + "'");
  }
  return value;
}

std::uint64_t to_uint(const std::string& key, const std::string& text) {
  std::uint64_t value = 0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key, "expected a non-negative integer, got '" + text + "'");
  }
  return value;
}

std::size_t to_size(const std::string& key, const std::string& text) {
  return static_cast<std::size_t>(to_uint(key, text));
}

bool to_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

const std::map<std::string, AugmentationKind>& augmentation_names() {
  static const std::map<std::string, AugmentationKind> names{
      {"identity", AugmentationKind::Identity},
      {"shuffle", AugmentationKind::SegmentShuffle},
      {"occlusion", AugmentationKind::CenterOcclusion},
      {"jitter", AugmentationKind::AdditiveJitter},
  };
  return names;
}

Augmentation to_augmentation(const std::string& key, const std::string& text) {
  const auto parts = split(text, ':');
  const auto it = augmentation_names().find(parts.empty() ? "" : parts[0]);
  if (it == augmentation_names().end() || parts.size() > 2) {
    throw ConfigError(key, "expected kind[:param] with kind in identity|shuffle|occlusion|jitter");
  }
  Augmentation aug{it->second, 0.0};
  if (parts.size() == 2) aug.param = to_double(key, parts[1]);
  if (aug.kind == AugmentationKind::SegmentShuffle &&
      (aug.param < 1.0 || aug.param != std::floor(aug.param))) {
    throw ConfigError(key, "shuffle needs a positive integer segment count");
  }
  if (aug.kind == AugmentationKind::CenterOcclusion && !(aug.param >= 0.0 && aug.param <= 1.0)) {
    throw ConfigError(key, "occlusion fraction must lie in [0, 1]");
  }
  if (aug.kind == AugmentationKind::AdditiveJitter && aug.param < 0.0) {
    throw ConfigError(key, "jitter scale must be >= 0");
  }
  return aug;
}

std::string augmentation_text(const Augmentation& aug) {
  for (const auto& [name, kind] : augmentation_names()) {
    if (kind != aug.kind) continue;
    if (kind == AugmentationKind::Identity) return name;
    return name + ":" + Json(aug.param).dump();
  }
  return "identity";
}

struct Field {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<Json(const RunConfig&)> get;
};

template <typename Get>
Field number(const char* name, bool required, const char* help, Get getter) {
  return {{name, required, help},
          [=](RunConfig& c, const std::string& v) { getter(c) = to_double(name, v); },
          [=](const RunConfig& c) { return Json(getter(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Field count(const char* name, bool required, const char* help, Get getter) {
  return {{name, required, help},
          [=](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(getter(c))>;
            getter(c) = static_cast<T>(to_uint(name, v));
          },
          [=](const RunConfig& c) { return Json(getter(const_cast<RunConfig&>(c))); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({{"variant", true, "slomo_fast | slomo_fast_star | frozen_source"},
                 [](RunConfig& c, const std::string& v) {
                   if (v == "slomo_fast") {
                     c.variant = Variant::SloMoFast;
                   } else if (v == "slomo_fast_star") {
                     c.variant = Variant::SloMoFastStar;
                   } else if (v == "frozen_source") {
                     c.variant = Variant::FrozenSource;
                   } else {
                     throw ConfigError("variant", "unknown variant '" + v + "'");
                   }
                 },
                 [](const RunConfig& c) { return Json(to_string(c.variant)); }});
    f.push_back({{"setting", true,
                  "continual | mixed | gradual | episodic | cyclic | cross_group | easy2hard | "
                  "hard2easy | mixed_after_continual | continual_after_mixed"},
                 [](RunConfig& c, const std::string& v) {
                   c.schedule.setting = setting_from_string(v);
                 },
                 [](const RunConfig& c) { return Json(to_string(c.schedule.setting)); }});
    f.push_back(number("sigma", true, "entropy threshold",
                       [](RunConfig& c) -> double& { return c.adaptation.sigma; }));
    f.push_back(number("delta", true, "PLPD threshold",
                       [](RunConfig& c) -> double& { return c.adaptation.delta; }));
    f.push_back(number("alpha", true, "EMA retention of the fast teacher",
                       [](RunConfig& c) -> double& { return c.adaptation.ema_retention; }));
    f.push_back(count("seed_task", true, "task, domains and source training",
                      [](RunConfig& c) -> std::uint64_t& { return c.seed_task; }));
    f.push_back(count("seed_schedule", true, "stream order",
                      [](RunConfig& c) -> std::uint64_t& { return c.seed_schedule; }));
    f.push_back(count("seed_adapt", true, "adaptation randomness and projector init",
                      [](RunConfig& c) -> std::uint64_t& { return c.seed_adapt; }));

    f.push_back(number("tau", false, "contrastive temperature",
                       [](RunConfig& c) -> double& { return c.adaptation.tau; }));
    f.push_back(number("lambda_cl", false, "contrastive weight",
                       [](RunConfig& c) -> double& { return c.adaptation.weights.cl; }));
    f.push_back(number("lambda_mse", false, "prototype MSE weight",
                       [](RunConfig& c) -> double& { return c.adaptation.weights.mse; }));
    f.push_back(number("lambda_im", false, "information maximization weight",
                       [](RunConfig& c) -> double& { return c.adaptation.weights.im; }));
    f.push_back({{"gamma", false, "prior smoothing; auto = 1 / num_classes"},
                 [](RunConfig& c, const std::string& v) {
                   if (v == "auto") {
                     c.adaptation.prior_smoothing.reset();
                   } else {
                     c.adaptation.prior_smoothing = to_double("gamma", v);
                   }
                 },
                 [](const RunConfig& c) {
                   return c.adaptation.prior_smoothing ? Json(*c.adaptation.prior_smoothing)
                                                       : Json("auto");
                 }});
    f.push_back(count("queue_size", false, "per-class queue capacity",
                      [](RunConfig& c) -> std::size_t& { return c.adaptation.queue_size; }));
    f.push_back(count("evict_interval", false, "steps between evictions",
                      [](RunConfig& c) -> std::size_t& { return c.adaptation.evict_interval; }));
    f.push_back(number("restore_prob", false, "stochastic restoration probability",
                       [](RunConfig& c) -> double& { return c.adaptation.restore_prob; }));
    f.push_back(number("lr_student", false, "student SGD step",
                       [](RunConfig& c) -> double& { return c.adaptation.lr_student; }));
    f.push_back(number("lr_t2", false, "slow teacher and projector SGD step",
                       [](RunConfig& c) -> double& { return c.adaptation.lr_t2; }));
    f.push_back(number("pl_noise_ratio", false, "fraction of pseudo-labels flipped",
                       [](RunConfig& c) -> double& { return c.adaptation.pl_noise_ratio; }));
    f.push_back({{"plpd_augmentations", false, "comma list of kind:param"},
                 [](RunConfig& c, const std::string& v) {
                   c.adaptation.plpd_augmentations.clear();
                   for (const auto& part : split(v, ',')) {
                     c.adaptation.plpd_augmentations.push_back(
                         to_augmentation("plpd_augmentations", part));
                   }
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (const auto& a : c.adaptation.plpd_augmentations) {
                     if (!out.empty()) out += ",";
                     out += augmentation_text(a);
                   }
                   return Json(out);
                 }});
    f.push_back({{"contrastive_view", false, "augmentation producing the second view"},
                 [](RunConfig& c, const std::string& v) {
                   c.adaptation.contrastive_view = to_augmentation("contrastive_view", v);
                 },
                 [](const RunConfig& c) {
                   return Json(augmentation_text(c.adaptation.contrastive_view));
                 }});
    f.push_back(count("batch_size", false, "stream batch size",
                      [](RunConfig& c) -> std::size_t& { return c.schedule.batch_size; }));

    f.push_back(count("num_classes", false, "classes of the synthetic task",
                      [](RunConfig& c) -> std::size_t& { return c.task.num_classes; }));
    f.push_back(count("input_dim", false, "input dimension",
                      [](RunConfig& c) -> std::size_t& { return c.task.input_dim; }));
    f.push_back(count("n_train", false, "clean training samples",
                      [](RunConfig& c) -> std::size_t& { return c.task.n_train; }));
    f.push_back(count("n_eval", false, "samples per domain",
                      [](RunConfig& c) -> std::size_t& { return c.task.n_eval; }));
    f.push_back(number("mean_radius", false, "norm of each class mean",
                       [](RunConfig& c) -> double& { return c.task.mean_radius; }));
    f.push_back(number("base_noise", false, "within-class standard deviation",
                       [](RunConfig& c) -> double& { return c.task.base_noise; }));
    f.push_back(number("baseline", false, "mean per-coordinate input offset",
                       [](RunConfig& c) -> double& { return c.task.baseline; }));

    f.push_back({{"hidden", false, "comma list of hidden widths"},
                 [](RunConfig& c, const std::string& v) {
                   c.hidden.clear();
                   for (const auto& part : split(v, ',')) c.hidden.push_back(to_size("hidden", part));
                 },
                 [](const RunConfig& c) {
                   std::string out;
                   for (std::size_t h : c.hidden) {
                     if (!out.empty()) out += ",";
                     out += std::to_string(h);
                   }
                   return Json(out);
                 }});
    f.push_back(count("feature_layer", false, "layer whose output is the feature",
                      [](RunConfig& c) -> std::size_t& { return c.feature_layer; }));
    f.push_back(number("bn_momentum", false, "running statistics momentum",
                       [](RunConfig& c) -> double& { return c.bn_momentum; }));
    f.push_back(count("source_epochs", false, "source training epochs",
                      [](RunConfig& c) -> std::size_t& { return c.source.epochs; }));
    f.push_back(number("source_lr", false, "source training learning rate",
                       [](RunConfig& c) -> double& { return c.source.lr; }));
    f.push_back(count("source_batch", false, "source training batch size",
                      [](RunConfig& c) -> std::size_t& { return c.source.batch_size; }));
    f.push_back(number("source_min_accuracy", false, "required clean accuracy",
                       [](RunConfig& c) -> double& { return c.source.min_accuracy; }));

    f.push_back(count("groups", false, "corruption groups (1..5)",
                      [](RunConfig& c) -> std::size_t& { return c.groups; }));
    f.push_back(count("variants_per_group", false, "seeded domains per group",
                      [](RunConfig& c) -> std::size_t& { return c.variants_per_group; }));
    f.push_back({{"severity", false, "domain severity (1..5)"},
                 [](RunConfig& c, const std::string& v) {
                   c.severity = static_cast<int>(to_uint("severity", v));
                 },
                 [](const RunConfig& c) { return Json(c.severity); }});
    f.push_back(count("cycles", false, "cyclic passes",
                      [](RunConfig& c) -> std::size_t& { return c.schedule.cycles; }));
    f.push_back({{"cyclic_mode", false, "protocol | dwell"},
                 [](RunConfig& c, const std::string& v) {
                   if (v == "protocol") {
                     c.schedule.cyclic_mode = CyclicMode::Protocol;
                   } else if (v == "dwell") {
                     c.schedule.cyclic_mode = CyclicMode::Dwell;
                   } else {
                     throw ConfigError("cyclic_mode", "expected protocol or dwell");
                   }
                 },
                 [](const RunConfig& c) {
                   return Json(c.schedule.cyclic_mode == CyclicMode::Protocol ? "protocol"
                                                                              : "dwell");
                 }});
    f.push_back(count("dwell", false, "consecutive batches per group in dwell mode",
                      [](RunConfig& c) -> std::size_t& { return c.schedule.dwell; }));
    f.push_back(count("dwell_steps", false, "stream length in dwell mode",
                      [](RunConfig& c) -> std::size_t& { return c.schedule.dwell_steps; }));
    f.push_back(count("gradual_batches_per_level", false, "batches per severity level",
                      [](RunConfig& c) -> std::size_t& {
                        return c.schedule.gradual_batches_per_level;
                      }));

    f.push_back(count("ma_window", false, "moving-average window k",
                      [](RunConfig& c) -> std::size_t& { return c.ma_window; }));
    f.push_back(number("lambda_stab", false, "stability penalty",
                       [](RunConfig& c) -> double& { return c.lambda_stab; }));
    f.push_back({{"score_scope", false, "per_segment | whole_stream"},
                 [](RunConfig& c, const std::string& v) {
                   if (v == "per_segment") {
                     c.score_scope = ScoreScope::PerSegment;
                   } else if (v == "whole_stream") {
                     c.score_scope = ScoreScope::WholeStream;
                   } else {
                     throw ConfigError("score_scope", "expected per_segment or whole_stream");
                   }
                 },
                 [](const RunConfig& c) {
                   return Json(c.score_scope == ScoreScope::PerSegment ? "per_segment"
                                                                       : "whole_stream");
                 }});
    f.push_back({{"forgetting", false, "probe the initial domain after each segment"},
                 [](RunConfig& c, const std::string& v) { c.forgetting = to_bool("forgetting", v); },
                 [](const RunConfig& c) { return Json(c.forgetting); }});
    f.push_back({{"output_dir", false, "where artifacts are written"},
                 [](RunConfig& c, const std::string& v) {
                   if (v.empty()) throw ConfigError("output_dir", "must not be empty");
                   c.output_dir = v;
                 },
                 [](const RunConfig& c) { return Json(c.output_dir); }});
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& name) {
  for (const auto& f : fields()) {
    if (name == f.key.name) return &f;
  }
  return nullptr;
}

RunConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  RunConfig config;
  std::set<std::string> seen;
  for (const auto& [key, value] : pairs) {
    const Field* field = find_field(key);
    if (field == nullptr) throw ConfigError(key, "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(key, "duplicate key '" + key + "'");
    field->set(config, value);
  }
  for (const auto& f : fields()) {
    if (f.key.required && !seen.contains(f.key.name)) {
      throw ConfigError(f.key.name, std::string("missing required key '") + f.key.name + "'");
    }
  }
  config.task.seed = config.seed_task;
  config.source.seed = config.seed_task;
  config.schedule.seed = config.seed_schedule;
  config.adaptation.batch_size = config.schedule.batch_size;
  config.validate();
  return config;
}

}  // namespace

const char* to_string(Variant variant) {
  switch (variant) {
    case Variant::SloMoFast: return "slomo_fast";
    case Variant::SloMoFastStar: return "slomo_fast_star";
    case Variant::FrozenSource: return "frozen_source";
  }
  return "?";
}

void RunConfig::validate() const {
  adaptation.validate();
  if (task.num_classes < 2) throw ConfigError("num_classes", "need at least 2 classes");
  if (task.input_dim < 4) throw ConfigError("input_dim", "input_dim must be >= 4");
  if (task.n_eval < 2) throw ConfigError("n_eval", "n_eval must be >= 2");
  if (task.n_train < task.num_classes) throw ConfigError("n_train", "n_train below num_classes");
  if (!(task.mean_radius > 0.0)) throw ConfigError("mean_radius", "must be > 0");
  if (!(task.base_noise > 0.0)) throw ConfigError("base_noise", "must be > 0");
  if (task.baseline < 0.0) throw ConfigError("baseline", "must be >= 0");
  if (hidden.empty()) throw ConfigError("hidden", "need at least one hidden layer");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("hidden", "hidden widths must be >= 1");
  }
  if (feature_layer >= hidden.size()) {
    throw ConfigError("feature_layer", "feature_layer must index a hidden layer");
  }
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) {
    throw ConfigError("bn_momentum", "bn_momentum must lie in (0, 1)");
  }
  if (source.epochs < 1) throw ConfigError("source_epochs", "must be >= 1");
  if (!(source.lr > 0.0)) throw ConfigError("source_lr", "must be > 0");
  if (source.batch_size < 2) throw ConfigError("source_batch", "must be >= 2");
  if (!(source.min_accuracy >= 0.0 && source.min_accuracy <= 1.0)) {
    throw ConfigError("source_min_accuracy", "must lie in [0, 1]");
  }
  if (groups < 1 || groups > kFamilyCount) throw ConfigError("groups", "groups must lie in 1..5");
  if (variants_per_group < 1) throw ConfigError("variants_per_group", "must be >= 1");
  if (severity < 1 || severity > 5) throw ConfigError("severity", "severity must lie in 1..5");
  if (schedule.batch_size != adaptation.batch_size) {
    throw ConfigError("batch_size", "schedule and adaptation batch sizes differ");
  }
  if (schedule.batch_size < 2) throw ConfigError("batch_size", "batch_size must be >= 2");
  if (task.n_eval % schedule.batch_size == 1) {
    throw ConfigError("n_eval", "n_eval would leave a final batch of one sample");
  }
  if (schedule.cycles < 1) throw ConfigError("cycles", "cycles must be >= 1");
  if (schedule.dwell < 1) throw ConfigError("dwell", "dwell must be >= 1");
  if (schedule.cyclic_mode == CyclicMode::Dwell && schedule.dwell_steps < 1 &&
      schedule.setting == Setting::Cyclic) {
    throw ConfigError("dwell_steps", "dwell mode needs dwell_steps >= 1");
  }
  if (schedule.gradual_batches_per_level < 1) {
    throw ConfigError("gradual_batches_per_level", "must be >= 1");
  }
  if (ma_window < 1) throw ConfigError("ma_window", "ma_window must be >= 1");
  if (!(lambda_stab >= 0.0)) throw ConfigError("lambda_stab", "lambda_stab must be >= 0");
}

NetworkSpec RunConfig::network() const {
  return make_mlp(task.input_dim, hidden, task.num_classes, feature_layer);
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

RunConfig parse_config(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(line, "line " + std::to_string(number) + ": expected key = value");
    }
    pairs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return from_pairs(pairs);
}

RunConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read config file '" + path + "'");
  return parse_config(in);
}

nlohmann::ordered_json config_to_json(const RunConfig& config) {
  Json j = Json::object();
  for (const auto& f : fields()) j[f.key.name] = f.get(config);
  return j;
}

std::string config_to_text(const RunConfig& config) {
  std::string out;
  const Json j = config_to_json(config);
  for (const auto& [key, value] : j.items()) {
    out += key + " = " + (value.is_string() ? value.get<std::string>() : value.dump()) + "\n";
  }
  return out;
}

RunConfig config_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& [key, value] : j.items()) {
    pairs.emplace_back(key, value.is_string() ? value.get<std::string>() : value.dump());
  }
  return from_pairs(pairs);
}

void apply_seed_overrides(RunConfig& config, const std::string& overrides) {
  for (const auto& item : split(overrides, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError(item, "expected seed_name=value");
    const std::string key = trim(item.substr(0, eq));
    const std::uint64_t value = to_uint(key, trim(item.substr(eq + 1)));
    if (key == "seed_task") {
      config.seed_task = value;
    } else if (key == "seed_schedule") {
      config.seed_schedule = value;
    } else if (key == "seed_adapt") {
      config.seed_adapt = value;
    } else {
      throw ConfigError(key, "only seed_task, seed_schedule and seed_adapt can be overridden");
    }
  }
  config.task.seed = config.seed_task;
  config.source.seed = config.seed_task;
  config.schedule.seed = config.seed_schedule;
}

}  // namespace slomo
