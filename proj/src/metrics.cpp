#include "slomo/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "slomo/engine.hpp"
#include "slomo/error.hpp"
#include "slomo/reliability.hpp"

namespace slomo {

Vector moving_average(std::span<const double> trace, std::size_t k) {
  if (k == 0) throw ConfigError("ma_window", "moving-average window must be >= 1");
  Vector out(trace.size());
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const std::size_t count = std::min(i + 1, k);
    double sum = 0.0;
    for (std::size_t j = i + 1 - count; j <= i; ++j) sum += trace[j];
    out[i] = sum / static_cast<double>(count);
  }
  return out;
}

std::size_t time_to_plateau(std::span<const double> trace, std::size_t k) {
  if (trace.empty()) throw ShapeError("time_to_plateau: empty trace");
  const Vector ma = moving_average(trace, k);
  const double threshold = 0.8 * *std::max_element(ma.begin(), ma.end());
  for (std::size_t i = 0; i < ma.size(); ++i) {
    if (ma[i] >= threshold) return i + 1;
  }
  return ma.size();
}

double average_positive_slope(std::span<const double> trace, std::size_t k) {
  const Vector ma = moving_average(trace, k);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 1; i < ma.size(); ++i) {
    const double diff = ma[i] - ma[i - 1];
    if (diff > 0.0) {
      sum += diff;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double stability_std(std::span<const double> trace, std::size_t k) {
  const Vector ma = moving_average(trace, k);
  if (ma.empty()) return 0.0;
  double mean = 0.0;
  for (double v : ma) mean += v;
  mean /= static_cast<double>(ma.size());
  double var = 0.0;
  for (double v : ma) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(ma.size()));
}

double adaptation_rate(std::span<const double> trace, std::size_t k, double lambda_stab) {
  return adaptation_score(trace, k, lambda_stab).rate;
}

AdaptationScore adaptation_score(std::span<const double> trace, std::size_t k,
                                 double lambda_stab) {
  AdaptationScore s;
  s.ttp = time_to_plateau(trace, k);
  s.aps = average_positive_slope(trace, k);
  s.std = stability_std(trace, k);
  s.rate = s.aps / static_cast<double>(s.ttp) - lambda_stab * s.std;
  return s;
}

ForgettingPoint forgetting_probe(const ModelTrio& snapshot, const LabeledBatch& eval) {
  const NetworkSpec& spec = snapshot.spec();
  auto probs = [&](const NetworkParams& p) {
    return softmax(evaluate(spec, p, eval.x, StatsMode::RunningStats).logits);
  };
  auto acc = [&](const Matrix& pr) {
    const auto labels = pseudo_labels(pr).labels;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += labels[i] == eval.labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
  };
  const Matrix ps = probs(snapshot.student);
  const Matrix p2 = probs(snapshot.t2);
  return {acc(ps), acc(probs(snapshot.t1)), acc(p2), acc(ensemble(ps, p2))};
}

ReportBuilder::ReportBuilder(std::size_t window, double lambda_stab, ScoreScope scope)
    : window_(window), lambda_stab_(lambda_stab), scope_(scope) {
  if (window_ == 0) throw ConfigError("ma_window", "moving-average window must be >= 1");
}

void ReportBuilder::add_batch(std::size_t domain_id, std::size_t cycle, std::size_t batch_size,
                              std::size_t errors) {
  if (batch_size == 0 || errors > batch_size) throw ShapeError("add_batch: bad counts");
  errors_ += errors;
  samples_ += batch_size;
  auto& d = per_domain_[domain_id];
  d.first += errors;
  d.second += batch_size;
  auto& c = per_cycle_[cycle];
  c.first += errors;
  c.second += batch_size;
  const double acc = 1.0 - static_cast<double>(errors) / static_cast<double>(batch_size);
  if (segments_.empty() || segments_.back().domain_id != domain_id) {
    segments_.push_back({domain_id, steps_, {}, std::nullopt});
  }
  segments_.back().accuracy.push_back(acc);
  all_accuracy_.push_back(acc);
  ++steps_;
}

void ReportBuilder::add_forgetting(std::size_t after_domain, const ForgettingPoint& point) {
  forgetting_after_.push_back(after_domain);
  forgetting_.push_back(point);
}

RunReport ReportBuilder::finish() const {
  RunReport r;
  r.samples = samples_;
  r.overall_error =
      samples_ == 0 ? 0.0 : static_cast<double>(errors_) / static_cast<double>(samples_);
  for (const auto& [id, counts] : per_domain_) {
    r.domain_error[id] = static_cast<double>(counts.first) / static_cast<double>(counts.second);
    r.domain_samples[id] = counts.second;
  }
  for (const auto& [cycle, counts] : per_cycle_) {
    r.cycle_error.resize(cycle + 1, 0.0);
    r.cycle_error[cycle] = static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  r.segments = segments_;
  if (scope_ == ScoreScope::PerSegment) {
    for (auto& s : r.segments) {
      if (s.accuracy.size() >= 2) s.score = adaptation_score(s.accuracy, window_, lambda_stab_);
    }
  }
  if (all_accuracy_.size() >= 2) {
    r.whole_stream = adaptation_score(all_accuracy_, window_, lambda_stab_);
  }
  r.forgetting_initial = forgetting_initial_;
  r.forgetting = forgetting_;
  r.forgetting_after_domain = forgetting_after_;
  return r;
}

std::optional<ForgettingPoint> RunReport::forgetting_drop() const {
  if (!forgetting_initial || forgetting.empty()) return std::nullopt;
  const ForgettingPoint& a = *forgetting_initial;
  const ForgettingPoint& b = forgetting.back();
  return ForgettingPoint{a.student - b.student, a.t1 - b.t1, a.t2 - b.t2, a.ensemble - b.ensemble};
}

nlohmann::ordered_json RunReport::to_json() const {
  auto score_json = [](const std::optional<AdaptationScore>& s) -> nlohmann::ordered_json {
    if (!s) return nullptr;
    return {{"ttp", s->ttp}, {"aps", s->aps}, {"std", s->std}, {"rate", s->rate}};
  };
  nlohmann::ordered_json j;
  j["overall_error"] = overall_error;
  j["samples"] = samples;
  auto domains = nlohmann::ordered_json::array();
  for (const auto& [id, err] : domain_error) {
    domains.push_back({{"domain_id", id}, {"error", err}, {"samples", domain_samples.at(id)}});
  }
  j["domain_error"] = std::move(domains);
  j["cycle_error"] = cycle_error;
  auto segs = nlohmann::ordered_json::array();
  for (const auto& s : segments) {
    segs.push_back({{"domain_id", s.domain_id},
                    {"first_step", s.first_step},
                    {"length", s.accuracy.size()},
                    {"adaptation", score_json(s.score)}});
  }
  j["segments"] = std::move(segs);
  j["whole_stream_adaptation"] = score_json(whole_stream);
  auto curve = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < forgetting.size(); ++i) {
    const auto& f = forgetting[i];
    curve.push_back({{"after_domain", forgetting_after_domain[i]},
                     {"student", f.student},
                     {"t1", f.t1},
                     {"t2", f.t2},
                     {"ensemble", f.ensemble}});
  }
  auto point_json = [](const std::optional<ForgettingPoint>& f) -> nlohmann::ordered_json {
    if (!f) return nullptr;
    return {{"student", f->student}, {"t1", f->t1}, {"t2", f->t2}, {"ensemble", f->ensemble}};
  };
  j["forgetting_initial"] = point_json(forgetting_initial);
  j["forgetting"] = std::move(curve);
  j["forgetting_drop"] = point_json(forgetting_drop());
  return j;
}

}  // namespace slomo
