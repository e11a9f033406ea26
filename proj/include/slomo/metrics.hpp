#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slomo/matrix.hpp"
#include "slomo/streams.hpp"
#include "slomo/trio.hpp"

namespace slomo {

// Value i is the mean of the last min(i + 1, k) entries.
Vector moving_average(std::span<const double> trace, std::size_t k);

// 1-based index of the first moving-average value reaching 80% of its max.
std::size_t time_to_plateau(std::span<const double> trace, std::size_t k);

// Mean of the positive consecutive differences of the moving average (0 if none).
double average_positive_slope(std::span<const double> trace, std::size_t k);

// Population standard deviation of the moving average.
double stability_std(std::span<const double> trace, std::size_t k);

// APS / TTP - lambda * STD
double adaptation_rate(std::span<const double> trace, std::size_t k, double lambda_stab);

struct AdaptationScore {
  std::size_t ttp = 0;
  double aps = 0.0;
  double std = 0.0;
  double rate = 0.0;
};

AdaptationScore adaptation_score(std::span<const double> trace, std::size_t k,
                                 double lambda_stab);

struct ForgettingPoint {
  double student = 0.0;
  double t1 = 0.0;
  double t2 = 0.0;
  double ensemble = 0.0;
};

// Accuracies of a model snapshot on held-out data, RunningStats mode. The
// ensemble averages student and slow-teacher probabilities.
ForgettingPoint forgetting_probe(const ModelTrio& snapshot, const LabeledBatch& eval);

struct Segment {
  std::size_t domain_id = 0;
  std::size_t first_step = 0;  // 0-based step index into the run
  std::vector<double> accuracy;
  std::optional<AdaptationScore> score;  // absent for segments shorter than 2
};

struct RunReport {
  double overall_error = 0.0;
  std::size_t samples = 0;
  std::map<std::size_t, double> domain_error;
  std::map<std::size_t, std::size_t> domain_samples;
  std::vector<double> cycle_error;
  std::vector<Segment> segments;
  std::optional<AdaptationScore> whole_stream;
  std::optional<ForgettingPoint> forgetting_initial;  // before any adaptation
  std::vector<ForgettingPoint> forgetting;
  std::vector<std::size_t> forgetting_after_domain;

  // Initial minus final initial-domain accuracy; absent without probes.
  std::optional<ForgettingPoint> forgetting_drop() const;

  nlohmann::ordered_json to_json() const;
};

enum class ScoreScope { PerSegment, WholeStream };

// Streams per-batch outcomes into a RunReport.
class ReportBuilder {
 public:
  ReportBuilder(std::size_t window, double lambda_stab, ScoreScope scope);

  void add_batch(std::size_t domain_id, std::size_t cycle, std::size_t batch_size,
                 std::size_t errors);
  void set_forgetting_initial(const ForgettingPoint& point) { forgetting_initial_ = point; }
  void add_forgetting(std::size_t after_domain, const ForgettingPoint& point);

  RunReport finish() const;

 private:
  std::size_t window_;
  double lambda_stab_;
  ScoreScope scope_;
  std::size_t errors_ = 0;
  std::size_t samples_ = 0;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> per_domain_;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> per_cycle_;
  std::vector<Segment> segments_;
  std::vector<double> all_accuracy_;
  std::optional<ForgettingPoint> forgetting_initial_;
  std::vector<ForgettingPoint> forgetting_;
  std::vector<std::size_t> forgetting_after_;
  std::size_t steps_ = 0;
};

}  // namespace slomo
