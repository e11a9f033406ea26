#include "slomo/runner.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "slomo/engine.hpp"
#include "slomo/error.hpp"
#include "slomo/reliability.hpp"
#include "slomo/streams.hpp"

namespace slomo {

namespace {

using Json = nlohmann::ordered_json;

constexpr std::uint64_t kProjectorStream = 11;
constexpr std::uint64_t kEngineStream = 12;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::size_t count_errors(std::span<const std::size_t> predicted,
                         std::span<const std::size_t> truth) {
  std::size_t errors = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) errors += predicted[i] != truth[i];
  return errors;
}

std::string join_counts(std::span<const std::size_t> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ';';
    out += std::to_string(values[i]);
  }
  return out;
}

ForgettingPoint frozen_probe(const NetworkSpec& spec, const NetworkParams& source,
                             const LabeledBatch& eval) {
  const double acc = accuracy(spec, source, eval);
  return {acc, acc, acc, acc};
}

}  // namespace

const std::vector<std::string>& step_csv_columns() {
  static const std::vector<std::string> columns{
      "step",          "cycle",         "domain_id",       "group",
      "severity",      "reset",         "batch_size",      "batch_error",
      "loss_sce",      "loss_cl",       "loss_mse",        "loss_im",
      "loss_t2",       "n_selected",    "n_contrastive",   "n_mse",
      "n_noisy_labels", "prototypes_skipped", "inserted",  "replaced_max_entropy",
      "rejected_criteria", "rejected_full", "n_restored",  "queue_sizes",
  };
  return columns;
}

std::string format_real(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

RunArtifacts execute(const RunConfig& config) {
  config.validate();
  const SyntheticTask task(config.task);
  const NetworkSpec spec = config.network();
  NetworkParams source = train_source(task, spec, config.source);
  source.bn_momentum = config.bn_momentum;

  std::vector<Domain> domains =
      make_domains(config.seed_task, config.groups, config.variants_per_group, config.severity);
  std::vector<std::size_t> difficulty;
  const Setting setting = config.schedule.setting;
  if (setting == Setting::Easy2Hard || setting == Setting::Hard2Easy) {
    for (const auto& r : rank_by_source_error(task, spec, source, domains)) {
      difficulty.push_back(r.domain_index);
    }
  }
  StreamSchedule schedule(task, domains, config.schedule, difficulty);

  RunArtifacts out;
  out.source = source;
  const bool adaptive = config.variant != Variant::FrozenSource;
  std::optional<SloMoFast> engine;
  if (adaptive) {
    AdaptationConfig adaptation = config.adaptation;
    adaptation.student_mode =
        config.variant == Variant::SloMoFastStar ? UpdateMode::Full : UpdateMode::BnOnly;
    engine.emplace(ModelTrio(spec, source, mix_seed({config.seed_adapt, kProjectorStream})),
                   adaptation, mix_seed({config.seed_adapt, kEngineStream}));
  }

  ReportBuilder report(config.ma_window, config.lambda_stab, config.score_scope);
  std::optional<LabeledBatch> probe_set;
  auto probe = [&]() {
    return adaptive ? forgetting_probe(engine->trio(), *probe_set)
                    : frozen_probe(spec, source, *probe_set);
  };
  if (config.forgetting && schedule.size() > 0) {
    const EventKey& first = schedule.plan().front();
    Corruption c = domains[first.domain].corruption;
    c.severity = first.severity;
    probe_set = domain_eval_set(task, c);
    report.set_forgetting_initial(probe());
  }

  std::ostringstream csv;
  const auto& columns = step_csv_columns();
  for (std::size_t i = 0; i < columns.size(); ++i) csv << (i ? "," : "") << columns[i];
  csv << '\n';

  for (std::size_t step = 0; step < schedule.size(); ++step) {
    const StreamEvent event = schedule.event(step);
    const std::size_t n = event.batch.x.rows();
    StepDiagnostics diag;
    std::vector<std::size_t> predicted;
    if (adaptive) {
      if (event.reset) engine->reset();
      try {
        StepResult result = engine->adapt_step(event.batch.x);
        predicted = std::move(result.prediction.labels);
        diag = std::move(result.diagnostics);
      } catch (const NumericError& e) {
        out.failure = RunFailure{step, e.what()};
        break;
      }
    } else {
      predicted = pseudo_labels(
                      softmax(evaluate(spec, source, event.batch.x, StatsMode::RunningStats).logits))
                      .labels;
    }
    const std::size_t errors = count_errors(predicted, event.batch.labels);
    diag.batch_error = static_cast<double>(errors) / static_cast<double>(n);
    report.add_batch(event.domain_id, event.cycle, n, errors);

    csv << step + 1 << ',' << event.cycle << ',' << event.domain_id << ',' << event.group << ','
        << event.severity << ',' << (event.reset ? 1 : 0) << ',' << n << ','
        << format_real(*diag.batch_error) << ',' << format_real(diag.loss_sce) << ','
        << format_real(diag.loss_cl) << ',' << format_real(diag.loss_mse) << ','
        << format_real(diag.loss_im) << ',' << format_real(diag.loss_t2) << ','
        << diag.n_selected << ',' << diag.n_contrastive << ',' << diag.n_mse << ','
        << diag.n_noisy_labels << ',' << (diag.prototypes_skipped ? 1 : 0);
    for (std::size_t count : diag.insert_outcomes) csv << ',' << count;
    csv << ',' << diag.n_restored << ',' << join_counts(diag.queue_sizes) << '\n';

    const bool segment_ends =
        step + 1 == schedule.size() || schedule.plan()[step + 1].domain != schedule.plan()[step].domain;
    if (probe_set && segment_ends) report.add_forgetting(event.domain_id, probe());
  }

  out.report = report.finish();
  out.steps_csv = csv.str();
  if (probe_set) {
    std::ostringstream f;
    f << "point,after_domain,student,t1,t2,ensemble\n";
    auto row = [&](const std::string& point, const std::string& after, const ForgettingPoint& p) {
      f << point << ',' << after << ',' << format_real(p.student) << ',' << format_real(p.t1)
        << ',' << format_real(p.t2) << ',' << format_real(p.ensemble) << '\n';
    };
    if (out.report.forgetting_initial) row("0", "", *out.report.forgetting_initial);
    for (std::size_t i = 0; i < out.report.forgetting.size(); ++i) {
      row(std::to_string(i + 1), std::to_string(out.report.forgetting_after_domain[i]),
          out.report.forgetting[i]);
    }
    out.forgetting_csv = f.str();
  }

  Json summary;
  summary["version"] = kVersion;
  summary["config"] = config_to_json(config);
  summary["schedule"] = schedule.describe();
  summary["source"] = {{"clean_accuracy", accuracy(spec, source, task.clean_eval())},
                       {"checksum", hex64(checksum(source))}};
  Json status;
  status["completed"] = !out.failure.has_value();
  status["steps"] = out.failure ? out.failure->last_good_step : schedule.size();
  if (out.failure) {
    status["last_good_step"] = out.failure->last_good_step;
    status["error"] = out.failure->message;
  }
  summary["status"] = std::move(status);
  summary["report"] = out.report.to_json();
  if (adaptive) {
    const ModelTrio& trio = engine->trio();
    summary["final_checksums"] = {{"student", hex64(checksum(trio.student))},
                                  {"t1", hex64(checksum(trio.t1))},
                                  {"t2", hex64(checksum(trio.t2))},
                                  {"projector", hex64(checksum(trio.projector))}};
    out.models = trio;
  }
  out.summary_json = summary.dump(2) + "\n";
  return out;
}

void write_artifacts(const RunArtifacts& artifacts, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream file(dir / name, std::ios::binary);
    if (!file) throw ConfigError("output_dir", "cannot write " + (dir / name).string());
    file << text;
  };
  write("steps.csv", artifacts.steps_csv);
  write("summary.json", artifacts.summary_json);
  if (!artifacts.forgetting_csv.empty()) write("forgetting.csv", artifacts.forgetting_csv);
}

std::string compare_summaries(const nlohmann::ordered_json& a, const nlohmann::ordered_json& b,
                              const std::string& name_a, const std::string& name_b) {
  auto describe = [](const Json& s, const std::string& name) {
    std::string text = name + " (setting " + s.at("schedule").at("setting").get<std::string>() +
                       ", domains";
    for (const auto& d : s.at("schedule").at("domains")) text += " " + d.at("name").get<std::string>();
    return text + ")";
  };
  auto domain_names = [](const Json& s) {
    std::vector<std::pair<std::size_t, std::string>> out;
    for (const auto& d : s.at("schedule").at("domains")) {
      out.emplace_back(d.at("id").get<std::size_t>(), d.at("name").get<std::string>());
    }
    return out;
  };
  if (domain_names(a) != domain_names(b)) {
    throw ConfigError("schedule", "schedules differ: " + describe(a, name_a) + " vs " +
                                      describe(b, name_b));
  }
  auto errors = [](const Json& s) {
    std::map<std::size_t, double> out;
    for (const auto& d : s.at("report").at("domain_error")) {
      out[d.at("domain_id").get<std::size_t>()] = d.at("error").get<double>();
    }
    return out;
  };
  const auto ea = errors(a);
  const auto eb = errors(b);
  std::set<std::size_t> ids_a;
  std::set<std::size_t> ids_b;
  for (const auto& [id, e] : ea) ids_a.insert(id);
  for (const auto& [id, e] : eb) ids_b.insert(id);
  if (ids_a != ids_b) {
    throw ConfigError("schedule", "runs cover different domains: " + describe(a, name_a) + " vs " +
                                      describe(b, name_b));
  }
  std::ostringstream csv;
  csv << "scope,domain_id,name,error_a,error_b,delta\n";
  const double oa = a.at("report").at("overall_error").get<double>();
  const double ob = b.at("report").at("overall_error").get<double>();
  csv << "overall,,," << format_real(oa) << ',' << format_real(ob) << ',' << format_real(ob - oa)
      << '\n';
  for (const auto& [id, name] : domain_names(a)) {
    if (!ea.contains(id)) continue;
    csv << "domain," << id << ',' << name << ',' << format_real(ea.at(id)) << ','
        << format_real(eb.at(id)) << ',' << format_real(eb.at(id) - ea.at(id)) << '\n';
  }
  return csv.str();
}

std::string rank_csv(const RunConfig& config) {
  config.validate();
  const SyntheticTask task(config.task);
  const NetworkSpec spec = config.network();
  const NetworkParams source = train_source(task, spec, config.source);
  const auto domains =
      make_domains(config.seed_task, config.groups, config.variants_per_group, config.severity);
  std::ostringstream csv;
  csv << "rank,domain_id,name,error\n";
  std::size_t rank = 1;
  for (const auto& r : rank_by_source_error(task, spec, source, domains)) {
    const Domain& d = domains[r.domain_index];
    csv << rank++ << ',' << d.id << ',' << d.name << ',' << format_real(r.error) << '\n';
  }
  return csv.str();
}

}  // namespace slomo
