#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "slomo/config.hpp"
#include "slomo/error.hpp"
#include "slomo/runner.hpp"
#include "slomo/selfcheck.hpp"

namespace fs = std::filesystem;
using slomo::ConfigError;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::vector<std::string> split_runs(const std::string& overrides) {
  std::vector<std::string> runs;
  std::stringstream in(overrides);
  std::string item;
  while (std::getline(in, item, ';')) {
    if (!item.empty()) runs.push_back(item);
  }
  if (runs.empty()) runs.emplace_back();
  return runs;
}

fs::path output_dir(const slomo::RunConfig& config, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SLOMO_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return config.output_dir;
}

struct RunOutcome {
  int status = kExitOk;
  std::string message;
};

int cmd_run(const std::string& config_path, const std::string& out_flag,
            const std::string& seed_overrides, std::size_t jobs) {
  slomo::RunConfig base;
  try {
    base = slomo::load_config(config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error [" << e.key() << "]: " << e.what() << "\n";
    return kExitConfig;
  }
  const fs::path root = output_dir(base, out_flag);
  const auto runs = split_runs(seed_overrides);
  std::vector<RunOutcome> outcomes(runs.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      RunOutcome& outcome = outcomes[i];
      std::ostringstream msg;
      try {
        slomo::RunConfig config = base;
        slomo::apply_seed_overrides(config, runs[i]);
        config.validate();
        const fs::path dir = runs.size() == 1 ? root : root / ("run" + std::to_string(i + 1));
        const slomo::RunArtifacts artifacts = slomo::execute(config);
        slomo::write_artifacts(artifacts, dir);
        if (artifacts.failure) {
          msg << "numeric blow-up at step " << artifacts.failure->last_good_step + 1
              << "; last good step " << artifacts.failure->last_good_step << ": "
              << artifacts.failure->message << " (partial artifacts in " << dir.string() << ")";
          outcome.status = kExitNumeric;
        } else {
          msg << "overall error " << slomo::format_real(artifacts.report.overall_error) << " over "
              << artifacts.report.samples << " samples -> " << dir.string();
        }
      } catch (const ConfigError& e) {
        msg << "config error [" << e.key() << "]: " << e.what();
        outcome.status = kExitConfig;
      } catch (const slomo::NumericError& e) {
        msg << "numeric error before the stream started: " << e.what();
        outcome.status = kExitNumeric;
      } catch (const std::exception& e) {
        msg << "error: " << e.what();
        outcome.status = kExitFailure;
      }
      outcome.message = msg.str();
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(jobs, runs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  int status = kExitOk;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& o = outcomes[i];
    std::ostream& stream = o.status == kExitOk ? std::cout : std::cerr;
    if (runs.size() > 1) stream << "[run" << i + 1 << " " << runs[i] << "] ";
    stream << o.message << "\n";
    status = std::max(status, o.status);
  }
  return status;
}

int cmd_gradcheck(double eps, std::size_t seeds, bool corrupt) {
  slomo::GradcheckOptions options;
  options.eps = eps;
  options.seeds = seeds;
  options.corrupt_leaf = corrupt;
  std::printf("gradcheck eps=%g seeds=%zu tolerance=%g%s\n", eps, seeds, options.tolerance,
              corrupt ? " (corrupted gradient fixture)" : "");
  slomo::GradcheckSuite suite;
  try {
    suite = slomo::run_gradcheck_suite(options);
  } catch (const ConfigError& e) {
    std::cerr << "config error [" << e.key() << "]: " << e.what() << "\n";
    return kExitConfig;
  }
  for (const auto& line : suite.lines) {
    const bool ok = line.worst.max_rel_error < options.tolerance;
    std::printf("%-22s max_rel_error=%.3e %s", line.name.c_str(), line.worst.max_rel_error,
                ok ? "ok" : "FAIL");
    if (!ok) std::printf(" leaf=%s", line.worst.worst_leaf.c_str());
    std::printf("\n");
  }
  return suite.passed ? kExitOk : kExitFailure;
}

nlohmann::ordered_json read_summary(const std::string& path) {
  fs::path p = path;
  if (fs::is_directory(p)) p /= "summary.json";
  std::ifstream in(p);
  if (!in) throw ConfigError("summary", "cannot read " + p.string());
  return nlohmann::ordered_json::parse(in);
}

int cmd_compare(const std::string& a, const std::string& b, const std::string& out) {
  try {
    const std::string csv = slomo::compare_summaries(read_summary(a), read_summary(b), a, b);
    std::cout << csv;
    if (!out.empty()) {
      fs::create_directories(out);
      std::ofstream(fs::path(out) / "compare.csv", std::ios::binary) << csv;
    }
  } catch (const ConfigError& e) {
    std::cerr << "compare error [" << e.key() << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "compare error: malformed summary: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_rank(const std::string& config_path, const std::string& out) {
  try {
    const std::string csv = slomo::rank_csv(slomo::load_config(config_path));
    std::cout << csv;
    if (!out.empty()) {
      fs::create_directories(out);
      std::ofstream(fs::path(out) / "rank.csv", std::ios::binary) << csv;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error [" << e.key() << "]: " << e.what() << "\n";
    return kExitConfig;
  } catch (const slomo::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-teacher continual test-time adaptation simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", slomo::kVersion);

  std::string config_path;
  std::string out;
  std::string seed_overrides;
  std::size_t jobs = 1;
  auto* run = app.add_subcommand("run", "run one configured stream");
  run->add_option("--config", config_path, "key = value config file")->required();
  run->add_option("--out", out, "output directory (overrides config and SLOMO_OUT_DIR)");
  run->add_option("--seed-overrides", seed_overrides,
                  "seed_task=1,seed_adapt=2; separate independent runs with ';'");
  run->add_option("--jobs", jobs, "parallel runs")->check(CLI::PositiveNumber);

  double eps = 1e-5;
  std::size_t seeds = 20;
  bool corrupt = false;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference self-check");
  grad->add_option("--eps", eps, "central-difference step");
  grad->add_option("--seeds", seeds, "random instances per check")->check(CLI::PositiveNumber);
  grad->add_flag("--corrupt-leaf", corrupt, "perturb one analytic gradient (negative control)");

  std::string summary_a;
  std::string summary_b;
  auto* compare = app.add_subcommand("compare", "per-domain error deltas of two runs");
  compare->add_option("a", summary_a, "summary.json or run directory")->required();
  compare->add_option("b", summary_b, "summary.json or run directory")->required();
  compare->add_option("--out", out, "directory for compare.csv");

  auto* rank = app.add_subcommand("rank", "domains ordered by frozen-source error");
  rank->add_option("--config", config_path, "key = value config file")->required();
  rank->add_option("--out", out, "directory for rank.csv");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return cmd_run(config_path, out, seed_overrides, jobs);
  if (grad->parsed()) return cmd_gradcheck(eps, seeds, corrupt);
  if (compare->parsed()) return cmd_compare(summary_a, summary_b, out);
  if (rank->parsed()) return cmd_rank(config_path, out);
  return kExitFailure;
}
