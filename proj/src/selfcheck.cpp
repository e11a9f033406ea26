#include "slomo/selfcheck.hpp"

#include <random>

#include "slomo/engine.hpp"
#include "slomo/losses.hpp"
#include "slomo/network.hpp"
#include "slomo/rng.hpp"
#include "slomo/trio.hpp"

namespace slomo {

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = gauss(rng);
  return m;
}

// Random BN affine values so gamma/beta gradients are not evaluated at the
// special point (1, 0).
NetworkParams perturbed_params(const NetworkSpec& spec, std::uint64_t seed) {
  NetworkParams p = init_params(spec, seed);
  Rng rng(mix_seed({seed, 77}));
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& layer : p.layers) {
    for (double& v : layer.bias) v = u(rng);
    for (double& v : layer.gamma) v = 1.0 + u(rng);
    for (double& v : layer.beta) v = u(rng);
    for (double& v : layer.running_mean) v = u(rng);
    for (double& v : layer.running_var) v = 1.0 + u(rng);
  }
  return p;
}

GradCheckReport network_check(std::uint64_t seed, StatsMode mode, double eps, bool corrupt) {
  Rng rng(seed);
  const NetworkSpec spec = make_mlp(6, {5, 4}, 3, 1);
  const NetworkParams params = perturbed_params(spec, seed);
  const Matrix x = random_matrix(8, 6, rng);
  const Matrix c = random_matrix(8, 3, rng);
  const Matrix d = random_matrix(8, 4, rng);
  auto loss = [&](const NetworkParams& p) {
    const ForwardResult r = evaluate(spec, p, x, mode);
    double v = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double l = r.logits.data()[i];
      v += c.data()[i] * l + 0.5 * l * l;
    }
    for (std::size_t i = 0; i < d.size(); ++i) v += d.data()[i] * r.features.data()[i];
    return v;
  };
  const ForwardResult r = evaluate(spec, params, x, mode);
  Matrix grad_logits = c;
  for (std::size_t i = 0; i < c.size(); ++i) grad_logits.data()[i] += r.logits.data()[i];
  ParamGrads g = backward(spec, params, r.cache, grad_logits, &d);
  if (corrupt) leaf(g, 0, LeafKind::Weight)[0] += 1e-2;
  return finite_diff_check(spec, params, loss, g, eps);
}

Matrix random_probs(std::size_t rows, std::size_t cols, Rng& rng) {
  return softmax(random_matrix(rows, cols, rng, 2.0));
}

GradCheckReport sce_check(std::uint64_t seed, double eps) {
  Rng rng(seed);
  const Matrix p = random_probs(6, 4, rng);
  const Matrix q = random_matrix(6, 4, rng, 2.0);
  return finite_diff_check(q, [&](const Matrix& z) { return sce(p, z).value; }, sce(p, q).grad,
                           eps);
}

GradCheckReport contrastive_check(std::uint64_t seed, double eps) {
  Rng rng(seed);
  const Matrix e = random_matrix(9, 8, rng);
  auto value = [&](const Matrix& z) { return contrastive({z, 0.1}).value; };
  return finite_diff_check(e, value, contrastive({e, 0.1}).grad, eps);
}

GradCheckReport mse_check(std::uint64_t seed, double eps) {
  Rng rng(seed);
  const Matrix z = random_matrix(5, 4, rng);
  const Matrix p = random_matrix(5, 4, rng);
  return finite_diff_check(z, [&](const Matrix& f) { return mse_proto(f, p).value; },
                           mse_proto(z, p).grad, eps);
}

GradCheckReport im_check(std::uint64_t seed, double eps) {
  Rng rng(seed);
  const Matrix logits = random_matrix(8, 4, rng, 2.0);
  return finite_diff_check(logits, [](const Matrix& z) { return im_loss(z).value; },
                           im_loss(logits).grad, eps);
}

GradCheckReport t2_check(std::uint64_t seed, double eps) {
  Rng rng(seed);
  const NetworkSpec spec = make_mlp(6, {8, 6}, 4, 1);
  const NetworkSpec proj_spec = projector_spec_for(spec.feature_dim());
  const NetworkParams t2 = perturbed_params(spec, seed);
  const NetworkParams proj = perturbed_params(proj_spec, mix_seed({seed, 5}));
  SlowTeacherBatch batch;
  batch.x = random_matrix(8, 6, rng);
  batch.x_view = batch.x;
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (double& v : batch.x_view.data()) v += jitter(rng);
  batch.contrastive_rows = {1, 3, 4};
  batch.contrastive_prototypes = random_matrix(3, spec.feature_dim(), rng);
  batch.mse_rows = {0, 3, 6};
  batch.mse_prototypes = random_matrix(3, spec.feature_dim(), rng);
  const LossWeights w{1.0, 1.0, 1.0};
  const SlowTeacherLoss analytic = slow_teacher_loss(spec, t2, proj_spec, proj, batch, w, 0.1);
  GradCheckReport report = finite_diff_check(
      spec, t2,
      [&](const NetworkParams& p) {
        return slow_teacher_loss(spec, p, proj_spec, proj, batch, w, 0.1).value;
      },
      analytic.t2, eps);
  report.worst_leaf = "t2." + report.worst_leaf;
  merge_report(report,
               finite_diff_check(
                   proj_spec, proj,
                   [&](const NetworkParams& p) {
                     return slow_teacher_loss(spec, t2, proj_spec, p, batch, w, 0.1).value;
                   },
                   analytic.projector, eps),
               "projector.");
  return report;
}

}  // namespace

GradcheckSuite run_gradcheck_suite(const GradcheckOptions& options) {
  GradcheckSuite suite;
  auto run = [&](const std::string& name, auto&& check) {
    GradcheckLine line{name, {}, 0};
    for (std::size_t s = 0; s < options.seeds; ++s) {
      merge_report(line.worst, check(mix_seed({s, 1000})));
      ++line.checks;
    }
    suite.lines.push_back(std::move(line));
  };
  const double eps = options.eps;
  run("network_batch_stats", [&](std::uint64_t s) {
    return network_check(s, StatsMode::BatchStats, eps, options.corrupt_leaf);
  });
  run("network_running_stats",
      [&](std::uint64_t s) { return network_check(s, StatsMode::RunningStats, eps, false); });
  run("sce", [&](std::uint64_t s) { return sce_check(s, eps); });
  run("contrastive", [&](std::uint64_t s) { return contrastive_check(s, eps); });
  run("mse", [&](std::uint64_t s) { return mse_check(s, eps); });
  run("im", [&](std::uint64_t s) { return im_check(s, eps); });
  run("t2_objective", [&](std::uint64_t s) { return t2_check(s, eps); });
  suite.passed = true;
  for (const auto& line : suite.lines) {
    if (!(line.worst.max_rel_error < options.tolerance)) suite.passed = false;
  }
  return suite;
}

}  // namespace slomo
