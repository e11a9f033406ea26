#include "slomo/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "slomo/error.hpp"

namespace slomo {

void AdaptationConfig::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(ema_retention)) throw ConfigError("alpha", "alpha must lie in [0, 1]");
  if (!(sigma > 0.0)) throw ConfigError("sigma", "sigma must be > 0");
  if (!std::isfinite(delta)) throw ConfigError("delta", "delta must be finite");
  if (!(tau > 0.0)) throw ConfigError("tau", "tau must be > 0");
  if (weights.cl < 0.0) throw ConfigError("lambda_cl", "lambda_cl must be >= 0");
  if (weights.mse < 0.0) throw ConfigError("lambda_mse", "lambda_mse must be >= 0");
  if (weights.im < 0.0) throw ConfigError("lambda_im", "lambda_im must be >= 0");
  if (prior_smoothing && !(*prior_smoothing >= 0.0)) {
    throw ConfigError("gamma", "gamma must be >= 0");
  }
  if (queue_size < 1) throw ConfigError("queue_size", "queue_size must be >= 1");
  if (evict_interval < 1) throw ConfigError("evict_interval", "evict_interval must be >= 1");
  if (!in_unit(restore_prob)) throw ConfigError("restore_prob", "must lie in [0, 1]");
  if (!(lr_student >= 0.0)) throw ConfigError("lr_student", "lr_student must be >= 0");
  if (!(lr_t2 >= 0.0)) throw ConfigError("lr_t2", "lr_t2 must be >= 0");
  if (!in_unit(pl_noise_ratio)) throw ConfigError("pl_noise_ratio", "must lie in [0, 1]");
  if (batch_size < 2) throw ConfigError("batch_size", "batch_size must be >= 2");
  if (plpd_augmentations.empty()) {
    throw ConfigError("plpd_augmentations", "need at least one augmentation");
  }
}

Matrix ensemble(const Matrix& probs_student, const Matrix& probs_t2) {
  require_same_shape(probs_student, probs_t2, "ensemble");
  Matrix out(probs_student.rows(), probs_student.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < out.cols(); ++c) {
      out(r, c) = probs_student(r, c) + probs_t2(r, c);
      sum += out(r, c);
    }
    for (double& v : out.row(r)) v /= sum;
  }
  return out;
}

Vector smoothed_prior(const Matrix& probs, double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("gamma", "gamma must be >= 0");
  const std::size_t classes = probs.cols();
  Vector prior(classes, 0.0);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    for (std::size_t c = 0; c < classes; ++c) prior[c] += probs(r, c);
  }
  const double inv_n = 1.0 / static_cast<double>(probs.rows());
  const double denom = 1.0 + gamma * static_cast<double>(classes);
  for (double& v : prior) v = (v * inv_n + gamma) / denom;
  return prior;
}

Matrix prior_correct(const Matrix& probs, double gamma) {
  const Vector prior = smoothed_prior(probs, gamma);
  // The learned prior is taken as uniform; dividing by it cancels in the
  // row normalization.
  Matrix out(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) {
      out(r, c) = probs(r, c) * prior[c];
      sum += out(r, c);
    }
    if (sum > 0.0) {
      for (double& v : out.row(r)) v /= sum;
    } else {
      out.set_row(r, probs.row(r));
    }
  }
  return out;
}

EnsemblePrediction predict(const Matrix& probs_student, const Matrix& probs_t2, double gamma) {
  EnsemblePrediction out;
  out.probs = prior_correct(ensemble(probs_student, probs_t2), gamma);
  out.labels = pseudo_labels(out.probs).labels;
  return out;
}

namespace {

void scatter_rows(Matrix& into, std::span<const std::size_t> rows, const Matrix& from,
                  std::size_t from_offset, double scale) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto dst = into.row(rows[i]);
    auto src = from.row(from_offset + i);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
  }
}

}  // namespace

SlowTeacherLoss slow_teacher_loss(const NetworkSpec& spec, const NetworkParams& t2,
                                  const NetworkSpec& projector_spec,
                                  const NetworkParams& projector, const SlowTeacherBatch& batch,
                                  const LossWeights& weights, double tau) {
  const ForwardResult main = evaluate(spec, t2, batch.x, StatsMode::BatchStats);
  const std::size_t n = batch.x.rows();
  const std::size_t e = spec.feature_dim();

  const LossResult im = im_loss(main.logits);
  LossResult cl;
  LossResult mse;
  Matrix grad_features(n, e);
  Matrix grad_view_features(n, e);
  SlowTeacherLoss out;
  out.projector = zero_grads(projector_spec);
  std::optional<ForwardResult> view;

  const auto& crows = batch.contrastive_rows;
  if (!crows.empty()) {
    if (batch.contrastive_prototypes.rows() != crows.size()) {
      throw ShapeError("slow_teacher_loss: one prototype per contrastive row required");
    }
    view = evaluate(spec, t2, batch.x_view, StatsMode::BatchStats);
    const Matrix anchors = main.features.select_rows(crows);
    const Matrix views = view->features.select_rows(crows);
    const Matrix stacked = vstack({&anchors, &views, &batch.contrastive_prototypes});
    const ForwardResult projected =
        evaluate(projector_spec, projector, stacked, StatsMode::BatchStats);
    cl = contrastive({projected.logits, tau});
    Backprop bp = backward_with_input(projector_spec, projector, projected.cache, cl.grad);
    bp.params *= weights.cl;
    out.projector = std::move(bp.params);
    scatter_rows(grad_features, crows, bp.input, 0, weights.cl);
    scatter_rows(grad_view_features, crows, bp.input, crows.size(), weights.cl);
  }
  if (!batch.mse_rows.empty()) {
    mse = mse_proto(main.features.select_rows(batch.mse_rows), batch.mse_prototypes);
  }
  const T2Objective objective = t2_objective(cl, mse, im, weights);
  if (!batch.mse_rows.empty()) scatter_rows(grad_features, batch.mse_rows, objective.grad_features, 0, 1.0);

  out.value = objective.value;
  out.cl = cl.value;
  out.mse = mse.value;
  out.im = im.value;
  out.t2 = backward(spec, t2, main.cache, objective.grad_logits, &grad_features);
  if (view) {
    const Matrix no_logit_grad(n, spec.num_classes);
    out.t2 += backward(spec, t2, view->cache, no_logit_grad, &grad_view_features);
  }
  return out;
}

SloMoFast::SloMoFast(ModelTrio trio, AdaptationConfig config, std::uint64_t seed)
    : trio_(std::move(trio)),
      config_(std::move(config)),
      store_(StoreOptions{trio_.spec().num_classes, trio_.spec().feature_dim(), config_.queue_size,
                          config_.evict_interval, config_.sigma, config_.delta}),
      student_mask_(trainable_mask(trio_.spec(), config_.student_mode)),
      t2_mask_(trainable_mask(trio_.spec(), UpdateMode::BnOnly)),
      projector_mask_(full_mask(trio_.projector_spec())),
      plpd_rng_(mix_seed({seed, 1})),
      noise_rng_(mix_seed({seed, 2})),
      view_rng_(mix_seed({seed, 3})),
      restore_rng_(mix_seed({seed, 4})) {
  config_.validate();
}

void SloMoFast::reset() {
  trio_.reset();
  store_.clear();
}

StepResult SloMoFast::adapt_step(const Matrix& x) {
  const NetworkSpec& spec = trio_.spec();
  const std::size_t n = x.rows();
  const std::size_t classes = spec.num_classes;
  if (n < 2) throw ShapeError("adapt_step needs a batch of at least 2");
  StepResult result;
  StepDiagnostics& diag = result.diagnostics;

  // Fast teacher: pseudo-labels, entropies, stability under augmentation.
  const ForwardResult fast = forward(spec, trio_.t1, x, StatsMode::BatchStats);
  result.probs_t1 = softmax(fast.logits);
  const PseudoLabels pl = pseudo_labels(result.probs_t1);
  const Vector entropies = row_entropies(result.probs_t1);
  const NetworkParams& t1 = trio_.t1;
  const Vector stability = plpd(
      [&](const Matrix& input) {
        return softmax(evaluate(spec, t1, input, StatsMode::BatchStats).logits);
      },
      x, pl.labels, config_.plpd_augmentations, plpd_rng_);

  std::vector<std::size_t> queue_labels = pl.labels;
  if (config_.pl_noise_ratio > 0.0 && classes > 1) {
    const auto flips =
        static_cast<std::size_t>(std::llround(config_.pl_noise_ratio * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), noise_rng_);
    std::uniform_int_distribution<std::size_t> other(1, classes - 1);
    for (std::size_t i = 0; i < flips; ++i) {
      auto& label = queue_labels[order[i]];
      label = (label + other(noise_rng_)) % classes;
    }
    diag.n_noisy_labels = flips;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const InsertOutcome outcome =
        store_.try_insert(queue_labels[i], fast.features.row(i), entropies[i], stability[i]);
    ++diag.insert_outcomes[static_cast<std::size_t>(outcome)];
  }
  store_.tick();

  // Slow teacher: contrastive + MSE on the disagreement set, IM on the batch.
  const ForwardResult slow = forward(spec, trio_.t2, x, StatsMode::BatchStats);
  result.probs_t2 = softmax(slow.logits);
  const std::vector<bool> selected =
      select_disagreement(result.probs_t1, result.probs_t2, config_.sigma);
  diag.n_selected = static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true));

  SlowTeacherBatch batch;
  batch.x = x;
  std::vector<Vector> nearest;
  std::vector<Vector> targets;
  for (std::size_t i = 0; i < n; ++i) {
    if (!selected[i]) continue;
    const auto feature = slow.features.row(i);
    if (!(norm(feature) > 0.0)) continue;
    if (auto match = store_.nearest_prototype(feature)) {
      batch.contrastive_rows.push_back(i);
      nearest.push_back(*store_.prototype(match->label));
    }
    if (const auto& proto = store_.prototype(queue_labels[i])) {
      batch.mse_rows.push_back(i);
      targets.push_back(*proto);
    }
  }
  auto to_matrix = [&](const std::vector<Vector>& rows) {
    Matrix m(rows.size(), spec.feature_dim());
    for (std::size_t i = 0; i < rows.size(); ++i) m.set_row(i, rows[i]);
    return m;
  };
  batch.contrastive_prototypes = to_matrix(nearest);
  batch.mse_prototypes = to_matrix(targets);
  if (!batch.contrastive_rows.empty()) batch.x_view = config_.contrastive_view.apply(x, view_rng_);
  diag.prototypes_skipped = batch.contrastive_rows.empty() && batch.mse_rows.empty();

  SlowTeacherLoss t2_loss;
  try {
    t2_loss = slow_teacher_loss(spec, trio_.t2, trio_.projector_spec(), trio_.projector, batch,
                                config_.weights, config_.tau);
  } catch (const NumericError&) {
    // A dead projection (all-zero embedding) leaves only the IM term usable.
    batch.contrastive_rows.clear();
    batch.contrastive_prototypes = Matrix(0, spec.feature_dim());
    t2_loss = slow_teacher_loss(spec, trio_.t2, trio_.projector_spec(), trio_.projector, batch,
                                config_.weights, config_.tau);
  }
  diag.n_contrastive = batch.contrastive_rows.size();
  diag.n_mse = batch.mse_rows.size();
  diag.loss_cl = t2_loss.cl;
  diag.loss_mse = t2_loss.mse;
  diag.loss_im = t2_loss.im;
  diag.loss_t2 = t2_loss.value;
  apply_sgd(trio_.t2, t2_loss.t2, config_.lr_t2, t2_mask_.mask);
  apply_sgd(trio_.projector, t2_loss.projector, config_.lr_t2, projector_mask_);
  diag.n_restored = stochastic_restore(trio_.t2, trio_.source(), config_.restore_prob, restore_rng_);

  // Student: symmetric cross-entropy against both (pre-update) teachers.
  const ForwardResult student = forward(spec, trio_.student, x, StatsMode::BatchStats);
  result.probs_student = softmax(student.logits);
  LossResult st = sce(result.probs_t1, student.logits);
  const LossResult st2 = sce(result.probs_t2, student.logits);
  st.value += st2.value;
  for (std::size_t i = 0; i < st.grad.size(); ++i) st.grad.data()[i] += st2.grad.data()[i];
  diag.loss_sce = st.value;
  const ParamGrads student_grads = backward(spec, trio_.student, student.cache, st.grad);
  apply_sgd(trio_.student, student_grads, config_.lr_student, student_mask_.mask);

  ema_update(trio_.t1, trio_.student, config_.ema_retention);

  for (const NetworkParams* p : {&trio_.student, &trio_.t1, &trio_.t2, &trio_.projector}) {
    for (const auto& l : p->layers) {
      if (!l.weight.all_finite()) throw NumericError("adaptation produced non-finite parameters");
      for (const Vector* v : {&l.bias, &l.gamma, &l.beta, &l.running_mean, &l.running_var}) {
        for (double value : *v) {
          if (!std::isfinite(value)) {
            throw NumericError("adaptation produced non-finite parameters");
          }
        }
      }
    }
  }

  diag.queue_sizes = store_.queue_sizes();
  result.queue_labels = std::move(queue_labels);
  result.prediction =
      predict(result.probs_student, result.probs_t2, config_.gamma_for(classes));
  return result;
}

}  // namespace slomo
