#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "slomo/losses.hpp"
#include "slomo/matrix.hpp"
#include "slomo/network.hpp"
#include "slomo/protostore.hpp"
#include "slomo/reliability.hpp"
#include "slomo/rng.hpp"
#include "slomo/trio.hpp"

namespace slomo {

struct AdaptationConfig {
  double ema_retention = 0.99;  // alpha: weight kept on the fast teacher
  double sigma = 0.5;           // entropy threshold
  double delta = 0.2;           // PLPD threshold
  double tau = 0.1;             // contrastive temperature
  LossWeights weights;          // lambda_cl, lambda_mse, lambda_im
  std::optional<double> prior_smoothing;  // gamma; 1 / num_classes when unset
  std::size_t queue_size = 10;
  std::size_t evict_interval = 50;
  double restore_prob = 0.01;
  double lr_student = 0.2;
  double lr_t2 = 0.04;
  UpdateMode student_mode = UpdateMode::BnOnly;
  double pl_noise_ratio = 0.0;
  std::size_t batch_size = 64;
  std::vector<Augmentation> plpd_augmentations = default_plpd_augmentations();
  Augmentation contrastive_view = Augmentation::additive_jitter(0.05);

  // Throws ConfigError naming the offending key.
  void validate() const;
  double gamma_for(std::size_t num_classes) const {
    return prior_smoothing.value_or(1.0 / static_cast<double>(num_classes));
  }
};

struct EnsemblePrediction {
  Matrix probs;
  std::vector<std::size_t> labels;
};

struct StepDiagnostics {
  double loss_sce = 0.0;
  double loss_cl = 0.0;
  double loss_mse = 0.0;
  double loss_im = 0.0;
  double loss_t2 = 0.0;
  std::size_t n_selected = 0;     // disagreement set size
  std::size_t n_contrastive = 0;  // selected samples that entered the contrastive batch
  std::size_t n_mse = 0;          // samples whose pseudo-label class had a prototype
  std::size_t n_noisy_labels = 0;
  bool prototypes_skipped = false;  // contrastive and MSE terms were not applied
  std::vector<std::size_t> queue_sizes;
  // Indexed by InsertOutcome.
  std::array<std::size_t, 4> insert_outcomes{};
  std::size_t n_restored = 0;
  std::optional<double> batch_error;  // filled by callers holding labels
};

struct StepResult {
  EnsemblePrediction prediction;
  StepDiagnostics diagnostics;
  // Intermediates from the pre-update models, kept for replay checks.
  Matrix probs_t1;
  Matrix probs_t2;
  Matrix probs_student;
  std::vector<std::size_t> queue_labels;  // pseudo-labels after noise injection
};

// Row-wise sum of the two distributions, renormalized.
Matrix ensemble(const Matrix& probs_student, const Matrix& probs_t2);

// Smoothed batch prior (p_hat + gamma) / (1 + gamma * C).
Vector smoothed_prior(const Matrix& probs, double gamma);

// Reweights each row by the smoothed batch prior and renormalizes.
Matrix prior_correct(const Matrix& probs, double gamma);

EnsemblePrediction predict(const Matrix& probs_student, const Matrix& probs_t2, double gamma);

// Inputs for one slow-teacher update with selection already resolved.
struct SlowTeacherBatch {
  Matrix x;
  Matrix x_view;  // augmented copy of x
  std::vector<std::size_t> contrastive_rows;
  Matrix contrastive_prototypes;  // nearest prototype per contrastive row
  std::vector<std::size_t> mse_rows;
  Matrix mse_prototypes;  // pseudo-label prototype per MSE row
};

struct SlowTeacherLoss {
  double value = 0.0;
  double cl = 0.0;
  double mse = 0.0;
  double im = 0.0;
  ParamGrads t2;
  ParamGrads projector;
};

// Weighted contrastive + MSE + IM objective and its exact gradients with
// respect to every slow-teacher and projector leaf. Prototypes are constants.
// Forwards run in BatchStats mode without touching running statistics.
SlowTeacherLoss slow_teacher_loss(const NetworkSpec& spec, const NetworkParams& t2,
                                  const NetworkSpec& projector_spec,
                                  const NetworkParams& projector, const SlowTeacherBatch& batch,
                                  const LossWeights& weights, double tau);

// One online step of dual-teacher adaptation: predict with the current
// models, then update queues, slow teacher, student and fast teacher.
class SloMoFast {
 public:
  SloMoFast(ModelTrio trio, AdaptationConfig config, std::uint64_t seed);

  StepResult adapt_step(const Matrix& x);

  // Episodic reset: all models back to the source, queues emptied.
  void reset();

  const ModelTrio& trio() const { return trio_; }
  const PrototypeStore& store() const { return store_; }
  const AdaptationConfig& config() const { return config_; }

 private:
  ModelTrio trio_;
  AdaptationConfig config_;
  PrototypeStore store_;
  MaskSelection student_mask_;
  MaskSelection t2_mask_;
  TrainableMask projector_mask_;
  // One stream per purpose, so toggling a knob leaves the other draws unchanged.
  Rng plpd_rng_;
  Rng noise_rng_;
  Rng view_rng_;
  Rng restore_rng_;
};

}  // namespace slomo
