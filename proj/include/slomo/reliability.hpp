#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "slomo/matrix.hpp"
#include "slomo/rng.hpp"

namespace slomo {

// Input perturbations on flat feature vectors, the vector-space analogues of
// patch shuffling, center occlusion and pixel noise.
enum class AugmentationKind { Identity, SegmentShuffle, CenterOcclusion, AdditiveJitter };

struct Augmentation {
  AugmentationKind kind = AugmentationKind::Identity;
  // SegmentShuffle: block count. CenterOcclusion: zeroed fraction.
  // AdditiveJitter: noise standard deviation.
  double param = 0.0;

  static Augmentation identity() { return {AugmentationKind::Identity, 0.0}; }
  static Augmentation segment_shuffle(std::size_t segments = 4) {
    return {AugmentationKind::SegmentShuffle, static_cast<double>(segments)};
  }
  static Augmentation center_occlusion(double fraction = 0.25) {
    return {AugmentationKind::CenterOcclusion, fraction};
  }
  static Augmentation additive_jitter(double scale = 0.05) {
    return {AugmentationKind::AdditiveJitter, scale};
  }

  // Output has the input's shape; draws only from `rng`.
  Matrix apply(const Matrix& x, Rng& rng) const;
};

std::vector<Augmentation> default_plpd_augmentations();

struct PseudoLabels {
  std::vector<std::size_t> labels;
  Vector confidence;
};

// Row-wise argmax; ties go to the lowest class index.
PseudoLabels pseudo_labels(const Matrix& probs);

// Maps an input batch to class probabilities. Callers pass a forward that
// leaves the model untouched.
using ProbabilityFn = std::function<Matrix(const Matrix&)>;

// p(y_hat | x) minus the mean of p(y_hat | x') over one draw of each augmentation.
Vector plpd(const ProbabilityFn& model, const Matrix& x, std::span<const std::size_t> labels,
            std::span<const Augmentation> augmentations, Rng& rng);

// Closed thresholds: entropy <= sigma and plpd >= delta.
bool dual_criterion(double entropy, double plpd, double sigma, double delta);

// Row i is selected when the fast teacher's entropy is <= sigma and the slow
// teacher's entropy is > sigma.
std::vector<bool> select_disagreement(const Matrix& probs_t1, const Matrix& probs_t2,
                                      double sigma);

Vector row_entropies(const Matrix& probs);

}  // namespace slomo
