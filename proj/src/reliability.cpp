#include "slomo/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "slomo/error.hpp"
#include "slomo/losses.hpp"

namespace slomo {

Matrix Augmentation::apply(const Matrix& x, Rng& rng) const {
  Matrix out = x;
  const std::size_t d = x.cols();
  switch (kind) {
    case AugmentationKind::Identity:
      break;
    case AugmentationKind::SegmentShuffle: {
      const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(param), 1, d);
      // Block b covers [b*d/k, (b+1)*d/k); blocks are permuted per row.
      std::vector<std::size_t> bounds(k + 1);
      for (std::size_t b = 0; b <= k; ++b) bounds[b] = b * d / k;
      std::vector<std::size_t> order(k);
      for (std::size_t r = 0; r < x.rows(); ++r) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        auto src = x.row(r);
        auto dst = out.row(r);
        std::size_t pos = 0;
        for (std::size_t b : order) {
          for (std::size_t i = bounds[b]; i < bounds[b + 1]; ++i) dst[pos++] = src[i];
        }
      }
      break;
    }
    case AugmentationKind::CenterOcclusion: {
      const auto count = static_cast<std::size_t>(
          std::llround(std::clamp(param, 0.0, 1.0) * static_cast<double>(d)));
      const std::size_t start = (d - count) / 2;
      for (std::size_t r = 0; r < x.rows(); ++r) {
        auto dst = out.row(r);
        std::fill(dst.begin() + static_cast<std::ptrdiff_t>(start),
                  dst.begin() + static_cast<std::ptrdiff_t>(start + count), 0.0);
      }
      break;
    }
    case AugmentationKind::AdditiveJitter: {
      std::normal_distribution<double> noise(0.0, 1.0);
      for (double& v : out.data()) v += param * noise(rng);
      break;
    }
  }
  return out;
}

std::vector<Augmentation> default_plpd_augmentations() {
  return {Augmentation::segment_shuffle(4), Augmentation::center_occlusion(0.25)};
}

PseudoLabels pseudo_labels(const Matrix& probs) {
  PseudoLabels out;
  out.labels.reserve(probs.rows());
  out.confidence.reserve(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    auto row = probs.row(r);
    const auto it = std::max_element(row.begin(), row.end());
    out.labels.push_back(static_cast<std::size_t>(it - row.begin()));
    out.confidence.push_back(*it);
  }
  return out;
}

Vector plpd(const ProbabilityFn& model, const Matrix& x, std::span<const std::size_t> labels,
            std::span<const Augmentation> augmentations, Rng& rng) {
  if (augmentations.empty()) throw ConfigError("plpd_augmentations", "need >= 1 augmentation");
  if (labels.size() != x.rows()) throw ShapeError("plpd: label count mismatch");
  const Matrix base = model(x);
  Vector drop(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) drop[r] = base(r, labels[r]);
  Vector augmented(x.rows(), 0.0);
  for (const auto& aug : augmentations) {
    const Matrix xa = aug.apply(x, rng);
    require_same_shape(xa, x, "plpd augmentation");
    const Matrix pa = model(xa);
    for (std::size_t r = 0; r < x.rows(); ++r) augmented[r] += pa(r, labels[r]);
  }
  const double inv = 1.0 / static_cast<double>(augmentations.size());
  for (std::size_t r = 0; r < x.rows(); ++r) drop[r] -= augmented[r] * inv;
  return drop;
}

bool dual_criterion(double entropy, double plpd, double sigma, double delta) {
  return entropy <= sigma && plpd >= delta;
}

Vector row_entropies(const Matrix& probs) {
  Vector h(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) h[r] = entropy(probs.row(r));
  return h;
}

std::vector<bool> select_disagreement(const Matrix& probs_t1, const Matrix& probs_t2,
                                      double sigma) {
  require_same_shape(probs_t1, probs_t2, "select_disagreement");
  const Vector h1 = row_entropies(probs_t1);
  const Vector h2 = row_entropies(probs_t2);
  std::vector<bool> selected(h1.size());
  for (std::size_t i = 0; i < h1.size(); ++i) selected[i] = h1[i] <= sigma && h2[i] > sigma;
  return selected;
}

}  // namespace slomo
