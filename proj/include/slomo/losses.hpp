#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "slomo/matrix.hpp"

namespace slomo {

// Floor applied to probabilities inside every -log term.
inline constexpr double kLogFloor = 1e-12;

struct LossResult {
  double value = 0.0;
  Matrix grad;  // same shape as the differentiated argument
};

// Symmetric cross-entropy between target rows `p` and softmax(q_logits),
// averaged over the batch. Gradient is taken with respect to q_logits.
LossResult sce(const Matrix& p, const Matrix& q_logits);

// Shannon entropy in nats with 0 log 0 = 0.
double entropy(std::span<const double> probs);

// Rows [0, N) are selected features, [N, 2N) their augmented views and
// [2N, 3N) the matched prototypes. Rows i, i+N and i+2N are mutual positives.
struct ContrastiveBatch {
  Matrix embeddings;
  double temperature = 0.1;

  std::size_t group_count() const { return embeddings.rows() / 3; }
};

// Prototype-anchored contrastive loss over cosine similarities (summed over
// anchors). Gradient is with respect to the raw, unnormalized embeddings.
LossResult contrastive(const ContrastiveBatch& batch);

// (1/N) sum_i ||z_i - P_i||^2; gradient with respect to `features`.
LossResult mse_proto(const Matrix& features, const Matrix& prototypes);

// Mean per-sample entropy minus the entropy of the batch-mean prediction.
LossResult im_loss(const Matrix& logits);

// Cross-entropy against hard labels, used for source pre-training.
LossResult cross_entropy(const Matrix& logits, std::span<const std::size_t> labels);

struct LossWeights {
  double cl = 1.0;
  double mse = 1.0;
  double im = 1.0;
};

struct T2Objective {
  double value = 0.0;
  Matrix grad_embeddings;  // from the contrastive term
  Matrix grad_features;    // from the MSE term
  Matrix grad_logits;      // from the IM term
};

// Weighted combination of the three slow-teacher losses. Each gradient is
// scaled by its weight and kept with the argument it acts on.
T2Objective t2_objective(const LossResult& cl, const LossResult& mse, const LossResult& im,
                         const LossWeights& weights);

}  // namespace slomo
