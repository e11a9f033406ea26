#include "slomo/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "slomo/error.hpp"
#include "slomo/network.hpp"

namespace slomo {

namespace {

double floored_log(double p) { return std::log(std::max(p, kLogFloor)); }

// Pulls d/dq back through q = softmax(z) for one row, writing d/dz into `out`.
void softmax_pullback(std::span<const double> q, std::span<const double> dq,
                      std::span<double> out) {
  const double inner = dot(q, dq);
  for (std::size_t j = 0; j < q.size(); ++j) out[j] = q[j] * (dq[j] - inner);
}

// Entropy with the log floor and its derivative with respect to each p_c.
double floored_entropy(std::span<const double> p, std::span<double> dh) {
  double h = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double lp = floored_log(p[c]);
    h -= p[c] * lp;
    dh[c] = -(lp + (p[c] > kLogFloor ? 1.0 : 0.0));
  }
  return h;
}

}  // namespace

LossResult sce(const Matrix& p, const Matrix& q_logits) {
  require_same_shape(p, q_logits, "sce");
  if (p.rows() == 0) throw ShapeError("sce: empty batch");
  const Matrix q = softmax(q_logits);
  const std::size_t n = p.rows();
  const std::size_t classes = p.cols();
  LossResult out{0.0, Matrix(n, classes)};
  Vector dq(classes);
  for (std::size_t r = 0; r < n; ++r) {
    auto pr = p.row(r);
    auto qr = q.row(r);
    for (std::size_t c = 0; c < classes; ++c) {
      const double log_p = floored_log(pr[c]);
      out.value -= pr[c] * floored_log(qr[c]) + qr[c] * log_p;
      dq[c] = -(qr[c] > kLogFloor ? pr[c] / qr[c] : 0.0) - log_p;
    }
    softmax_pullback(qr, dq, out.grad.row(r));
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.value *= inv_n;
  for (double& g : out.grad.data()) g *= inv_n;
  return out;
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

LossResult contrastive(const ContrastiveBatch& batch) {
  const Matrix& u = batch.embeddings;
  if (u.rows() == 0 || u.rows() % 3 != 0) {
    throw ShapeError("contrastive: need 3N rows with N >= 1, got " + std::to_string(u.rows()));
  }
  if (!(batch.temperature > 0.0)) throw ConfigError("tau", "temperature must be > 0");
  require_finite(u, "contrastive");
  const std::size_t m = u.rows();
  const std::size_t groups = m / 3;
  const std::size_t dim = u.cols();
  const double inv_tau = 1.0 / batch.temperature;

  Matrix z(m, dim);
  Vector norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    norms[i] = norm(u.row(i));
    if (!(norms[i] > 0.0)) {
      throw NumericError("contrastive: zero-norm embedding at row " + std::to_string(i));
    }
    for (std::size_t k = 0; k < dim; ++k) z(i, k) = u(i, k) / norms[i];
  }
  Matrix sim(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) sim(i, j) = sim(j, i) = dot(z.row(i), z.row(j)) * inv_tau;
  }

  // coef(i, j) = dL/ds_ij for the scaled similarity s_ij = sim(z_i, z_j) / tau.
  LossResult out{0.0, Matrix(m, dim)};
  Matrix coef(m, m);
  constexpr double kPositivesPerAnchor = 2.0;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < m; ++a) {
      if (a != i) mx = std::max(mx, sim(i, a));
    }
    double denom = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      if (a != i) denom += std::exp(sim(i, a) - mx);
    }
    const double log_denom = mx + std::log(denom);
    const std::size_t g = i % groups;
    for (std::size_t a = 0; a < m; ++a) {
      if (a == i) continue;
      const bool positive = a % groups == g;
      if (positive) out.value -= sim(i, a) - log_denom;
      coef(i, a) = kPositivesPerAnchor * std::exp(sim(i, a) - log_denom) - (positive ? 1.0 : 0.0);
    }
  }
  // dL/dz_i = sum_j (coef_ij + coef_ji) z_j / tau, then through z = u / |u|.
  Vector dz(dim);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(dz.begin(), dz.end(), 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      const double w = (coef(i, j) + coef(j, i)) * inv_tau;
      for (std::size_t k = 0; k < dim; ++k) dz[k] += w * z(j, k);
    }
    const double radial = dot(dz, z.row(i));
    for (std::size_t k = 0; k < dim; ++k) out.grad(i, k) = (dz[k] - radial * z(i, k)) / norms[i];
  }
  return out;
}

LossResult mse_proto(const Matrix& features, const Matrix& prototypes) {
  require_same_shape(features, prototypes, "mse_proto");
  if (features.rows() == 0) throw ShapeError("mse_proto: N must be >= 1");
  const double inv_n = 1.0 / static_cast<double>(features.rows());
  LossResult out{0.0, Matrix(features.rows(), features.cols())};
  for (std::size_t i = 0; i < features.size(); ++i) {
    const double d = features.data()[i] - prototypes.data()[i];
    out.value += d * d;
    out.grad.data()[i] = 2.0 * inv_n * d;
  }
  out.value *= inv_n;
  return out;
}

LossResult im_loss(const Matrix& logits) {
  if (logits.rows() < 2) throw ShapeError("im_loss: batch must have at least 2 rows");
  const std::size_t n = logits.rows();
  const std::size_t classes = logits.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Matrix q = softmax(logits);

  Vector marginal(classes, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < classes; ++c) marginal[c] += q(r, c);
  }
  for (double& v : marginal) v *= inv_n;
  Vector d_marginal(classes);
  const double h_marginal = floored_entropy(marginal, d_marginal);

  LossResult out{-h_marginal, Matrix(n, classes)};
  Vector dh(classes);
  Vector dq(classes);
  for (std::size_t r = 0; r < n; ++r) {
    out.value += inv_n * floored_entropy(q.row(r), dh);
    for (std::size_t c = 0; c < classes; ++c) dq[c] = inv_n * (dh[c] - d_marginal[c]);
    softmax_pullback(q.row(r), dq, out.grad.row(r));
  }
  return out;
}

LossResult cross_entropy(const Matrix& logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows() || logits.rows() == 0) {
    throw ShapeError("cross_entropy: label count mismatch");
  }
  const Matrix q = softmax(logits);
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  LossResult out{0.0, q};
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (labels[r] >= logits.cols()) throw ShapeError("cross_entropy: label out of range");
    out.value -= floored_log(q(r, labels[r]));
    out.grad(r, labels[r]) -= 1.0;
  }
  out.value *= inv_n;
  for (double& g : out.grad.data()) g *= inv_n;
  return out;
}

T2Objective t2_objective(const LossResult& cl, const LossResult& mse, const LossResult& im,
                         const LossWeights& weights) {
  if (weights.cl < 0.0 || weights.mse < 0.0 || weights.im < 0.0) {
    throw ConfigError("lambda", "loss weights must be >= 0");
  }
  auto scaled = [](const Matrix& g, double w) {
    Matrix out = g;
    for (double& v : out.data()) v *= w;
    return out;
  };
  T2Objective out;
  out.value = weights.cl * cl.value + weights.mse * mse.value + weights.im * im.value;
  out.grad_embeddings = scaled(cl.grad, weights.cl);
  out.grad_features = scaled(mse.grad, weights.mse);
  out.grad_logits = scaled(im.grad, weights.im);
  return out;
}

}  // namespace slomo
