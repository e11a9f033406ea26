#include "slomo/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "slomo/error.hpp"

namespace slomo {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

void check_eps(double eps) {
  if (!(eps > 0.0 && eps < 1e-2)) throw ConfigError("eps", "eps must lie in (0, 1e-2)");
}

double finite_loss(double v) {
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const NetworkSpec& spec, const NetworkParams& params,
                                  const std::function<double(const NetworkParams&)>& loss,
                                  const ParamGrads& analytic, double eps) {
  check_eps(eps);
  check_params(spec, params);
  if (analytic.layers.size() != params.layers.size()) {
    throw ShapeError("finite_diff_check: gradient tree mismatch");
  }
  finite_loss(loss(params));
  GradCheckReport report;
  NetworkParams probe = params;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    for (LeafKind k : kAllLeafKinds) {
      auto values = leaf(probe, li, k);
      auto grads = leaf(analytic, li, k);
      if (values.size() != grads.size()) throw ShapeError("finite_diff_check: leaf mismatch");
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double orig = values[j];
        values[j] = orig + eps;
        const double up = finite_loss(loss(probe));
        values[j] = orig - eps;
        const double down = finite_loss(loss(probe));
        values[j] = orig;
        const double numeric = (up - down) / (2.0 * eps);
        const double err = relative_error(grads[j], numeric);
        if (err > report.max_rel_error || report.worst_leaf.empty()) {
          report = {err, leaf_path(li, k, j), grads[j], numeric};
        }
      }
    }
  }
  return report;
}

GradCheckReport finite_diff_check(const Matrix& at,
                                  const std::function<double(const Matrix&)>& loss,
                                  const Matrix& analytic, double eps) {
  check_eps(eps);
  require_same_shape(at, analytic, "finite_diff_check");
  finite_loss(loss(at));
  GradCheckReport report;
  Matrix probe = at;
  for (std::size_t r = 0; r < at.rows(); ++r) {
    for (std::size_t c = 0; c < at.cols(); ++c) {
      const double orig = probe(r, c);
      probe(r, c) = orig + eps;
      const double up = finite_loss(loss(probe));
      probe(r, c) = orig - eps;
      const double down = finite_loss(loss(probe));
      probe(r, c) = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic(r, c), numeric);
      if (err > report.max_rel_error || report.worst_leaf.empty()) {
        report = {err, "[" + std::to_string(r) + "," + std::to_string(c) + "]", analytic(r, c),
                  numeric};
      }
    }
  }
  return report;
}

void merge_report(GradCheckReport& into, const GradCheckReport& other,
                  const std::string& prefix) {
  if (other.max_rel_error > into.max_rel_error || into.worst_leaf.empty()) {
    into = other;
    into.worst_leaf = prefix + other.worst_leaf;
  }
}

}  // namespace slomo
