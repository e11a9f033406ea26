#pragma once

#include <functional>
#include <string>

#include "slomo/matrix.hpp"
#include "slomo/network.hpp"

namespace slomo {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_leaf;  // path of the entry attaining max_rel_error
  double analytic = 0.0;
  double numeric = 0.0;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Compares `analytic` with central differences of `loss` over every trainable
// leaf of `params`. Throws NumericError if the loss turns non-finite.
GradCheckReport finite_diff_check(const NetworkSpec& spec, const NetworkParams& params,
                                  const std::function<double(const NetworkParams&)>& loss,
                                  const ParamGrads& analytic, double eps);

// Same check for a scalar function of a matrix argument.
GradCheckReport finite_diff_check(const Matrix& at,
                                  const std::function<double(const Matrix&)>& loss,
                                  const Matrix& analytic, double eps);

// Keeps whichever report has the larger error.
void merge_report(GradCheckReport& into, const GradCheckReport& other,
                  const std::string& prefix = {});

}  // namespace slomo
