#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "slomo/gradcheck.hpp"

namespace slomo {

struct GradcheckOptions {
  double eps = 1e-5;
  std::size_t seeds = 20;
  double tolerance = 1e-4;
  // Negative control: perturbs one analytic network gradient entry.
  bool corrupt_leaf = false;
};

struct GradcheckLine {
  std::string name;
  GradCheckReport worst;  // over all seeds
  std::size_t checks = 0;
};

struct GradcheckSuite {
  std::vector<GradcheckLine> lines;
  bool passed = false;
};

// Finite-difference checks of the network (both BN modes) and of every loss,
// including the composed slow-teacher objective through the network and
// projector, on `seeds` random instances each.
GradcheckSuite run_gradcheck_suite(const GradcheckOptions& options);

}  // namespace slomo
