#pragma once

#include <cstdint>

namespace budforest {

// Randomized finite-difference audit of the backward pass. Each trial
// draws a small tree (budding or distributed, depth up to 3, up to 10
// inputs, up to 5 classes, 1 or 3 filters), randomizes its parameters
// and compares every analytic gradient slot against central differences.
// Slots that miss the tolerance at `step` are re-probed once at 10x the
// step, where the floating-point cancellation floor is 10x lower; a
// wrong derivative fails at both steps.
struct GradCheckConfig {
  int trials = 100;
  uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-6;
  // Negative-control hook: added to one analytic slot per trial, which
  // must drive the check to failure when nonzero.
  double corrupt_delta = 0.0;
};

struct GradCheckReport {
  int trials = 0;
  double max_rel = 0.0;
  double max_rel_gating = 0.0;
  double max_rel_leafness = 0.0;
  double max_rel_payoff = 0.0;
  bool passed = false;
};

GradCheckReport run_gradient_check(const GradCheckConfig& config);

}  // namespace budforest
