#pragma once

// Registered finite-difference checks over every differentiable operation,
// evaluated in double precision with dropout disabled.

#include <cstdint>
#include <vector>

#include "xtalk/gradcheck.hpp"

namespace xtalk {

struct GradSuiteOptions {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double full_model_tolerance = 1e-3;
  // Sampled coordinates per tensor in the full-model check.
  std::size_t full_model_coords = 2;
  bool include_full_model = true;
};

std::vector<GradCheckReport> run_gradcheck_suite(const GradSuiteOptions& opts = {});

}  // namespace xtalk
