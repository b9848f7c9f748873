#pragma once

// Central finite-difference verification of analytic gradients.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace xtalk {

/// One array whose entries are perturbed in place; `analytic` holds the
/// gradient computed by the code under test at the unperturbed point.
struct GradTarget {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
  // 0 checks every coordinate; otherwise a seeded random sample per target.
  std::size_t max_coords_per_target = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst;  // "target[index]"
  std::size_t checked = 0;
  bool finite = true;
  bool passed = false;
  double tolerance = 0.0;
};

/// `loss` re-evaluates the scalar objective at the current values of the
/// targets. Values are restored after each probe.
GradCheckReport grad_check(const std::string& name, const std::function<double()>& loss,
                           const std::vector<GradTarget>& targets, const GradCheckOptions& opts = {});

}  // namespace xtalk
