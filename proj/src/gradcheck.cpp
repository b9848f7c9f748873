#include "xtalk/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "xtalk/errors.hpp"

namespace xtalk {

GradCheckReport grad_check(const std::string& name, const std::function<double()>& loss,
                           const std::vector<GradTarget>& targets, const GradCheckOptions& opts) {
  GradCheckReport rep;
  rep.name = name;
  rep.tolerance = opts.tolerance;
  std::mt19937_64 rng(opts.seed);
  for (const auto& tgt : targets) {
    if (tgt.values.size() != tgt.analytic.size())
      throw ShapeError("grad_check: value/gradient size mismatch for " + tgt.name);
    std::vector<std::size_t> coords(tgt.values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opts.max_coords_per_target > 0 && coords.size() > opts.max_coords_per_target) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_target);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double a = tgt.analytic[i];
      const double orig = tgt.values[i];
      tgt.values[i] = orig + opts.step;
      const double up = loss();
      tgt.values[i] = orig - opts.step;
      const double down = loss();
      tgt.values[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      ++rep.checked;
      if (!std::isfinite(a) || !std::isfinite(numeric)) {
        rep.finite = false;
        rep.worst = tgt.name + "[" + std::to_string(i) + "]";
        rep.max_rel_error = std::numeric_limits<double>::infinity();
        continue;
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst = tgt.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  rep.passed = rep.finite && rep.max_rel_error <= opts.tolerance;
  return rep;
}

}  // namespace xtalk
