#include "sidforge/numkit.hpp"

namespace sidforge {

FiniteDiffReport finite_diff_check(const std::function<FdProbe()>& probe,
                                   std::span<const std::span<double>> params,
                                   std::span<const std::span<const double>> analytic, double h,
                                   double tolerance, std::size_t max_coords, std::uint64_t seed) {
  if (h <= 0.0) throw ConfigError("numkit", "finite_diff_check: h must be positive");
  if (params.size() != analytic.size()) {
    throw ShapeError("numkit", "finite_diff_check: parameter/gradient tensor counts differ");
  }
  std::vector<std::pair<std::size_t, std::size_t>> coords;  // (tensor, element)
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != analytic[t].size()) {
      throw ShapeError("numkit", "finite_diff_check: shape mismatch at tensor " + std::to_string(t));
    }
    for (std::size_t i = 0; i < params[t].size(); ++i) coords.emplace_back(t, i);
  }
  std::vector<std::size_t> flat(coords.size());
  std::iota(flat.begin(), flat.end(), std::size_t{0});
  if (max_coords > 0 && max_coords < flat.size()) {
    Rng rng(seed);
    rng.shuffle(flat);
    flat.resize(max_coords);
    std::sort(flat.begin(), flat.end());
  }

  const std::uint64_t base_regime = probe().regime;
  FiniteDiffReport report;
  for (std::size_t f : flat) {
    const auto [t, i] = coords[f];
    double& p = params[t][i];
    const double saved = p;
    p = saved + h;
    const FdProbe plus = probe();
    p = saved - h;
    const FdProbe minus = probe();
    p = saved;
    if (plus.regime != base_regime || minus.regime != base_regime) {
      ++report.skipped;
      continue;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * h);
    const double exact = analytic[t][i];
    const double denom = std::max({std::abs(numeric), std::abs(exact), kFdRelativeFloor});
    const double rel = std::abs(numeric - exact) / denom;
    ++report.checked;
    if (rel > report.max_rel_error || !std::isfinite(rel)) {
      report.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
      report.worst_index = f;
    }
  }
  report.passed = report.checked > 0 && report.max_rel_error < tolerance;
  return report;
}

}  // namespace sidforge
