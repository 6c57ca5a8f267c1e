#pragma once

// Central finite-difference gradient checking shared by the network tests
// and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dsdi/layers.hpp"
#include "dsdi/rng.hpp"

namespace dsdi::testing {

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t passed = 0;
  double worst_rel_error = 0.0;
  std::string worst_name;
  double pass_fraction() const { return checked ? static_cast<double>(passed) / checked : 0.0; }
};

/// Relative error |a − n| / max(|a| + |n|, floor); the floor keeps
/// coordinates whose true gradient is ~0 from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

/// `loss` evaluates the scalar loss at the current parameter values;
/// `analytic` must be called once beforehand to fill every Param::grad.
/// Samples `samples` coordinates uniformly over all parameters (skipping
/// names in `skip`), perturbing by ±h.
inline GradCheckResult check_gradients(const ParamList& params, const std::function<double()>& loss,
                                       std::size_t samples, double h, double tolerance,
                                       std::uint64_t seed,
                                       const std::vector<std::string>& skip = {}) {
  std::vector<std::pair<Param*, std::string>> eligible;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& [name, p] : params) {
    const bool skipped = std::any_of(skip.begin(), skip.end(), [&](const std::string& s) {
      return name.find(s) != std::string::npos;
    });
    if (skipped) continue;
    eligible.emplace_back(p, name);
    offsets.push_back(total);
    total += p->value.size();
  }
  Rng rng(seed);
  GradCheckResult res;
  for (std::size_t s = 0; s < samples; ++s) {
    const auto flat = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(total) - 1));
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
    const std::size_t which = static_cast<std::size_t>(it - offsets.begin()) - 1;
    Param* p = eligible[which].first;
    const std::size_t idx = flat - offsets[which];
    const double orig = p->value[idx];
    p->value[idx] = orig + h;
    const double up = loss();
    p->value[idx] = orig - h;
    const double down = loss();
    p->value[idx] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double rel = relative_error(p->grad[idx], numeric);
    ++res.checked;
    if (rel <= tolerance) ++res.passed;
    if (rel > res.worst_rel_error) {
      res.worst_rel_error = rel;
      res.worst_name = eligible[which].second + "[" + std::to_string(idx) + "]";
    }
  }
  return res;
}

}  // namespace dsdi::testing
