#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "adadec/autodiff.hpp"

namespace adadec {

/// Builds the scalar loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// 0 checks every coordinate. Otherwise coordinates are drawn per tensor:
  /// each tensor contributes min(size, ceil(max_coordinates / tensors)).
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 1;
  /// Test hook applied to the analytic gradients before comparison.
  std::function<void(Gradients&)> tamper;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
  std::size_t tensors_checked = 0;
  bool passed = false;
};

/// Central-difference check of backprop against (f(p+e) - f(p-e)) / 2e,
/// scoring each coordinate by |a - n| / max(1e-8, |a| + |n|). The builder is
/// always handed 64-bit tapes.
GradCheckResult grad_check(const LossBuilder& loss, ParameterSet& params,
                           const GradCheckOptions& options = {});

}  // namespace adadec
