#include "adadec/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adadec/random.hpp"

namespace adadec {

namespace {

double evaluate(const LossBuilder& loss, Tape& tape) {
  Var v = loss(tape);
  double x = tape.value(v).item();
  if (!std::isfinite(x)) throw NumericError("grad_check: non-finite loss at perturbed point");
  return x;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, ParameterSet& params,
                           const GradCheckOptions& options) {
  Gradients analytic(params);
  {
    Tape tape(Precision::F64);
    Var v = loss(tape);
    tape.backprop_into(v, analytic);
  }
  if (options.tamper) options.tamper(analytic);

  RandomStream rng(options.seed);
  GradCheckResult result;
  const std::size_t tensors = params.size();
  const std::size_t per_tensor =
      options.max_coordinates == 0 ? 0 : (options.max_coordinates + tensors - 1) / std::max<std::size_t>(tensors, 1);

  for (std::size_t t = 0; t < tensors; ++t) {
    Tensor& value = params.value(t);
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (per_tensor != 0 && coords.size() > per_tensor) {
      rng.shuffle(coords);
      coords.resize(per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    if (!coords.empty()) ++result.tensors_checked;
    for (std::size_t i : coords) {
      const double saved = value[i];
      value[i] = saved + options.epsilon;
      double plus;
      double minus;
      {
        Tape tape(Precision::F64);
        plus = evaluate(loss, tape);
      }
      value[i] = saved - options.epsilon;
      {
        Tape tape(Precision::F64);
        minus = evaluate(loss, tape);
      }
      value[i] = saved;

      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double a = analytic[t][i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.coordinates_checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = params.name(t);
        result.worst_index = i;
      }
    }
  }
  result.passed = result.max_relative_error <= options.tolerance;
  return result;
}

}  // namespace adadec
