#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "agerank/tape.hpp"

namespace agerank {

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Builds a scalar-valued expression of `x` on the given tape.
using ScalarFunction = std::function<Var(Tape<double>&, Var)>;

/// Compares reverse-mode gradients against central finite differences.
/// Relative error per coordinate is |a - n| / max(|a|, |n|, floor); the floor
/// keeps coordinates whose true gradient is zero from dividing by rounding noise.
inline GradCheckReport grad_check(const ScalarFunction& fn, const Tensor<double>& point, double epsilon,
                                  double tolerance, double floor = 1e-6) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be positive");

  auto evaluate = [&](const Tensor<double>& at) {
    Tape<double> tape;
    Var x = tape.leaf(at, false);
    Var y = fn(tape, x);
    if (tape.value(y).size() != 1) {
      throw ShapeError("grad_check: function output has shape " + to_string(tape.value(y).shape()) +
                       ", expected a scalar");
    }
    return tape.value(y)[0];
  };

  GradCheckReport report;
  report.tolerance = tolerance;
  {
    Tape<double> tape;
    Var x = tape.leaf(point, true);
    Var y = fn(tape, x);
    if (tape.value(y).size() != 1) {
      throw ShapeError("grad_check: function output has shape " + to_string(tape.value(y).shape()) +
                       ", expected a scalar");
    }
    tape.backward(y);
    const auto& g = tape.grad(x);
    report.analytic.assign(g.data().begin(), g.data().end());
  }

  Tensor<double> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    probe[i] = orig + epsilon;
    const double up = evaluate(probe);
    probe[i] = orig - epsilon;
    const double down = evaluate(probe);
    probe[i] = orig;
    const double num = (up - down) / (2.0 * epsilon);
    const double a = report.analytic[i];
    const double err = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
    report.numeric.push_back(num);
    report.rel_error.push_back(err);
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace agerank
