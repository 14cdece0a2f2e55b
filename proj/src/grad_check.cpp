// SPDX-License-Identifier: Apache-2.0

#include "armattn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "armattn/ops.hpp"

namespace armattn {

namespace {
double evaluate(const ScalarFn& f) {
  NoGradGuard no_grad;
  Tensor y = f();
  if (y.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  return y.item();
}
}  // namespace

GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor> wrt, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  std::vector<bool> saved_flags;
  for (auto& t : wrt) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor y = f();
    tape.backward(y);
  }
  for (auto& t : wrt) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
    t.zero_grad();
  }

  const double base = evaluate(f);
  if (evaluate(f) != base) throw std::runtime_error("grad_check: function is not deterministic");

  GradCheckReport report;
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
    auto values = wrt[ti].mutable_data();
    const std::size_t n = values.size();
    const std::size_t stride =
        options.max_entries_per_tensor == 0 || n <= options.max_entries_per_tensor ? 1 : n / options.max_entries_per_tensor;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = values[i];
      values[i] = orig + options.step;
      const double plus = evaluate(f);
      values[i] = orig - options.step;
      const double minus = evaluate(f);
      values[i] = orig + options.step;
      if (evaluate(f) != plus) throw std::runtime_error("grad_check: function is not deterministic");
      values[i] = orig;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[ti][i];
      double floor = options.abs_floor;
      if (options.roundoff_floor) {
        // Each evaluation carries up to eps * |f| of rounding error.
        double noise =
            2.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(plus), std::abs(minus)) / options.step;
        // Truncation differs between steps h and 2h by O(h^2) only, so the
        // spread of the two quotients is an observed sample of the round-off.
        values[i] = orig + 2.0 * options.step;
        const double plus2 = evaluate(f);
        values[i] = orig - 2.0 * options.step;
        const double minus2 = evaluate(f);
        values[i] = orig;
        noise = std::max(noise, std::abs(numeric - (plus2 - minus2) / (4.0 * options.step)));
        floor = std::max(floor, noise / options.tolerance);
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_tensor = ti;
        report.worst_index = i;
      }
    }
  }
  for (std::size_t ti = 0; ti < wrt.size(); ++ti) wrt[ti].set_requires_grad(saved_flags[ti]);
  report.pass = report.max_rel_err <= options.tolerance;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step, double tolerance) {
  ScalarFn g = [&f, x] {
    Tensor y = f(x);
    return y.numel() == 1 ? y : ops::sum(y);
  };
  GradCheckOptions options;
  options.step = step;
  options.tolerance = tolerance;
  return grad_check(g, {std::move(x)}, options);
}

}  // namespace armattn
