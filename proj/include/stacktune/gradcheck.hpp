#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stacktune/ops.hpp"
#include "stacktune/rng.hpp"
#include "stacktune/tensor.hpp"

// Central finite-difference gradient checking in 64-bit. The analytic
// gradient from backward() is compared coordinate by coordinate against
// (f(x + h) - f(x - h)) / 2h.

namespace stacktune::gradcheck {

using Scalar = double;
using DTensor = BasicTensor<Scalar>;

struct Options {
  double step = 1e-3;
  double tolerance = 1e-4;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  // Below it the comparison is effectively absolute.
  double floor = 1e-2;
  // A coordinate whose estimated truncation error (from comparing steps h and
  // h/2) exceeds this fraction of the tolerance makes the draw unusable.
  double oracle_fraction = 0.5;
};

struct Report {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  // A probe changed the branch pattern of a non-smooth op (relu, max, ...),
  // so finite differences are not a valid oracle at this point.
  bool crossed_kink = false;
  // The step-h difference quotient disagrees with the step-h/2 one by more
  // than the tolerance allows, so the oracle itself is inaccurate here.
  bool oracle_unreliable = false;
  std::string worst;

  bool rejected() const { return crossed_kink || oracle_unreliable; }
  bool passed(const Options& opt) const { return !rejected() && max_rel_error <= opt.tolerance; }
};

/// One randomized instance: a scalar function of `inputs`.
struct Case {
  std::function<DTensor()> loss;
  std::vector<DTensor> inputs;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {

struct TraceScope {
  std::vector<std::uint64_t> trace;
  std::vector<std::uint64_t>* saved;
  TraceScope() : saved(stacktune::detail::branch_trace) { stacktune::detail::branch_trace = &trace; }
  ~TraceScope() { stacktune::detail::branch_trace = saved; }
  TraceScope(const TraceScope&) = delete;
  TraceScope& operator=(const TraceScope&) = delete;
};

inline double eval_traced(const std::function<DTensor()>& f, std::vector<std::uint64_t>& trace) {
  NoGradGuard no_grad;
  TraceScope scope;
  const double value = f().item();
  trace = std::move(scope.trace);
  return value;
}

}  // namespace detail

inline Report check(const Case& c, const Options& opt = {}) {
  std::vector<DTensor> inputs = c.inputs;
  zero_grad(inputs);
  std::vector<std::uint64_t> reference;
  Report report;
  {
    detail::TraceScope scope;
    backward(c.loss());
    reference = std::move(scope.trace);
  }
  std::vector<std::uint64_t> trace;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].data();
    const std::vector<Scalar> analytic(inputs[k].grad().begin(), inputs[k].grad().end());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Scalar saved = values[i];
      bool kink = false;
      auto probe = [&](double t) {
        values[i] = saved + t;
        const double v = detail::eval_traced(c.loss, trace);
        kink = kink || trace != reference;
        return v;
      };
      const double plus = probe(opt.step), minus = probe(-opt.step);
      const double half_plus = probe(opt.step / 2), half_minus = probe(-opt.step / 2);
      values[i] = saved;
      if (kink) {
        report.crossed_kink = true;
        return report;
      }
      const double numeric = (plus - minus) / (2.0 * opt.step);
      const double refined = (half_plus - half_minus) / opt.step;
      // D(h) - D(h/2) is 3/4 of the O(h^2) truncation error of D(h).
      const double truncation = std::abs(numeric - refined) * 4.0 / 3.0;
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
      if (truncation > opt.oracle_fraction * opt.tolerance * scale) {
        report.oracle_unreliable = true;
        return report;
      }
      const double err = relative_error(analytic[i], numeric, opt.floor);
      ++report.coordinates;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = "input " + std::to_string(k) + "[" + std::to_string(i) +
                       "]: analytic " + std::to_string(analytic[i]) + " vs numeric " +
                       std::to_string(numeric);
      }
    }
  }
  return report;
}

struct Summary {
  std::string name;
  std::size_t cases = 0;
  std::size_t redraws = 0;
  double max_rel_error = 0.0;
  bool passed = true;
  std::string worst;
};

/// Runs `n_cases` random cases. A draw whose probes cross a kink, or where the
/// finite difference is too coarse, is discarded and redrawn (up to
/// 50 * n_cases draws in total).
inline Summary run(const std::string& name, std::size_t n_cases, Rng& rng,
                   const std::function<Case(Rng&)>& make_case, const Options& opt = {}) {
  Summary s;
  s.name = name;
  std::size_t draws = 0;
  while (s.cases < n_cases) {
    if (draws++ >= 50 * n_cases) {
      s.passed = false;
      s.worst = "too many draws rejected (kinks or coarse oracle)";
      break;
    }
    const Case c = make_case(rng);
    const Report r = check(c, opt);
    if (r.rejected()) {
      ++s.redraws;
      continue;
    }
    ++s.cases;
    if (r.max_rel_error > s.max_rel_error) {
      s.max_rel_error = r.max_rel_error;
      s.worst = r.worst;
    }
    if (!r.passed(opt)) s.passed = false;
  }
  return s;
}

/// Random tensor with entries uniform in [lo, hi].
inline DTensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = true) {
  std::vector<Scalar> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return DTensor::from(shape, std::move(v), requires_grad);
}

/// Reduces an arbitrary output to a scalar with fixed random weights so every
/// output coordinate contributes a distinct amount.
inline DTensor project(const DTensor& out, const DTensor& weights) { return sum_all(mul(out, weights)); }

}  // namespace stacktune::gradcheck
