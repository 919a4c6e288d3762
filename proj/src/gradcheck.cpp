#include "vinlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vinlab/rng.hpp"

namespace vinlab {

namespace {

double evaluate(std::vector<Tensor<double>>& params, const ScalarFunction& f) {
  Tape<double> tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  const Var out = f(tape, vars);
  const Tensor<double>& v = tape.value(out);
  if (v.size() != 1) throw ShapeError("grad_check: function must return a scalar");
  if (!std::isfinite(v[0])) throw NonFiniteError("grad_check: non-finite function value");
  return v[0];
}

}  // namespace

GradCheckReport grad_check(std::vector<Tensor<double>>& params, const ScalarFunction& f,
                           const GradCheckOptions& options) {
  if (!(options.eps >= 1e-7 && options.eps <= 1e-4)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-4]");
  }

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    const Var out = f(tape, vars);
    if (tape.value(out).size() != 1) throw ShapeError("grad_check: function must return a scalar");
    if (!std::isfinite(tape.value(out)[0])) throw NonFiniteError("grad_check: non-finite function value");
    tape.backward(out);
    for (Var v : vars) analytic.push_back(tape.grad(v));
  }

  Rng rng(options.seed);
  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    std::vector<std::size_t> coords(params[t].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      double& theta = params[t][i];
      const double saved = theta;
      theta = saved + options.eps;
      const double up = evaluate(params, f);
      theta = saved - options.eps;
      const double down = evaluate(params, f);
      theta = saved;
      const double fd = (up - down) / (2.0 * options.eps);
      const double ad = analytic[t][i];
      const double err = std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)});
      ++report.coords_checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_tensor = t;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace vinlab
