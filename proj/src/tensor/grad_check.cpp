#include "hasseg/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hasseg/error.hpp"
#include "hasseg/rng.hpp"

namespace hasseg {

namespace {

double evaluate(const std::function<Tensor<double>(Tape<double>&)>& f) {
  Tape<double> off(false);
  const Tensor<double> y = f(off);
  if (y.numel() != 1) throw ShapeError("grad_check: function must be scalar, got " + y.shape().str());
  return y.item();
}

double rel_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Central difference along a perturbation; `place(h)` moves the input to x + h v.
// With several steps, keeps the one with the smallest second difference
// |f(x+h) - 2 f(x) + f(x-h)| / h: a step that straddles a kink or drowns in
// rounding shows a large one. The choice never looks at the analytic value.
double central_difference(const std::function<Tensor<double>(Tape<double>&)>& f,
                          const std::function<void(double)>& place, double center,
                          const std::vector<double>& steps) {
  double best = 0.0, best_score = std::numeric_limits<double>::infinity();
  for (double h : steps) {
    place(h);
    const double up = evaluate(f);
    place(-h);
    const double down = evaluate(f);
    const double score = std::abs(up - 2.0 * center + down) / h;
    if (score < best_score) {
      best_score = score;
      best = (up - down) / (2.0 * h);
    }
  }
  place(0.0);
  return best;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor<double>(Tape<double>&)>& f,
                           std::vector<Tensor<double>> inputs, const GradCheckOptions& options) {
  for (auto& in : inputs) in.clear_grad();
  Tape<double> tape;
  const Tensor<double> loss = f(tape);
  if (loss.numel() != 1) throw ShapeError("grad_check: function must be scalar, got " + loss.shape().str());
  tape.backward(loss);
  const double center = loss.item();
  const std::vector<double> steps = options.steps.empty() ? std::vector<double>{options.eps} : options.steps;

  GradCheckResult result;
  Rng rng(options.seed);
  auto note = [&](double err, std::size_t input, const std::string& where, double a, double n) {
    ++result.probes;
    if (err > result.max_rel_error || result.worst.empty()) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      result.worst = "input " + std::to_string(input) + " " + where + ": analytic " + std::to_string(a) +
                     " numeric " + std::to_string(n);
    }
  };

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor<double>& x = inputs[i];
    if (!x.requires_grad()) continue;
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::ranges::copy(x.grad(), analytic.begin());
    auto data = x.data();

    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.coordinates) {
      // Partial Fisher-Yates: the first `coordinates` entries become a uniform sample.
      for (std::size_t k = 0; k < options.coordinates; ++k) {
        std::swap(coords[k], coords[k + rng.uniform_index(coords.size() - k)]);
      }
      coords.resize(options.coordinates);
    }
    for (std::size_t c : coords) {
      const double saved = data[c];
      const double numeric = central_difference(f, [&](double h) { data[c] = saved + h; }, center, steps);
      note(rel_error(analytic[c], numeric, options.floor), i, "coord " + std::to_string(c), analytic[c],
           numeric);
    }

    for (std::size_t d = 0; d < options.directions; ++d) {
      std::vector<double> v(x.numel());
      double norm = 0.0;
      for (double& e : v) {
        e = rng.normal();
        norm += e * e;
      }
      norm = std::sqrt(norm);
      double a = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] /= norm;
        a += analytic[k] * v[k];
      }
      const std::vector<double> saved(data.begin(), data.end());
      const double numeric = central_difference(
          f,
          [&](double h) {
            for (std::size_t k = 0; k < v.size(); ++k) data[k] = h == 0.0 ? saved[k] : saved[k] + h * v[k];
          },
          center, steps);
      note(rel_error(a, numeric, options.floor), i, "direction " + std::to_string(d), a, numeric);
    }
  }
  return result;
}

}  // namespace hasseg
