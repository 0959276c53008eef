#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hasseg/tape.hpp"
#include "hasseg/tensor.hpp"

namespace hasseg {

struct GradCheckOptions {
  double eps = 1e-6;
  // If non-empty, replaces eps: each probe tries every step and keeps the one
  // with the smallest second difference (for piecewise-smooth functions).
  std::vector<double> steps;
  // Coordinates probed per input; inputs with fewer elements are probed exhaustively.
  std::size_t coordinates = 24;
  // Random directions probed per input (Jacobian-vector products).
  std::size_t directions = 2;
  std::uint64_t seed = 1;
  // Denominator floor so that two tiny values do not register as a large relative error.
  double floor = 1e-7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst;  // description of the worst probe
};

/// Compares the tape's gradient of the scalar `f` against central differences.
/// Only inputs with requires_grad are probed; their data is perturbed in place
/// and restored. Throws ShapeError if `f` is not scalar.
GradCheckResult grad_check(const std::function<Tensor<double>(Tape<double>&)>& f,
                           std::vector<Tensor<double>> inputs, const GradCheckOptions& options = {});

}  // namespace hasseg
