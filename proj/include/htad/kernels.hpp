#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "htad/numerics.hpp"

namespace htad {

// serial is the reference path; parallel fans out with OpenMP and must give
// bit-identical results.
enum class Execution { serial, parallel };

// Runs fn(0..n-1). The first exception thrown by any index is rethrown.
void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn, Execution exec);

using ExampleLoss = std::function<Var(GradContext&, std::size_t)>;

struct BatchGradients {
  double mean_loss = 0.0;
  // Rows of `tracked` that received gradient anywhere in the batch.
  std::vector<std::size_t> touched_rows;
};

// Evaluates each example on its own tape and adds (1/n) * gradient into the
// store's gradient slots in example order, so the sum does not depend on
// scheduling.
BatchGradients accumulate_batch_gradients(ParameterStore& store, std::size_t n, const ExampleLoss& example_loss,
                                          Execution exec, std::optional<ParamId> tracked = std::nullopt);

int worker_threads();

}  // namespace htad
