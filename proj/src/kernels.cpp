#include "htad/kernels.hpp"

#include <algorithm>
#include <exception>
#include <mutex>
#include <set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace htad {

int worker_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn, Execution exec) {
  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::size_t error_index = n;
  std::mutex mu;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(mu);
      // Keep the lowest failing index so the reported error matches serial.
      if (static_cast<std::size_t>(i) < error_index) {
        error_index = static_cast<std::size_t>(i);
        error = std::current_exception();
      }
    }
  }
  if (error) std::rethrow_exception(error);
}

BatchGradients accumulate_batch_gradients(ParameterStore& store, std::size_t n, const ExampleLoss& example_loss,
                                          Execution exec, std::optional<ParamId> tracked) {
  BatchGradients out;
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  std::set<std::size_t> touched;

  auto run_one = [&](std::size_t i, double& loss) {
    GradContext ctx(store);
    const Var l = example_loss(ctx, i);
    loss = ctx.scalar(l);
    ctx.backward(l);
    return std::move(ctx.grads());
  };
  auto merge = [&](const GradientSet& g) {
    g.accumulate_into(store, inv);
    if (tracked) {
      for (auto r : g.touched_rows(*tracked)) touched.insert(r);
    }
  };

  std::vector<double> losses(n, 0.0);
  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < n; ++i) merge(run_one(i, losses[i]));
  } else {
    std::vector<std::optional<GradientSet>> sets(n);
    for_each_index(n, [&](std::size_t i) { sets[i].emplace(run_one(i, losses[i])); }, Execution::parallel);
    for (auto& s : sets) merge(*s);
  }
  double total = 0.0;
  for (double l : losses) total += l;
  out.mean_loss = total * inv;
  out.touched_rows.assign(touched.begin(), touched.end());
  return out;
}

}  // namespace htad
