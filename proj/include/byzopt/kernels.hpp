#pragma once

// Data-parallel inner loops. Every kernel has a serial reference and an
// OpenMP version; both assign each output element to exactly one thread and
// reduce in a fixed order, so results are bit-identical for any thread count.

#include "byzopt/types.hpp"

#include <span>
#include <vector>

namespace byzopt::kernels {

/// Process-wide switch between the OpenMP kernels and the serial references.
void set_parallel(bool enabled);
bool parallel_enabled();
/// Forwards to omp_set_num_threads; values < 1 keep the runtime default.
void set_threads(int threads);
int max_threads();

/// Calls fn(k) for k in [0, count), in parallel when enabled.
template <class Fn>
void for_each_index(Index count, Fn&& fn) {
  if (parallel_enabled() && count > 1) {
#pragma omp parallel for schedule(static)
    for (Index k = 0; k < count; ++k) fn(k);
  } else {
    for (Index k = 0; k < count; ++k) fn(k);
  }
}

namespace serial {
Vector coordinate_median(std::span<const Vector> inputs);
Vector trimmed_mean(std::span<const Vector> inputs, int trim);
Matrix pairwise_sq_distances(std::span<const Vector> inputs);
}  // namespace serial

namespace omp {
Vector coordinate_median(std::span<const Vector> inputs);
Vector trimmed_mean(std::span<const Vector> inputs, int trim);
Matrix pairwise_sq_distances(std::span<const Vector> inputs);
}  // namespace omp

// Dispatching front-ends.
Vector coordinate_median(std::span<const Vector> inputs);
Vector trimmed_mean(std::span<const Vector> inputs, int trim);
Matrix pairwise_sq_distances(std::span<const Vector> inputs);

/// Mean computed as pivot + average deviation from the first input, so a set of
/// identical vectors maps to that vector bit-exactly.
Vector pivot_mean(std::span<const Vector> inputs);

}  // namespace byzopt::kernels
