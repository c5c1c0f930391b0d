#include "byzopt/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>

namespace byzopt::kernels {

namespace {
std::atomic<bool> g_parallel{true};

void check_inputs(std::span<const Vector> inputs) {
  require(!inputs.empty(), "aggregation input is empty");
  const Index d = inputs.front().size();
  for (const auto& v : inputs) require_same_dim(v, d, "aggregation input");
}

// Median of the column `j` across inputs; even counts average the two central values.
double median_at(std::span<const Vector> inputs, Index j, std::vector<double>& scratch) {
  scratch.resize(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) scratch[i] = inputs[i][j];
  std::sort(scratch.begin(), scratch.end());
  const std::size_t n = scratch.size();
  if (n % 2 == 1) return scratch[n / 2];
  const double lo = scratch[n / 2 - 1], hi = scratch[n / 2];
  return lo == hi ? lo : lo + (hi - lo) / 2.0;
}

double trimmed_at(std::span<const Vector> inputs, Index j, int trim, std::vector<double>& scratch) {
  scratch.resize(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) scratch[i] = inputs[i][j];
  std::sort(scratch.begin(), scratch.end());
  const std::size_t lo = static_cast<std::size_t>(trim), hi = scratch.size() - static_cast<std::size_t>(trim);
  const double pivot = scratch[lo];
  double acc = 0.0;
  for (std::size_t k = lo; k < hi; ++k) acc += scratch[k] - pivot;
  return pivot + acc / static_cast<double>(hi - lo);
}

void check_trim(std::span<const Vector> inputs, int trim) {
  require(trim >= 0 && 2 * static_cast<std::size_t>(trim) < inputs.size(),
          "trimmed mean: trim count must leave at least one input");
}
}  // namespace

void set_parallel(bool enabled) { g_parallel = enabled; }
bool parallel_enabled() { return g_parallel; }
void set_threads(int threads) {
  if (threads >= 1) omp_set_num_threads(threads);
}
int max_threads() { return omp_get_max_threads(); }

namespace serial {

Vector coordinate_median(std::span<const Vector> inputs) {
  check_inputs(inputs);
  const Index d = inputs.front().size();
  Vector out(d);
  std::vector<double> scratch;
  for (Index j = 0; j < d; ++j) out[j] = median_at(inputs, j, scratch);
  return out;
}

Vector trimmed_mean(std::span<const Vector> inputs, int trim) {
  check_inputs(inputs);
  check_trim(inputs, trim);
  const Index d = inputs.front().size();
  Vector out(d);
  std::vector<double> scratch;
  for (Index j = 0; j < d; ++j) out[j] = trimmed_at(inputs, j, trim, scratch);
  return out;
}

Matrix pairwise_sq_distances(std::span<const Vector> inputs) {
  check_inputs(inputs);
  const auto n = static_cast<Index>(inputs.size());
  Matrix dist = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index k = i + 1; k < n; ++k) {
      const double v = (inputs[i] - inputs[k]).squaredNorm();
      dist(i, k) = v;
      dist(k, i) = v;
    }
  }
  return dist;
}

}  // namespace serial

namespace omp {

Vector coordinate_median(std::span<const Vector> inputs) {
  check_inputs(inputs);
  const Index d = inputs.front().size();
  Vector out(d);
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (Index j = 0; j < d; ++j) out[j] = median_at(inputs, j, scratch);
  }
  return out;
}

Vector trimmed_mean(std::span<const Vector> inputs, int trim) {
  check_inputs(inputs);
  check_trim(inputs, trim);
  const Index d = inputs.front().size();
  Vector out(d);
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (Index j = 0; j < d; ++j) out[j] = trimmed_at(inputs, j, trim, scratch);
  }
  return out;
}

Matrix pairwise_sq_distances(std::span<const Vector> inputs) {
  check_inputs(inputs);
  const auto n = static_cast<Index>(inputs.size());
  Matrix dist = Matrix::Zero(n, n);
#pragma omp parallel for schedule(dynamic)
  for (Index i = 0; i < n; ++i) {
    for (Index k = i + 1; k < n; ++k) {
      const double v = (inputs[i] - inputs[k]).squaredNorm();
      dist(i, k) = v;
      dist(k, i) = v;
    }
  }
  return dist;
}

}  // namespace omp

// Small problems are not worth a parallel region.
namespace {
bool use_omp(std::span<const Vector> inputs) {
  return parallel_enabled() && !inputs.empty() && inputs.front().size() * static_cast<Index>(inputs.size()) >= 4096;
}
}  // namespace

Vector coordinate_median(std::span<const Vector> inputs) {
  return use_omp(inputs) ? omp::coordinate_median(inputs) : serial::coordinate_median(inputs);
}

Vector trimmed_mean(std::span<const Vector> inputs, int trim) {
  return use_omp(inputs) ? omp::trimmed_mean(inputs, trim) : serial::trimmed_mean(inputs, trim);
}

Matrix pairwise_sq_distances(std::span<const Vector> inputs) {
  return use_omp(inputs) ? omp::pairwise_sq_distances(inputs) : serial::pairwise_sq_distances(inputs);
}

Vector pivot_mean(std::span<const Vector> inputs) {
  check_inputs(inputs);
  const Vector& pivot = inputs.front();
  Vector acc = Vector::Zero(pivot.size());
  for (std::size_t i = 1; i < inputs.size(); ++i) acc += inputs[i] - pivot;
  return pivot + acc / static_cast<double>(inputs.size());
}

}  // namespace byzopt::kernels
