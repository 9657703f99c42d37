#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace qpop::par {

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// Parallel loop over [0, n). The body must only write to per-index state.
template <typename F>
void for_each(std::size_t n, F&& body) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    body(static_cast<std::size_t>(i));
  }
}

// Number of accumulation chunks. Fixed (not thread-count dependent) so that
// floating-point reduction order, and therefore every emitted metric, is
// identical no matter how many OpenMP threads run.
inline constexpr std::size_t kReductionChunks = 8;

// Deterministic parallel sum-reduction of per-item contributions.
//
// body(i, acc) adds item i's vector contribution into acc (length dim) and
// returns its scalar contribution. Chunks are processed in parallel, each
// serially in index order; chunk partials are merged serially in chunk order.
// `acc_out` (length dim) is accumulated into, not cleared.
template <typename F>
double chunked_accumulate(std::size_t n, std::span<double> acc_out, F&& body) {
  if (n == 0) return 0.0;
  const std::size_t dim = acc_out.size();
  const std::size_t chunks = std::min(kReductionChunks, n);
  std::vector<double> partial(chunks * dim, 0.0);
  std::vector<double> partial_scalar(chunks, 0.0);

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long c = 0; c < static_cast<long long>(chunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * n / chunks;
    const std::size_t end = (static_cast<std::size_t>(c) + 1) * n / chunks;
    std::span<double> acc(partial.data() + static_cast<std::size_t>(c) * dim, dim);
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += body(i, acc);
    partial_scalar[static_cast<std::size_t>(c)] = s;
  }

  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += partial_scalar[c];
    const double* src = partial.data() + c * dim;
    for (std::size_t k = 0; k < dim; ++k) acc_out[k] += src[k];
  }
  return total;
}

}  // namespace qpop::par
