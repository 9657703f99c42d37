#pragma once

#include <span>
#include <vector>

namespace qpop {

// Mean of the lowest ceil(alpha*n) values, alpha in (0, 1].
double empirical_cvar(std::span<const double> values, double alpha);

// Mean of the highest ceil(alpha*n) values.
double atr_top(std::span<const double> values, double alpha);

// Gini coefficient, sum|f(x)-f(y)| / (2 n sum f). Requires a positive total.
// O(n log n) via sorted prefix sums.
double gini(std::span<const double> values);

// O(n^2) pairwise definition, kept as the reference for the fast path.
double gini_ref(std::span<const double> values);

// Distinct exposed items / (catalog size * total exposed positions).
double coverage(const std::vector<std::vector<int>>& exposed_lists, int catalog_size);

// Mean over unordered item pairs of the same-category indicator; k >= 2.
double ils(std::span<const int> items, std::span<const int> category_of);

}  // namespace qpop
