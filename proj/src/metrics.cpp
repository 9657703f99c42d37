#include "qpop/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace qpop {

static std::vector<double> sorted_copy(std::span<const double> values) {
  std::vector<double> v(values.begin(), values.end());
  std::stable_sort(v.begin(), v.end());
  return v;
}

static std::size_t tail_count(std::size_t n, double alpha) {
  return static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n)));
}

double empirical_cvar(std::span<const double> values, double alpha) {
  if (values.empty()) throw std::invalid_argument("empirical_cvar: empty input");
  if (alpha <= 0.0 || alpha > 1.0)
    throw std::invalid_argument("empirical_cvar: alpha must lie in (0, 1]");
  auto v = sorted_copy(values);
  const std::size_t k = tail_count(v.size(), alpha);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += v[i];
  return s / static_cast<double>(k);
}

double atr_top(std::span<const double> values, double alpha) {
  if (values.empty()) throw std::invalid_argument("atr_top: empty input");
  if (alpha <= 0.0 || alpha > 1.0)
    throw std::invalid_argument("atr_top: alpha must lie in (0, 1]");
  auto v = sorted_copy(values);
  const std::size_t k = tail_count(v.size(), alpha);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += v[v.size() - 1 - i];
  return s / static_cast<double>(k);
}

double gini(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("gini: empty input");
  auto v = sorted_copy(values);
  const double n = static_cast<double>(v.size());
  double total = 0.0;
  double weighted = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    total += v[i];
    // sum_{x,y} |x - y| = 2 * sum_i (2i - n + 1) * x_(i) on sorted data
    weighted += (2.0 * static_cast<double>(i) - n + 1.0) * v[i];
  }
  if (total <= 0.0)
    throw std::invalid_argument("gini: undefined for nonpositive value total");
  return weighted / (n * total);
}

double gini_ref(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("gini_ref: empty input");
  double total = 0.0;
  for (double x : values) total += x;
  if (total <= 0.0)
    throw std::invalid_argument("gini_ref: undefined for nonpositive value total");
  double diff = 0.0;
  for (double x : values)
    for (double y : values) diff += std::abs(x - y);
  return diff / (2.0 * static_cast<double>(values.size()) * total);
}

double coverage(const std::vector<std::vector<int>>& exposed_lists, int catalog_size) {
  if (catalog_size <= 0) throw std::invalid_argument("coverage: catalog size must be positive");
  std::unordered_set<int> distinct;
  std::size_t positions = 0;
  for (const auto& list : exposed_lists) {
    positions += list.size();
    distinct.insert(list.begin(), list.end());
  }
  if (positions == 0) return 0.0;
  return static_cast<double>(distinct.size()) /
         (static_cast<double>(catalog_size) * static_cast<double>(positions));
}

double ils(std::span<const int> items, std::span<const int> category_of) {
  if (items.size() < 2) throw std::invalid_argument("ils: need at least 2 items");
  std::size_t same = 0, pairs = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      ++pairs;
      if (category_of[items[i]] == category_of[items[j]]) ++same;
    }
  }
  return static_cast<double>(same) / static_cast<double>(pairs);
}

}  // namespace qpop
