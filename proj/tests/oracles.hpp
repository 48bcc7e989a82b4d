// Independent reference implementations used only by tests. Each one
// recomputes a quantity from its definition by a different route than the
// library, so agreement is evidence rather than tautology.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "ragaudit/common.hpp"
#include "ragaudit/shapley.hpp"

namespace testoracles {

// Shapley values as the average marginal contribution over all k!
// permutations, evaluated literally. O(k! * k); fine for k <= 6.
inline ragaudit::AttributionMatrix permutation_shapley(const ragaudit::SetValueOracle& oracle) {
  const int k = oracle.arity();
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);

  // Cache evaluations per mask to keep the runtime sane.
  std::vector<ragaudit::Vec> values(1u << k);
  std::vector<bool> have(1u << k, false);
  auto value_of = [&](std::uint32_t mask) -> const ragaudit::Vec& {
    if (!have[mask]) {
      values[mask] = oracle.evaluate(ragaudit::coalition_members(mask, k));
      have[mask] = true;
    }
    return values[mask];
  };

  const int m = static_cast<int>(value_of(0).size());
  ragaudit::AttributionMatrix out;
  out.players = k;
  out.outputs = m;
  out.entries.assign(static_cast<std::size_t>(k), ragaudit::Vec(static_cast<std::size_t>(m), 0.0));

  long permutations = 0;
  do {
    std::uint32_t mask = 0;
    for (int pos = 0; pos < k; ++pos) {
      const int player = order[static_cast<std::size_t>(pos)];
      const ragaudit::Vec& before = value_of(mask);
      const ragaudit::Vec& after = value_of(mask | (1u << player));
      for (int j = 0; j < m; ++j)
        out.entries[static_cast<std::size_t>(player)][static_cast<std::size_t>(j)] +=
            after[static_cast<std::size_t>(j)] - before[static_cast<std::size_t>(j)];
      mask |= (1u << player);
    }
    ++permutations;
  } while (std::next_permutation(order.begin(), order.end()));

  for (auto& row : out.entries)
    for (double& v : row) v /= static_cast<double>(permutations);
  out.baseline_value = value_of(0);
  out.full_value = value_of((1u << k) - 1);
  return out;
}

// Truncated rank-biased overlap straight from the definition: build the
// prefix sets at every depth and intersect them.
inline double brute_force_rbo(const std::vector<int>& a, const std::vector<int>& b, double p) {
  const int k = static_cast<int>(a.size());
  double acc = 0.0;
  for (int depth = 1; depth <= k; ++depth) {
    std::set<int> sa(a.begin(), a.begin() + depth);
    std::set<int> sb(b.begin(), b.begin() + depth);
    int overlap = 0;
    for (int x : sa)
      if (sb.count(x)) ++overlap;
    acc += std::pow(p, depth - 1) * static_cast<double>(overlap) / depth;
  }
  return (1.0 - p) * acc;
}

// Spearman rho as rank-transform followed by a literal Pearson correlation.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const int n = static_cast<int>(v.size());
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) { return v[static_cast<std::size_t>(x)] < v[static_cast<std::size_t>(y)]; });
  std::vector<double> ranks(static_cast<std::size_t>(n), 0.0);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && v[static_cast<std::size_t>(idx[static_cast<std::size_t>(j + 1)])] ==
                            v[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])])
      ++j;
    const double avg = (i + j) / 2.0;
    for (int t = i; t <= j; ++t) ranks[static_cast<std::size_t>(idx[static_cast<std::size_t>(t)])] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += x[static_cast<std::size_t>(i)];
    my += y[static_cast<std::size_t>(i)];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dx = x[static_cast<std::size_t>(i)] - mx;
    const double dy = y[static_cast<std::size_t>(i)] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return sxy / std::sqrt(sxx * syy);
}

// Exact one-sided Wilcoxon signed-rank p-value by enumerating all 2^n sign
// assignments over the observed (possibly tied) ranks. n <= ~20.
inline double exact_wilcoxon_p(const std::vector<double>& deltas, bool greater) {
  std::vector<double> nonzero;
  for (double d : deltas)
    if (d != 0.0) nonzero.push_back(d);
  const int n = static_cast<int>(nonzero.size());
  std::vector<double> abs_vals(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) abs_vals[static_cast<std::size_t>(i)] = std::fabs(nonzero[static_cast<std::size_t>(i)]);
  const std::vector<double> ranks = average_ranks(abs_vals);

  double w_obs = 0.0;
  for (int i = 0; i < n; ++i)
    if (nonzero[static_cast<std::size_t>(i)] > 0.0) w_obs += ranks[static_cast<std::size_t>(i)] + 1.0;

  long count = 0;
  const long total = 1L << n;
  for (long mask = 0; mask < total; ++mask) {
    double w = 0.0;
    for (int i = 0; i < n; ++i)
      if (mask & (1L << i)) w += ranks[static_cast<std::size_t>(i)] + 1.0;
    if (greater ? (w >= w_obs - 1e-12) : (w <= w_obs + 1e-12)) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(total);
}

}  // namespace testoracles
