#include "ragaudit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ragaudit {

Ranking Ranking::identity(int k) {
  Ranking r;
  r.items.resize(static_cast<std::size_t>(k));
  std::iota(r.items.begin(), r.items.end(), 0);
  return r;
}

void Ranking::check() const {
  std::vector<bool> seen(items.size(), false);
  for (int x : items) {
    if (x < 0 || x >= size() || seen[static_cast<std::size_t>(x)])
      throw RagError(ErrorCode::invalid_config, "ranking is not a permutation of 0..k-1");
    seen[static_cast<std::size_t>(x)] = true;
  }
}

int Ranking::position_of(int doc) const {
  for (int i = 0; i < size(); ++i)
    if (items[static_cast<std::size_t>(i)] == doc) return i;
  throw RagError(ErrorCode::invalid_config, "document " + std::to_string(doc) + " not in ranking");
}

Ranking rank_generator(const Vec& importances) {
  if (importances.empty()) throw RagError(ErrorCode::empty_input, "no importances to rank");
  for (double v : importances)
    if (!std::isfinite(v)) throw RagError(ErrorCode::nonfinite_input, "importance values must be finite");
  Ranking r;
  r.items.resize(importances.size());
  std::iota(r.items.begin(), r.items.end(), 0);
  std::stable_sort(r.items.begin(), r.items.end(), [&](int a, int b) {
    return importances[static_cast<std::size_t>(a)] > importances[static_cast<std::size_t>(b)];
  });
  return r;
}

double rbo(const Ranking& a, const Ranking& b, double p) {
  if (!(p > 0.0 && p < 1.0)) throw RagError(ErrorCode::invalid_p, "persistence p must lie in (0,1)");
  a.check();
  b.check();
  if (a.size() != b.size())
    throw RagError(ErrorCode::invalid_config, "rbo requires conjoint rankings of equal length");
  {
    std::vector<int> sa = a.items, sb = b.items;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    if (sa != sb) throw RagError(ErrorCode::invalid_config, "rbo requires rankings over the same item set");
  }

  const int k = a.size();
  // Incremental overlap: membership flags fill in as each depth adds one
  // item from either list.
  std::vector<bool> in_a(static_cast<std::size_t>(k), false);
  std::vector<bool> in_b(static_cast<std::size_t>(k), false);
  int overlap = 0;
  double acc = 0.0;
  double p_pow = 1.0;  // p^(d-1)
  for (int d = 1; d <= k; ++d) {
    const int item_a = a.items[static_cast<std::size_t>(d - 1)];
    const int item_b = b.items[static_cast<std::size_t>(d - 1)];
    if (item_a == item_b) {
      ++overlap;
    } else {
      if (in_b[static_cast<std::size_t>(item_a)]) ++overlap;
      if (in_a[static_cast<std::size_t>(item_b)]) ++overlap;
    }
    in_a[static_cast<std::size_t>(item_a)] = true;
    in_b[static_cast<std::size_t>(item_b)] = true;
    acc += p_pow * static_cast<double>(overlap) / d;
    p_pow *= p;
  }
  return (1.0 - p) * acc;
}

double warg(const Ranking& r_ret, const Ranking& r_gen, double p) {
  return 1.0 - rbo(r_ret, r_gen, p);
}

const std::vector<double>& default_persistence_grid() {
  static const std::vector<double> grid{0.5, 0.6, 0.7, 0.8, 0.9};
  return grid;
}

std::map<double, double> warg_sweep(const Ranking& r_ret, const Ranking& r_gen,
                                    const std::vector<double>& grid) {
  std::map<double, double> out;
  for (double p : grid) out[p] = warg(r_ret, r_gen, p);
  return out;
}

namespace {

std::vector<double> average_ranks(const Vec& values) {
  const int n = static_cast<int>(values.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return values[static_cast<std::size_t>(a)] < values[static_cast<std::size_t>(b)];
  });
  std::vector<double> ranks(static_cast<std::size_t>(n), 0.0);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && values[static_cast<std::size_t>(order[static_cast<std::size_t>(j + 1)])] ==
                            values[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])])
      ++j;
    const double avg = (i + j) / 2.0;
    for (int t = i; t <= j; ++t)
      ranks[static_cast<std::size_t>(order[static_cast<std::size_t>(t)])] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(const Ranking& r_ret, const Vec& importances) {
  r_ret.check();
  const int k = r_ret.size();
  if (k < 2) throw RagError(ErrorCode::insufficient_data, "spearman needs at least two documents");
  if (static_cast<int>(importances.size()) != k)
    throw RagError(ErrorCode::invalid_config, "importances length does not match ranking");
  for (double v : importances)
    if (!std::isfinite(v)) throw RagError(ErrorCode::nonfinite_input, "importance values must be finite");

  Vec ret_rank(static_cast<std::size_t>(k));
  for (int pos = 0; pos < k; ++pos)
    ret_rank[static_cast<std::size_t>(r_ret.items[static_cast<std::size_t>(pos)])] = pos;

  Vec negated(importances.size());
  for (std::size_t i = 0; i < importances.size(); ++i) negated[i] = -importances[i];
  const std::vector<double> gen_rank = average_ranks(negated);

  double mean_r = 0.0, mean_g = 0.0;
  for (int i = 0; i < k; ++i) {
    mean_r += ret_rank[static_cast<std::size_t>(i)];
    mean_g += gen_rank[static_cast<std::size_t>(i)];
  }
  mean_r /= k;
  mean_g /= k;
  double srg = 0.0, srr = 0.0, sgg = 0.0;
  for (int i = 0; i < k; ++i) {
    const double dr = ret_rank[static_cast<std::size_t>(i)] - mean_r;
    const double dg = gen_rank[static_cast<std::size_t>(i)] - mean_g;
    srg += dr * dg;
    srr += dr * dr;
    sgg += dg * dg;
  }
  if (sgg == 0.0) return std::nullopt;  // every importance tied: undefined
  return srg / std::sqrt(srr * sgg);
}

FailureFlags classify_failures(const Ranking& r_ret, const Ranking& r_gen, int threshold) {
  r_ret.check();
  r_gen.check();
  if (r_ret.size() != r_gen.size())
    throw RagError(ErrorCode::invalid_config, "failure classification requires conjoint rankings");
  FailureFlags flags;
  const int ret_top = r_ret.items[0];
  flags.wasted_retrieval = r_gen.position_of(ret_top) > threshold;
  const int gen_top = r_gen.items[0];
  flags.noise_distraction = r_ret.position_of(gen_top) > threshold;
  return flags;
}

FailureRates failure_rates(const std::vector<FailureFlags>& records) {
  if (records.empty()) throw RagError(ErrorCode::empty_input, "failure rates need at least one record");
  int wasted = 0, noise = 0;
  for (const FailureFlags& f : records) {
    wasted += f.wasted_retrieval ? 1 : 0;
    noise += f.noise_distraction ? 1 : 0;
  }
  FailureRates rates;
  rates.wasted_retrieval_pct = 100.0 * wasted / static_cast<double>(records.size());
  rates.noise_distraction_pct = 100.0 * noise / static_cast<double>(records.size());
  return rates;
}

AlignmentRecord align(const Ranking& r_ret, const Vec& importances, const std::vector<double>& grid,
                      int threshold) {
  AlignmentRecord rec;
  rec.retriever_ranking = r_ret;
  rec.generator_ranking = rank_generator(importances);
  rec.warg_by_p = warg_sweep(r_ret, rec.generator_ranking, grid);
  rec.spearman_rho = spearman(r_ret, importances);
  rec.flags = classify_failures(r_ret, rec.generator_ranking, threshold);
  return rec;
}

}  // namespace ragaudit
