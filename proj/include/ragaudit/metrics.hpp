#pragma once

#include <map>
#include <optional>
#include <vector>

#include "ragaudit/common.hpp"

namespace ragaudit {

/// A conjoint ranking: a permutation of document indices 0..k-1, most
/// relevant first. The retriever ranking is the identity by construction;
/// the generator ranking comes from rank_generator.
struct Ranking {
  std::vector<int> items;

  int size() const { return static_cast<int>(items.size()); }
  static Ranking identity(int k);
  void check() const;  // permutation validity
  /// Position of `doc` within the ranking.
  int position_of(int doc) const;
};

/// Descending stable sort of raw signed importances; ties keep the lower
/// original (retriever) index first.
Ranking rank_generator(const Vec& importances);

/// Truncated rank-biased overlap at depth k:
/// (1-p) * sum_{d=1..k} p^(d-1) * |a_{1:d} ∩ b_{1:d}| / d.
double rbo(const Ranking& a, const Ranking& b, double p);

/// 1 - rbo.
double warg(const Ranking& r_ret, const Ranking& r_gen, double p);

const std::vector<double>& default_persistence_grid();  // {0.5 .. 0.9}

std::map<double, double> warg_sweep(const Ranking& r_ret, const Ranking& r_gen,
                                    const std::vector<double>& grid = default_persistence_grid());

/// Spearman rank correlation between retriever ranks and generator
/// importance ranks (average ranks for ties). All-tied importances have no
/// defined correlation; that case returns nullopt and is reported as
/// undefined downstream.
std::optional<double> spearman(const Ranking& r_ret, const Vec& importances);

struct FailureFlags {
  bool wasted_retrieval = false;  // retriever's top doc pushed past the threshold by the generator
  bool noise_distraction = false; // generator's top doc ranked past the threshold by the retriever
};

FailureFlags classify_failures(const Ranking& r_ret, const Ranking& r_gen, int threshold = 2);

struct FailureRates {
  double wasted_retrieval_pct = 0.0;
  double noise_distraction_pct = 0.0;
};

FailureRates failure_rates(const std::vector<FailureFlags>& records);

struct AlignmentRecord {
  std::map<double, double> warg_by_p;
  std::optional<double> spearman_rho;
  FailureFlags flags;
  Ranking retriever_ranking;
  Ranking generator_ranking;
};

AlignmentRecord align(const Ranking& r_ret, const Vec& importances,
                      const std::vector<double>& grid = default_persistence_grid(), int threshold = 2);

}  // namespace ragaudit
