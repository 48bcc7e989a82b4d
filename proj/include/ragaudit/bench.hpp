#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ragaudit/common.hpp"

namespace ragaudit {

/// Estimator benchmark over synthetic mock-LM games: MSE against exact
/// Shapley values, run-to-run variance over repeated seeds and a paired
/// Wilcoxon test against single-shot Kernel SHAP under identical sampling.
struct BenchConfig {
  int arity = 5;           // documents per game
  int outputs = 3;         // answer tokens per game
  int games = 100;         // independent game instances
  int repeats = 10;        // re-runs per game for the variance column
  std::vector<int> n_grid = {20};
  std::vector<int> m_grid = {10, 50, 200};
  std::vector<std::string> methods = {"kshap", "mc", "pmc"};
  std::vector<std::string> samplings = {"uniform", "complementary"};
  int mc_size = 0;  // N' ; 0 derives 3N/4
  std::uint64_t seed = 0;

  static BenchConfig from_file(const std::string& path);
  void validate() const;
};

struct BenchRow {
  std::string method;
  std::string sampling;
  int perturbations = 0;  // N
  int mc_samples = 0;     // M; 0 for kshap
  int mc_size = 0;        // N'; 0 for kshap
  double mse_vs_exact = 0.0;
  double variance_over_repeats = 0.0;
  double wilcoxon_p_vs_kshap = -1.0;  // <0 renders empty (kshap rows)
  Vec per_game_mse;                   // paired samples, one per game
};

std::vector<BenchRow> bench_shap(const BenchConfig& config);

/// CSV with the header
/// method,sampling,N,M,N_prime,mse_vs_exact,variance_over_10_repeats,wilcoxon_p_vs_kshap.
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace ragaudit
