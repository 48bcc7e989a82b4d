#include "ragaudit/bench.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "ragaudit/faithfulness.hpp"
#include "ragaudit/gateway.hpp"
#include "ragaudit/shapley.hpp"

namespace ragaudit {

namespace {

SamplerConfig::Strategy strategy_from_string(const std::string& s) {
  if (s == "uniform") return SamplerConfig::Strategy::uniform;
  if (s == "complementary") return SamplerConfig::Strategy::complementary;
  throw RagError(ErrorCode::invalid_config, "unknown sampling strategy '" + s + "'");
}

double mse(const AttributionMatrix& estimate, const AttributionMatrix& truth) {
  double acc = 0.0;
  for (int i = 0; i < truth.players; ++i)
    for (int j = 0; j < truth.outputs; ++j) {
      const double d = estimate.entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] -
                       truth.entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      acc += d * d;
    }
  return acc / (truth.players * truth.outputs);
}

struct Cell {
  std::string method;
  SamplerConfig::Strategy strategy;
  int n = 0;
  int m = 0;        // 0 for kshap
  int n_prime = 0;  // 0 for kshap
};

AttributionMatrix run_estimator(const Cell& cell, const SetValueOracle& oracle, std::uint64_t seed,
                                int n_prime) {
  SamplerConfig sampler;
  sampler.strategy = cell.strategy;
  sampler.perturbations = cell.n;
  sampler.seed = seed;
  if (cell.method == "kshap") {
    sampler.mc_samples = 1;
    sampler.mc_size = std::max(1, cell.n - 1);
    std::vector<Coalition> pool = sample_coalitions(sampler, oracle.arity());
    evaluate_pool(oracle, pool);
    return kernel_shap(pool, oracle.arity());
  }
  sampler.mc_samples = cell.m;
  sampler.mc_size = n_prime;
  sampler.pairing = cell.method == "pmc" ? SamplerConfig::Pairing::paired : SamplerConfig::Pairing::random;
  return mc_shap(oracle, sampler);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

BenchConfig BenchConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RagError(ErrorCode::io, "cannot open bench config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw RagError(ErrorCode::schema, std::string("bench config is not valid JSON: ") + e.what());
  }
  BenchConfig cfg;
  cfg.arity = j.value("k", cfg.arity);
  cfg.outputs = j.value("m", cfg.outputs);
  cfg.games = j.value("games", cfg.games);
  cfg.repeats = j.value("repeats", cfg.repeats);
  if (j.contains("N_grid")) cfg.n_grid = j.at("N_grid").get<std::vector<int>>();
  if (j.contains("M_grid")) cfg.m_grid = j.at("M_grid").get<std::vector<int>>();
  if (j.contains("methods")) cfg.methods = j.at("methods").get<std::vector<std::string>>();
  if (j.contains("samplings")) cfg.samplings = j.at("samplings").get<std::vector<std::string>>();
  cfg.mc_size = j.value("N_prime", 0);
  cfg.seed = j.value("seed", static_cast<std::uint64_t>(0));
  cfg.validate();
  return cfg;
}

void BenchConfig::validate() const {
  if (arity < 2 || arity > 12) throw RagError(ErrorCode::invalid_config, "bench arity must be in [2,12]");
  if (outputs < 1) throw RagError(ErrorCode::invalid_config, "bench outputs must be >= 1");
  if (games < 1) throw RagError(ErrorCode::invalid_config, "bench needs at least one game");
  if (repeats < 2) throw RagError(ErrorCode::invalid_config, "variance needs at least two repeats");
  if (n_grid.empty() || m_grid.empty() || methods.empty() || samplings.empty())
    throw RagError(ErrorCode::invalid_config, "bench grids must be non-empty");
  for (const std::string& m : methods)
    if (m != "kshap" && m != "mc" && m != "pmc")
      throw RagError(ErrorCode::invalid_config, "bench method must be kshap, mc or pmc");
  for (const std::string& s : samplings) strategy_from_string(s);
}

std::vector<BenchRow> bench_shap(const BenchConfig& config) {
  config.validate();

  // Pre-build the games and their exact attributions once.
  std::vector<std::unique_ptr<FunctionOracle>> oracles;
  std::vector<AttributionMatrix> exact;
  std::vector<std::uint64_t> game_seeds;
  Rng master(config.seed);
  for (int g = 0; g < config.games; ++g) {
    const std::uint64_t game_seed = master.derive(static_cast<std::uint64_t>(g));
    game_seeds.push_back(game_seed);
    auto spec = std::make_shared<MockLMSpec>(MockLMSpec::random_game(config.arity, config.outputs, game_seed));
    oracles.push_back(std::make_unique<FunctionOracle>(
        config.arity, [spec](std::uint32_t mask) { return spec->value_for_mask(0, mask); }));
    exact.push_back(exact_shapley(*oracles.back()));
  }

  std::vector<Cell> cells;
  for (const std::string& sampling : config.samplings) {
    const SamplerConfig::Strategy strategy = strategy_from_string(sampling);
    for (int n : config.n_grid) {
      for (const std::string& method : config.methods) {
        if (method == "pmc" && strategy != SamplerConfig::Strategy::complementary) continue;
        if (method == "kshap") {
          cells.push_back({method, strategy, n, 0, 0});
          continue;
        }
        for (int m : config.m_grid) {
          const int n_prime = config.mc_size > 0 ? config.mc_size : std::max(3, (3 * n) / 4);
          cells.push_back({method, strategy, n, m, n_prime});
        }
      }
    }
  }

  // Paired estimator seeds: every cell sees the identical pool per game,
  // so kshap and its MC variants refit the same evaluations.
  std::vector<BenchRow> rows;
  std::map<std::pair<std::string, int>, Vec> kshap_mse;  // (sampling, N) -> per-game mse
  for (const Cell& cell : cells) {
    BenchRow row;
    row.method = cell.method;
    row.sampling = cell.strategy == SamplerConfig::Strategy::uniform ? "uniform" : "complementary";
    row.perturbations = cell.n;
    row.mc_samples = cell.m;
    row.mc_size = cell.n_prime;

    double mse_acc = 0.0;
    double var_acc = 0.0;
    row.per_game_mse.reserve(static_cast<std::size_t>(config.games));
    for (int g = 0; g < config.games; ++g) {
      const std::uint64_t base = splitmix64(game_seeds[static_cast<std::size_t>(g)] ^ 0x657374ULL);
      const AttributionMatrix estimate = run_estimator(cell, *oracles[static_cast<std::size_t>(g)], base, cell.n_prime);
      const double game_mse = mse(estimate, exact[static_cast<std::size_t>(g)]);
      row.per_game_mse.push_back(game_mse);
      mse_acc += game_mse;

      // Variance of the attribution entries over independent re-runs.
      std::vector<AttributionMatrix> runs;
      runs.reserve(static_cast<std::size_t>(config.repeats));
      for (int r = 0; r < config.repeats; ++r)
        runs.push_back(run_estimator(cell, *oracles[static_cast<std::size_t>(g)],
                                     splitmix64(base + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(r + 1)),
                                     cell.n_prime));
      double entry_var = 0.0;
      for (int i = 0; i < config.arity; ++i) {
        for (int j = 0; j < config.outputs; ++j) {
          double mean = 0.0;
          for (const AttributionMatrix& m2 : runs)
            mean += m2.entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
          mean /= config.repeats;
          double var = 0.0;
          for (const AttributionMatrix& m2 : runs) {
            const double d = m2.entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - mean;
            var += d * d;
          }
          entry_var += var / (config.repeats - 1);
        }
      }
      var_acc += entry_var / (config.arity * config.outputs);
    }
    row.mse_vs_exact = mse_acc / config.games;
    row.variance_over_repeats = var_acc / config.games;

    if (cell.method == "kshap") kshap_mse[{row.sampling, cell.n}] = row.per_game_mse;
    rows.push_back(std::move(row));
  }

  // Paired one-sided Wilcoxon: is the MC estimator's MSE lower than single
  // kernel SHAP's on the same games and pools?
  for (BenchRow& row : rows) {
    if (row.method == "kshap") continue;
    auto it = kshap_mse.find({row.sampling, row.perturbations});
    if (it == kshap_mse.end()) continue;
    Vec deltas(row.per_game_mse.size());
    for (std::size_t g = 0; g < deltas.size(); ++g) deltas[g] = row.per_game_mse[g] - it->second[g];
    try {
      row.wilcoxon_p_vs_kshap = wilcoxon_signed_rank(deltas, Alternative::less);
    } catch (const RagError&) {
      row.wilcoxon_p_vs_kshap = -1.0;  // too few informative pairs
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "method,sampling,N,M,N_prime,mse_vs_exact,variance_over_10_repeats,wilcoxon_p_vs_kshap\n";
  for (const BenchRow& row : rows) {
    out << row.method << ',' << row.sampling << ',' << row.perturbations << ',';
    if (row.mc_samples > 0) out << row.mc_samples;
    out << ',';
    if (row.mc_size > 0) out << row.mc_size;
    out << ',' << format_double(row.mse_vs_exact) << ',' << format_double(row.variance_over_repeats) << ',';
    if (row.wilcoxon_p_vs_kshap >= 0.0) out << format_double(row.wilcoxon_p_vs_kshap);
    out << '\n';
  }
  return out.str();
}

}  // namespace ragaudit
