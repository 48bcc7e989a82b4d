#include "ragaudit/shapley.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace ragaudit {
namespace {

constexpr std::uint64_t kMcStreamSalt = 0x6d635f73686170ULL;  // mc resampling stream

std::string members_to_string(const std::vector<int>& members) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (i) os << ',';
    os << members[i];
  }
  os << '}';
  return os.str();
}

double falling_factorial_weight(int subset_size, int arity) {
  // |S|! (k - |S| - 1)! / k!
  double w = 1.0;
  for (int i = 1; i <= subset_size; ++i) w *= i;
  for (int i = 1; i <= arity - subset_size - 1; ++i) w *= i;
  for (int i = 1; i <= arity; ++i) w /= i;
  return w;
}

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r *= static_cast<double>(n - i + 1) / i;
  return r;
}

struct CollapsedRow {
  std::uint32_t mask;
  Vec value;
  double multiplicity;
};

}  // namespace

Vec FunctionOracle::evaluate(const std::vector<int>& members) const {
  return fn_(coalition_mask(members, arity_));
}

Vec CachingOracle::evaluate(const std::vector<int>& members) const {
  const std::uint32_t mask = coalition_mask(members, inner_.arity());
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(mask);
    if (it != cache_.end()) return it->second;
  }
  Vec value = inner_.evaluate(members);
  std::lock_guard<std::mutex> lock(mu_);
  auto [it, inserted] = cache_.emplace(mask, std::move(value));
  if (inserted) ++misses_;
  return it->second;
}

std::size_t CachingOracle::misses() const {
  std::lock_guard<std::mutex> lock(mu_);
  return misses_;
}

std::uint32_t coalition_mask(const std::vector<int>& members, int arity) {
  std::uint32_t mask = 0;
  for (int m : members) {
    if (m < 0 || m >= arity)
      throw RagError(ErrorCode::invalid_config,
                     "coalition member " + std::to_string(m) + " outside arity " + std::to_string(arity));
    mask |= (1u << m);
  }
  return mask;
}

std::vector<int> coalition_members(std::uint32_t mask, int arity) {
  std::vector<int> members;
  for (int i = 0; i < arity; ++i) {
    if (mask & (1u << i)) members.push_back(i);
  }
  return members;
}

Vec AttributionMatrix::column_sums() const {
  Vec sums(static_cast<std::size_t>(outputs), 0.0);
  for (const Vec& row : entries) {
    for (int j = 0; j < outputs; ++j) sums[static_cast<std::size_t>(j)] += row[static_cast<std::size_t>(j)];
  }
  return sums;
}

Vec AttributionMatrix::row_means() const {
  Vec means(static_cast<std::size_t>(players), 0.0);
  for (int i = 0; i < players; ++i) {
    double s = 0.0;
    for (double v : entries[static_cast<std::size_t>(i)]) s += v;
    means[static_cast<std::size_t>(i)] = s / outputs;
  }
  return means;
}

void SamplerConfig::validate(int arity) const {
  if (arity < 1) throw RagError(ErrorCode::invalid_config, "sampler arity must be >= 1");
  if (perturbations < 2)
    throw RagError(ErrorCode::invalid_config, "perturbation budget N must be >= 2");
  if (arity < 31 && perturbations > (1 << arity))
    throw RagError(ErrorCode::invalid_config, "perturbation budget N exceeds 2^k");
  if (strategy == Strategy::complementary && perturbations % 2 != 0)
    throw RagError(ErrorCode::invalid_config, "complementary sampling needs an even N");
  if (mc_samples < 1) throw RagError(ErrorCode::invalid_config, "MC sample count M must be >= 1");
  if (mc_size < 1 || mc_size >= perturbations)
    throw RagError(ErrorCode::invalid_config, "MC resample size N' must satisfy 1 <= N' < N");
}

double shapley_kernel_weight(int arity, int subset_size) {
  if (subset_size <= 0 || subset_size >= arity)
    return std::numeric_limits<double>::infinity();
  return (arity - 1) / (binomial(arity, subset_size) * subset_size * (arity - subset_size));
}

AttributionMatrix exact_shapley(const SetValueOracle& oracle, int enumeration_cap) {
  const int k = oracle.arity();
  if (k < 1) throw RagError(ErrorCode::invalid_config, "oracle arity must be >= 1");
  if (k > enumeration_cap)
    throw RagError(ErrorCode::arity_too_large,
                   "arity " + std::to_string(k) + " exceeds enumeration cap " + std::to_string(enumeration_cap));

  const std::uint32_t total = 1u << k;
  std::vector<Vec> values(total);
  for (std::uint32_t mask = 0; mask < total; ++mask) {
    const std::vector<int> members = coalition_members(mask, k);
    try {
      values[mask] = oracle.evaluate(members);
    } catch (const RagError&) {
      throw;
    } catch (const std::exception& e) {
      throw RagError(ErrorCode::oracle_failure,
                     "oracle failed on coalition " + members_to_string(members) + ": " + e.what());
    }
    if (values[mask].empty())
      throw RagError(ErrorCode::oracle_failure,
                     "oracle returned an empty value for coalition " + members_to_string(members));
    if (values[mask].size() != values[0].size())
      throw RagError(ErrorCode::dimension_mismatch, "oracle output dimension changed between coalitions");
  }

  const int m = static_cast<int>(values[0].size());
  std::vector<double> weight(static_cast<std::size_t>(k));
  for (int s = 0; s < k; ++s) weight[static_cast<std::size_t>(s)] = falling_factorial_weight(s, k);

  AttributionMatrix out;
  out.players = k;
  out.outputs = m;
  out.entries.assign(static_cast<std::size_t>(k), Vec(static_cast<std::size_t>(m), 0.0));
  for (int i = 0; i < k; ++i) {
    const std::uint32_t bit = 1u << i;
    Vec& row = out.entries[static_cast<std::size_t>(i)];
    for (std::uint32_t mask = 0; mask < total; ++mask) {
      if (mask & bit) continue;
      const double w = weight[static_cast<std::size_t>(__builtin_popcount(mask))];
      const Vec& with = values[mask | bit];
      const Vec& without = values[mask];
      for (int j = 0; j < m; ++j)
        row[static_cast<std::size_t>(j)] += w * (with[static_cast<std::size_t>(j)] - without[static_cast<std::size_t>(j)]);
    }
  }
  out.baseline_value = values[0];
  out.full_value = values[total - 1];
  return out;
}

std::vector<Coalition> sample_coalitions(const SamplerConfig& config, int arity) {
  config.validate(arity);
  const int k = arity;
  const int n_target = config.perturbations;
  Rng rng(config.seed);

  // Size distribution proportional to the per-size kernel mass 1/(s(k-s)).
  std::vector<double> cumulative;
  double total_mass = 0.0;
  for (int s = 1; s <= k - 1; ++s) {
    total_mass += 1.0 / (static_cast<double>(s) * (k - s));
    cumulative.push_back(total_mass);
  }
  auto draw_mask = [&]() -> std::uint32_t {
    const double u = rng.uniform01() * total_mass;
    int size = 1;
    for (std::size_t i = 0; i < cumulative.size(); ++i) {
      if (u <= cumulative[i]) {
        size = static_cast<int>(i) + 1;
        break;
      }
      size = static_cast<int>(cumulative.size());
    }
    std::uint32_t mask = 0;
    for (int idx : rng.sample_without_replacement(k, size)) mask |= (1u << idx);
    return mask;
  };

  const std::uint32_t full = (k >= 31) ? 0 : ((1u << k) - 1);
  std::vector<std::uint32_t> masks;
  masks.reserve(static_cast<std::size_t>(n_target));
  masks.push_back(0);
  masks.push_back(full);
  std::set<std::uint32_t> seen(masks.begin(), masks.end());

  const long max_attempts = 1000L * n_target;
  long attempts = 0;
  if (config.strategy == SamplerConfig::Strategy::uniform) {
    while (static_cast<int>(masks.size()) < n_target) {
      if (k == 1) break;  // only the two anchors exist
      const std::uint32_t mask = draw_mask();
      if (config.dedup && seen.count(mask)) {
        if (++attempts >= max_attempts) break;
        continue;
      }
      masks.push_back(mask);
      seen.insert(mask);
    }
    // Deterministic fill when rejection sampling stalls (dedup near 2^k).
    for (std::uint32_t mask = 1; config.dedup && static_cast<int>(masks.size()) < n_target && mask < full; ++mask) {
      if (!seen.count(mask)) {
        masks.push_back(mask);
        seen.insert(mask);
      }
    }
  } else {
    while (static_cast<int>(masks.size()) < n_target) {
      if (k == 1) break;
      const std::uint32_t mask = draw_mask();
      const std::uint32_t comp = full ^ mask;
      if (config.dedup && (seen.count(mask) || seen.count(comp))) {
        if (++attempts >= max_attempts) break;
        continue;
      }
      masks.push_back(mask);
      masks.push_back(comp);
      seen.insert(mask);
      seen.insert(comp);
    }
    for (std::uint32_t mask = 1; config.dedup && static_cast<int>(masks.size()) < n_target && mask < full; ++mask) {
      const std::uint32_t comp = full ^ mask;
      if (!seen.count(mask) && !seen.count(comp)) {
        masks.push_back(mask);
        masks.push_back(comp);
        seen.insert(mask);
        seen.insert(comp);
      }
    }
  }

  if (static_cast<int>(masks.size()) != n_target)
    throw RagError(ErrorCode::invalid_config,
                   "could not assemble a pool of " + std::to_string(n_target) + " coalitions (arity " +
                       std::to_string(k) + (config.dedup ? ", dedup on)" : ")"));

  std::vector<Coalition> pool;
  pool.reserve(masks.size());
  for (std::uint32_t mask : masks) pool.push_back(Coalition{coalition_members(mask, k), {}});
  return pool;
}

void evaluate_pool(const SetValueOracle& oracle, std::vector<Coalition>& pool) {
  std::map<std::uint32_t, Vec> values;
  for (Coalition& c : pool) {
    const std::uint32_t mask = coalition_mask(c.members, oracle.arity());
    auto it = values.find(mask);
    if (it == values.end()) {
      try {
        it = values.emplace(mask, oracle.evaluate(c.members)).first;
      } catch (const RagError&) {
        throw;
      } catch (const std::exception& e) {
        throw RagError(ErrorCode::oracle_failure,
                       "oracle failed on coalition " + members_to_string(c.members) + ": " + e.what());
      }
    }
    c.value = it->second;
  }
}

AttributionMatrix kernel_shap(const std::vector<Coalition>& coalitions, int arity) {
  const int k = arity;
  if (k < 1) throw RagError(ErrorCode::invalid_config, "arity must be >= 1");
  const std::uint32_t full = (1u << k) - 1;

  const Vec* empty_value = nullptr;
  const Vec* full_value = nullptr;
  std::map<std::uint32_t, CollapsedRow> rows;
  for (const Coalition& c : coalitions) {
    if (!c.evaluated())
      throw RagError(ErrorCode::invalid_config,
                     "kernel_shap requires evaluated coalitions; " + members_to_string(c.members) + " has no value");
    const std::uint32_t mask = coalition_mask(c.members, k);
    if (mask == 0) {
      empty_value = &c.value;
    } else if (mask == full) {
      full_value = &c.value;
    } else {
      auto it = rows.find(mask);
      if (it == rows.end()) {
        rows.emplace(mask, CollapsedRow{mask, c.value, 1.0});
      } else {
        it->second.multiplicity += 1.0;
      }
    }
  }
  if (empty_value == nullptr || full_value == nullptr)
    throw RagError(ErrorCode::missing_anchor,
                   "kernel_shap needs evaluated empty and full coalitions for the efficiency constraint");

  const int m = static_cast<int>(empty_value->size());
  if (static_cast<int>(full_value->size()) != m)
    throw RagError(ErrorCode::dimension_mismatch, "anchor value dimensions disagree");

  Vec delta(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j)
    delta[static_cast<std::size_t>(j)] = (*full_value)[static_cast<std::size_t>(j)] - (*empty_value)[static_cast<std::size_t>(j)];

  AttributionMatrix out;
  out.players = k;
  out.outputs = m;
  out.baseline_value = *empty_value;
  out.full_value = *full_value;
  out.entries.assign(static_cast<std::size_t>(k), Vec(static_cast<std::size_t>(m), 0.0));

  if (k == 1) {
    out.entries[0] = delta;
    return out;
  }

  const int r = static_cast<int>(rows.size());
  if (r < k - 1)
    throw RagError(ErrorCode::coalition_deficit,
                   "kernel_shap needs at least " + std::to_string(k - 1) + " distinct interior coalitions, got " +
                       std::to_string(r));

  // Constraint elimination: beta_{k-1} = delta - sum of the others.
  Eigen::MatrixXd design(r, k - 1);
  Eigen::MatrixXd rhs(r, m);
  Eigen::VectorXd weights(r);
  int t = 0;
  for (const auto& [mask, row] : rows) {
    const int size = __builtin_popcount(mask);
    const double w = shapley_kernel_weight(k, size) * row.multiplicity;
    weights(t) = w;
    const double x_last = (mask & (1u << (k - 1))) ? 1.0 : 0.0;
    for (int i = 0; i < k - 1; ++i) {
      const double x_i = (mask & (1u << i)) ? 1.0 : 0.0;
      design(t, i) = x_i - x_last;
    }
    for (int j = 0; j < m; ++j) {
      const double u = row.value[static_cast<std::size_t>(j)] - (*empty_value)[static_cast<std::size_t>(j)];
      rhs(t, j) = u - x_last * delta[static_cast<std::size_t>(j)];
    }
    ++t;
  }

  const Eigen::MatrixXd wd = weights.asDiagonal() * design;
  const Eigen::MatrixXd normal = design.transpose() * wd;                 // (k-1) x (k-1)
  const Eigen::MatrixXd target = design.transpose() * (weights.asDiagonal() * rhs);  // (k-1) x m

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal);
  const Eigen::VectorXd evals = eig.eigenvalues();
  const double lambda_max = evals.maxCoeff();
  const double lambda_min = evals.minCoeff();
  if (lambda_max <= 0.0 || lambda_min <= lambda_max * 1e-14) {
    // Singular design: point at duplicate player columns when we can.
    std::string detail;
    for (int i = 0; i < k && detail.empty(); ++i) {
      for (int l = i + 1; l < k; ++l) {
        bool same = true;
        for (const auto& [mask, row] : rows) {
          (void)row;
          if (((mask >> i) & 1u) != ((mask >> l) & 1u)) {
            same = false;
            break;
          }
        }
        if (same) {
          detail = "players " + std::to_string(i) + " and " + std::to_string(l) +
                   " are indistinguishable in the sampled coalitions";
          break;
        }
      }
    }
    if (detail.empty()) detail = "coalition design matrix is singular";
    throw RagError(ErrorCode::rank_deficient, detail);
  }

  Eigen::MatrixXd solution;
  if (lambda_max / lambda_min > 1e12) {
    // Pseudo-inverse fallback for ill conditioned normal equations.
    Eigen::MatrixXd inv_diag = Eigen::MatrixXd::Zero(k - 1, k - 1);
    for (int i = 0; i < k - 1; ++i) {
      if (evals(i) > lambda_max * 1e-14) inv_diag(i, i) = 1.0 / evals(i);
    }
    solution = eig.eigenvectors() * inv_diag * eig.eigenvectors().transpose() * target;
  } else {
    solution = normal.ldlt().solve(target);
  }

  for (int j = 0; j < m; ++j) {
    double partial = 0.0;
    for (int i = 0; i < k - 1; ++i) {
      out.entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = solution(i, j);
      partial += solution(i, j);
    }
    out.entries[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(j)] =
        delta[static_cast<std::size_t>(j)] - partial;
  }
  return out;
}

AttributionMatrix mc_shap(const SetValueOracle& oracle, const SamplerConfig& config) {
  const int k = oracle.arity();
  config.validate(k);
  if (config.pairing == SamplerConfig::Pairing::paired &&
      config.strategy != SamplerConfig::Strategy::complementary)
    throw RagError(ErrorCode::invalid_config, "paired MC resampling requires complementary pool sampling");
  if (config.mc_size < 3)
    throw RagError(ErrorCode::invalid_config, "MC resample size N' must be >= 3 (anchors plus one row)");

  std::vector<Coalition> pool = sample_coalitions(config, k);
  evaluate_pool(oracle, pool);

  const int n_rest = static_cast<int>(pool.size()) - 2;
  const int quota = config.mc_size - 2;
  Rng rng(splitmix64(config.seed ^ kMcStreamSalt));

  AttributionMatrix mean;
  bool first = true;
  constexpr int kRetriesPerSample = 3;
  for (int sample = 0; sample < config.mc_samples; ++sample) {
    AttributionMatrix fit;
    bool ok = false;
    RagError last_error(ErrorCode::oracle_failure, "");
    for (int attempt = 0; attempt <= kRetriesPerSample && !ok; ++attempt) {
      std::vector<Coalition> subset;
      subset.reserve(static_cast<std::size_t>(config.mc_size));
      subset.push_back(pool[0]);
      subset.push_back(pool[1]);
      if (config.pairing == SamplerConfig::Pairing::paired) {
        const int n_pairs = n_rest / 2;
        const int full_pairs = quota / 2;
        const int leftover = quota % 2;
        const std::vector<int> chosen = rng.sample_without_replacement(n_pairs, full_pairs + leftover);
        for (int p = 0; p < full_pairs; ++p) {
          subset.push_back(pool[static_cast<std::size_t>(2 + 2 * chosen[static_cast<std::size_t>(p)])]);
          subset.push_back(pool[static_cast<std::size_t>(2 + 2 * chosen[static_cast<std::size_t>(p)] + 1)]);
        }
        if (leftover) {
          const int pair_idx = chosen[static_cast<std::size_t>(full_pairs)];
          subset.push_back(pool[static_cast<std::size_t>(2 + 2 * pair_idx + rng.bounded(2))]);
        }
      } else {
        for (int idx : rng.sample_without_replacement(n_rest, quota))
          subset.push_back(pool[static_cast<std::size_t>(2 + idx)]);
      }
      try {
        fit = kernel_shap(subset, k);
        ok = true;
      } catch (const RagError& e) {
        last_error = e;
      }
    }
    if (!ok)
      throw RagError(last_error.code(),
                     std::string("MC sample failed after retries: ") + last_error.what());

    if (first) {
      mean = fit;
      first = false;
    } else {
      for (int i = 0; i < mean.players; ++i)
        for (int j = 0; j < mean.outputs; ++j)
          mean.entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
              fit.entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  for (int i = 0; i < mean.players; ++i)
    for (int j = 0; j < mean.outputs; ++j)
      mean.entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] /= config.mc_samples;
  return mean;
}

}  // namespace ragaudit
