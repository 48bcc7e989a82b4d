#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "ragaudit/common.hpp"

namespace ragaudit {

/// A set function over players {0..arity-1} producing one value per output
/// dimension. Implementations must be deterministic per instance and safe
/// for concurrent evaluate() calls.
class SetValueOracle {
 public:
  virtual ~SetValueOracle() = default;
  virtual int arity() const = 0;
  /// `members` is a sorted, duplicate-free subset of {0..arity-1}.
  virtual Vec evaluate(const std::vector<int>& members) const = 0;
};

/// Adapts a plain callable over bitmasks; handy for synthetic games.
class FunctionOracle final : public SetValueOracle {
 public:
  FunctionOracle(int arity, std::function<Vec(std::uint32_t)> fn)
      : arity_(arity), fn_(std::move(fn)) {}
  int arity() const override { return arity_; }
  Vec evaluate(const std::vector<int>& members) const override;

 private:
  int arity_;
  std::function<Vec(std::uint32_t)> fn_;
};

/// Memoizes evaluations so each distinct coalition costs one oracle call.
/// Thread safe; the call counter counts misses only.
class CachingOracle final : public SetValueOracle {
 public:
  explicit CachingOracle(const SetValueOracle& inner) : inner_(inner) {}
  int arity() const override { return inner_.arity(); }
  Vec evaluate(const std::vector<int>& members) const override;
  std::size_t misses() const;

 private:
  const SetValueOracle& inner_;
  mutable std::mutex mu_;
  mutable std::map<std::uint32_t, Vec> cache_;
  mutable std::size_t misses_ = 0;
};

struct Coalition {
  std::vector<int> members;  // sorted, unique
  Vec value;                 // empty until evaluated
  bool evaluated() const { return !value.empty(); }
};

std::uint32_t coalition_mask(const std::vector<int>& members, int arity);
std::vector<int> coalition_members(std::uint32_t mask, int arity);

/// Players x outputs attribution scores plus the anchoring values used by
/// the additivity check (column sums against full - baseline).
struct AttributionMatrix {
  int players = 0;
  int outputs = 0;
  std::vector<Vec> entries;  // players rows, outputs columns
  Vec baseline_value;        // v(empty)
  Vec full_value;            // v(all)

  Vec column_sums() const;
  /// Per-player mean over output dimensions.
  Vec row_means() const;
};

struct SamplerConfig {
  enum class Strategy { uniform, complementary };
  enum class Pairing { paired, random };

  Strategy strategy = Strategy::complementary;
  int perturbations = 20;        // N, coalitions in the pool (anchors included)
  int mc_samples = 200;          // M
  int mc_size = 15;              // N', pool entries per MC resample
  Pairing pairing = Pairing::paired;
  /// The pool is a set of N distinct perturbations by default; disabling
  /// dedup allows repeats, which the regression then collapses with
  /// multiplicity weights.
  bool dedup = true;
  std::uint64_t seed = 0;

  void validate(int arity) const;  // throws invalid_config
};

/// Exact Shapley values by subset enumeration (2^k oracle calls).
/// `enumeration_cap` bounds k; beyond it the call refuses to run.
AttributionMatrix exact_shapley(const SetValueOracle& oracle, int enumeration_cap = 12);

/// Draws a perturbation pool of exactly N coalitions. The first two entries
/// are always the anchors (empty set, full set) that the regression
/// constraints require. Uniform strategy then draws independently with
/// coalition sizes weighted by the Shapley kernel mass per size;
/// complementary strategy appends (S, D \ S) pairs.
std::vector<Coalition> sample_coalitions(const SamplerConfig& config, int arity);

/// Weighted least squares fit of the linear surrogate under the Shapley
/// kernel, with intercept pinned to v(empty) and the efficiency constraint
/// sum_i beta_i = v(full) - v(empty) imposed exactly. Duplicated member
/// sets are collapsed with multiplicity as regression weight.
AttributionMatrix kernel_shap(const std::vector<Coalition>& coalitions, int arity);

/// Monte-Carlo stabilized Kernel SHAP: evaluate one pool of N perturbations,
/// refit kernel_shap on M resamples of size N' and average the results.
/// Paired mode resamples whole complementary pairs; random mode resamples
/// individual pool entries. Anchors ride along in every resample.
AttributionMatrix mc_shap(const SetValueOracle& oracle, const SamplerConfig& config);

/// Kernel weight (k-1) / (C(k,s) * s * (k-s)); infinite at s=0 and s=k,
/// which the regression never sees because anchors are constraint-pinned.
double shapley_kernel_weight(int arity, int subset_size);

/// Evaluates every distinct coalition in `pool` through `oracle`, filling
/// values in place. Reuses results across duplicates.
void evaluate_pool(const SetValueOracle& oracle, std::vector<Coalition>& pool);

}  // namespace ragaudit
