#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ragaudit/common.hpp"

namespace ragaudit {

/// Scorer over a maskable input: `positions()` maskable slots, and a score
/// for any masking pattern. Masking must be idempotent per position and
/// scoring the fully masked input must be valid.
class MaskableScorer {
 public:
  virtual ~MaskableScorer() = default;
  virtual int positions() const = 0;
  virtual double score(const std::vector<bool>& masked) const = 0;
};

struct PerturbationCurve {
  enum class Direction { morf, lerf };
  Direction direction = Direction::morf;
  Vec values;              // length positions()+1; values[0] == reference
  double reference = 0.0;  // unmasked score
};

/// Masks one position at a time in saliency order (descending for MoRF,
/// ascending for LeRF; ties by position index) and records the score after
/// each level. One scorer call per level.
PerturbationCurve perturbation_curve(const MaskableScorer& scorer, const Vec& saliency,
                                     PerturbationCurve::Direction direction);

/// Area-inside-the-perturbation-curves score. Each curve's deviation from
/// the reference is integrated with the trapezoidal rule over unit steps,
/// taken in absolute value and normalized by n * |reference - fully masked
/// value|, so results land in [-1, 1]. Positive means the saliency ordering
/// degrades the score faster than its reverse, i.e. a faithful explanation.
double aipc(const PerturbationCurve& morf, const PerturbationCurve& lerf);

/// Percentile bootstrap interval for the mean: B seeded resamples with
/// replacement.
std::pair<double, double> bootstrap_ci(const Vec& values, int resamples, double level,
                                       std::uint64_t seed);

enum class Alternative { greater, less };

/// One-sided paired Wilcoxon signed-rank p-value via the normal
/// approximation with tie and continuity corrections. Zero deltas are
/// dropped; at least six nonzero deltas are required.
double wilcoxon_signed_rank(const Vec& deltas, Alternative alternative);

}  // namespace ragaudit
