#include "ragaudit/faithfulness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ragaudit {

PerturbationCurve perturbation_curve(const MaskableScorer& scorer, const Vec& saliency,
                                     PerturbationCurve::Direction direction) {
  const int n = scorer.positions();
  if (static_cast<int>(saliency.size()) != n)
    throw RagError(ErrorCode::shape_mismatch, "saliency length does not match maskable positions");

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (direction == PerturbationCurve::Direction::morf) {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return saliency[static_cast<std::size_t>(a)] > saliency[static_cast<std::size_t>(b)];
    });
  } else {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return saliency[static_cast<std::size_t>(a)] < saliency[static_cast<std::size_t>(b)];
    });
  }

  PerturbationCurve curve;
  curve.direction = direction;
  curve.values.reserve(static_cast<std::size_t>(n) + 1);
  std::vector<bool> masked(static_cast<std::size_t>(n), false);
  for (int level = 0; level <= n; ++level) {
    if (level > 0) masked[static_cast<std::size_t>(order[static_cast<std::size_t>(level - 1)])] = true;
    double value = 0.0;
    try {
      value = scorer.score(masked);
    } catch (const RagError&) {
      throw;
    } catch (const std::exception& e) {
      throw RagError(ErrorCode::oracle_failure,
                     "scorer failed at mask level " + std::to_string(level) + ": " + e.what());
    }
    curve.values.push_back(value);
  }
  curve.reference = curve.values[0];
  return curve;
}

namespace {

// Trapezoidal area of (reference - curve) over unit mask steps.
double deviation_area(const PerturbationCurve& curve) {
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < curve.values.size(); ++i) {
    const double a = curve.reference - curve.values[i];
    const double b = curve.reference - curve.values[i + 1];
    area += 0.5 * (a + b);
  }
  return area;
}

}  // namespace

double aipc(const PerturbationCurve& morf, const PerturbationCurve& lerf) {
  if (morf.values.size() != lerf.values.size() || morf.values.size() < 2)
    throw RagError(ErrorCode::shape_mismatch, "curves must share one input and have at least one level");
  if (morf.reference != lerf.reference)
    throw RagError(ErrorCode::invalid_config, "curves disagree on the reference score");

  const std::size_t n = morf.values.size() - 1;
  const double fully_masked = morf.values[n];
  const double span = std::fabs(morf.reference - fully_masked);
  if (span < 1e-12)
    throw RagError(ErrorCode::degenerate_denominator,
                   "reference-to-fully-masked gap below 1e-12; AIPC normalization undefined");
  const double norm = static_cast<double>(n) * span;
  return (std::fabs(deviation_area(morf)) - std::fabs(deviation_area(lerf))) / norm;
}

std::pair<double, double> bootstrap_ci(const Vec& values, int resamples, double level,
                                       std::uint64_t seed) {
  if (values.empty()) throw RagError(ErrorCode::empty_input, "bootstrap needs at least one value");
  if (resamples < 1) throw RagError(ErrorCode::invalid_config, "bootstrap needs B >= 1");
  if (!(level > 0.0 && level < 1.0))
    throw RagError(ErrorCode::invalid_config, "confidence level must lie in (0,1)");

  const int n = static_cast<int>(values.size());
  Rng rng(seed);
  Vec means(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += values[static_cast<std::size_t>(rng.bounded(n))];
    means[static_cast<std::size_t>(b)] = s / n;
  }
  std::sort(means.begin(), means.end());

  const double alpha = 1.0 - level;
  auto quantile = [&](double q) {
    // Linear interpolation between order statistics.
    const double pos = q * (resamples - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return means[lo] * (1.0 - frac) + means[hi] * frac;
  };
  return {quantile(alpha / 2.0), quantile(1.0 - alpha / 2.0)};
}

double wilcoxon_signed_rank(const Vec& deltas, Alternative alternative) {
  Vec nonzero;
  for (double d : deltas) {
    if (!std::isfinite(d)) throw RagError(ErrorCode::nonfinite_input, "deltas must be finite");
    if (d != 0.0) nonzero.push_back(d);
  }
  const int n = static_cast<int>(nonzero.size());
  if (n < 6)
    throw RagError(ErrorCode::insufficient_data,
                   "wilcoxon needs at least 6 nonzero deltas, got " + std::to_string(n));

  // Average ranks of |delta|, 1-based, with tie bookkeeping.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::fabs(nonzero[static_cast<std::size_t>(a)]) < std::fabs(nonzero[static_cast<std::size_t>(b)]);
  });
  Vec ranks(static_cast<std::size_t>(n), 0.0);
  double tie_correction = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && std::fabs(nonzero[static_cast<std::size_t>(order[static_cast<std::size_t>(j + 1)])]) ==
                            std::fabs(nonzero[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]))
      ++j;
    const double avg = (i + j) / 2.0 + 1.0;
    const int t = j - i + 1;
    if (t > 1) tie_correction += static_cast<double>(t) * t * t - t;
    for (int s = i; s <= j; ++s) ranks[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])] = avg;
    i = j + 1;
  }

  double w_plus = 0.0;
  for (int idx = 0; idx < n; ++idx)
    if (nonzero[static_cast<std::size_t>(idx)] > 0.0) w_plus += ranks[static_cast<std::size_t>(idx)];

  const double mean = n * (n + 1) / 4.0;
  const double variance = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_correction / 48.0;
  if (variance <= 0.0)
    throw RagError(ErrorCode::insufficient_data, "wilcoxon variance collapsed under ties");
  const double sd = std::sqrt(variance);

  auto phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  if (alternative == Alternative::greater) {
    const double z = (w_plus - mean - 0.5) / sd;
    return 1.0 - phi(z);
  }
  const double z = (w_plus - mean + 0.5) / sd;
  return phi(z);
}

}  // namespace ragaudit
