#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "ragaudit/faithfulness.hpp"

using namespace ragaudit;

namespace {

// s(masked) = sum of coefficients of unmasked positions.
class LinearScorer final : public MaskableScorer {
 public:
  explicit LinearScorer(Vec coefficients) : c_(std::move(coefficients)) {}
  int positions() const override { return static_cast<int>(c_.size()); }
  double score(const std::vector<bool>& masked) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < c_.size(); ++i)
      if (!masked[i]) s += c_[i];
    return s;
  }

 private:
  Vec c_;
};

double aipc_for_order(const LinearScorer& scorer, const Vec& saliency) {
  const PerturbationCurve morf = perturbation_curve(scorer, saliency, PerturbationCurve::Direction::morf);
  const PerturbationCurve lerf = perturbation_curve(scorer, saliency, PerturbationCurve::Direction::lerf);
  return aipc(morf, lerf);
}

}  // namespace

TEST_SUITE_BEGIN("faithfulness");

TEST_CASE("perturbation curve masks in saliency order with index tie-break") {
  const LinearScorer scorer({2.0, 1.0});
  const PerturbationCurve morf = perturbation_curve(scorer, {5.0, 1.0}, PerturbationCurve::Direction::morf);
  // Masking order: position 0 (saliency 5), then position 1.
  CHECK(morf.values == Vec{3.0, 1.0, 0.0});
  const PerturbationCurve lerf = perturbation_curve(scorer, {5.0, 1.0}, PerturbationCurve::Direction::lerf);
  CHECK(lerf.values == Vec{3.0, 2.0, 0.0});
  CHECK(morf.reference == 3.0);
}

TEST_CASE("uniform saliency makes both directions identical") {
  const LinearScorer scorer({1.0, 2.0, 3.0, 4.0});
  const Vec uniform{0.5, 0.5, 0.5, 0.5};
  const PerturbationCurve morf = perturbation_curve(scorer, uniform, PerturbationCurve::Direction::morf);
  const PerturbationCurve lerf = perturbation_curve(scorer, uniform, PerturbationCurve::Direction::lerf);
  CHECK(morf.values == lerf.values);
  CHECK(aipc(morf, lerf) == 0.0);
}

TEST_CASE("curve values reproduce hand-computed partial sums") {
  const Vec c{0.5, 2.0, -1.0, 0.25};
  const LinearScorer scorer(c);
  const PerturbationCurve morf = perturbation_curve(scorer, c, PerturbationCurve::Direction::morf);
  // MoRF removal order by saliency=c: 1 (2.0), 0 (0.5), 3 (0.25), 2 (-1.0).
  const double total = 0.5 + 2.0 - 1.0 + 0.25;
  CHECK(morf.values[0] == doctest::Approx(total));
  CHECK(morf.values[1] == doctest::Approx(total - 2.0));
  CHECK(morf.values[2] == doctest::Approx(total - 2.0 - 0.5));
  CHECK(morf.values[3] == doctest::Approx(total - 2.0 - 0.5 - 0.25));
  CHECK(morf.values[4] == doctest::Approx(0.0));
}

TEST_CASE("scorer failures carry the mask level") {
  class Flaky final : public MaskableScorer {
   public:
    int positions() const override { return 3; }
    double score(const std::vector<bool>& masked) const override {
      int n = 0;
      for (bool m : masked) n += m ? 1 : 0;
      if (n == 2) throw std::runtime_error("backend hiccup");
      return 1.0;
    }
  };
  CHECK_THROWS_WITH_AS(perturbation_curve(Flaky{}, {1.0, 2.0, 3.0}, PerturbationCurve::Direction::morf),
                       doctest::Contains("level 2"), RagError);
}

TEST_CASE("aipc is anti-symmetric and scale invariant") {
  const Vec c{1.0, 3.0, 0.5, 2.0, 0.1};
  const LinearScorer scorer(c);
  const Vec saliency{0.9, 2.5, 0.4, 2.0, 0.2};
  const PerturbationCurve morf = perturbation_curve(scorer, saliency, PerturbationCurve::Direction::morf);
  const PerturbationCurve lerf = perturbation_curve(scorer, saliency, PerturbationCurve::Direction::lerf);
  const double forward = aipc(morf, lerf);
  CHECK(aipc(lerf, morf) == doctest::Approx(-forward).epsilon(1e-12));

  Vec scaled(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) scaled[i] = c[i] * 7.5;
  const LinearScorer scaled_scorer(scaled);
  const PerturbationCurve morf_s =
      perturbation_curve(scaled_scorer, saliency, PerturbationCurve::Direction::morf);
  const PerturbationCurve lerf_s =
      perturbation_curve(scaled_scorer, saliency, PerturbationCurve::Direction::lerf);
  CHECK(aipc(morf_s, lerf_s) == doctest::Approx(forward).epsilon(1e-12));
}

TEST_CASE("oracle saliency maximizes aipc over all orderings (n <= 6)") {
  const Vec c{0.3, 1.7, -0.4, 0.9, 0.05, 1.1};
  const LinearScorer scorer(c);
  const double oracle_value = aipc_for_order(scorer, c);
  CHECK(oracle_value > 0.0);

  // Exhaustive comparison: every ordering expressed as a saliency vector.
  std::vector<int> perm(c.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = -2.0;
  do {
    Vec saliency(c.size());
    for (std::size_t pos = 0; pos < perm.size(); ++pos)
      saliency[static_cast<std::size_t>(perm[pos])] = static_cast<double>(perm.size() - pos);
    best = std::max(best, aipc_for_order(scorer, saliency));
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(oracle_value == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("random saliency has near-zero mean aipc on the linear scorer") {
  Rng rng(99);
  Vec c(10);
  for (double& v : c) v = 0.2 + rng.uniform01();
  const LinearScorer scorer(c);
  double mean = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    Vec saliency(c.size());
    for (double& v : saliency) v = rng.normal();
    mean += aipc_for_order(scorer, saliency);
  }
  mean /= trials;
  CHECK(std::fabs(mean) < 0.05);
}

TEST_CASE("aipc rejects degenerate normalization spans") {
  PerturbationCurve morf, lerf;
  morf.values = {1.0, 1.0, 1.0};
  morf.reference = 1.0;
  lerf.values = {1.0, 0.5, 1.0};
  lerf.reference = 1.0;
  CHECK_THROWS_AS(aipc(morf, lerf), RagError);
}

TEST_CASE("bootstrap interval is reproducible, brackets the mean, and collapses on constants") {
  CHECK(bootstrap_ci({3.25, 3.25, 3.25}, 100, 0.95, 7) == std::pair<double, double>{3.25, 3.25});

  Rng rng(2718);
  Vec values(40);
  for (double& v : values) v = rng.normal() + 1.0;
  const auto a = bootstrap_ci(values, 1000, 0.95, 42);
  const auto b = bootstrap_ci(values, 1000, 0.95, 42);
  CHECK(a == b);
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  CHECK(a.first <= mean);
  CHECK(a.second >= mean);
  CHECK_THROWS_AS(bootstrap_ci({}, 10, 0.95, 1), RagError);
}

TEST_CASE("bootstrap width shrinks roughly by half when n quadruples") {
  Rng rng(1234);
  Vec small(50), large(200);
  for (double& v : small) v = rng.normal();
  for (double& v : large) v = rng.normal();
  const auto ci_small = bootstrap_ci(small, 1000, 0.95, 9);
  const auto ci_large = bootstrap_ci(large, 1000, 0.95, 9);
  const double ratio = (ci_large.second - ci_large.first) / (ci_small.second - ci_small.first);
  CHECK(ratio > 0.4);
  CHECK(ratio < 0.6);
}

TEST_CASE("wilcoxon handles extreme and null configurations") {
  Vec all_positive(20);
  for (std::size_t i = 0; i < all_positive.size(); ++i) all_positive[i] = 0.5 + 0.1 * static_cast<double>(i);
  CHECK(wilcoxon_signed_rank(all_positive, Alternative::greater) < 0.001);

  Vec symmetric;
  for (int i = 1; i <= 8; ++i) {
    symmetric.push_back(i * 0.25);
    symmetric.push_back(-i * 0.25);
  }
  CHECK(std::fabs(wilcoxon_signed_rank(symmetric, Alternative::greater) - 0.5) < 0.1);

  CHECK_THROWS_AS(wilcoxon_signed_rank({1.0, -1.0, 2.0, 0.0, 0.0, 0.0}, Alternative::greater), RagError);
}

TEST_CASE("wilcoxon approximation tracks exact enumeration on fixtures") {
  const Vec fixture{0.8, -0.3, 1.2, 0.5, -0.9, 0.7, 1.5, -0.2, 0.4, 1.1, -0.6, 0.9, 0.35, -1.4, 0.05};
  REQUIRE(fixture.size() == 15);
  for (Alternative alt : {Alternative::greater, Alternative::less}) {
    const double approx_p = wilcoxon_signed_rank(fixture, alt);
    const double exact_p = testoracles::exact_wilcoxon_p(fixture, alt == Alternative::greater);
    CHECK(std::fabs(approx_p - exact_p) < 0.01);
  }

  Rng rng(808);
  for (int trial = 0; trial < 25; ++trial) {
    Vec deltas(8 + static_cast<std::size_t>(rng.bounded(7)));
    for (double& v : deltas) v = rng.normal() + 0.3;
    for (Alternative alt : {Alternative::greater, Alternative::less}) {
      const double approx_p = wilcoxon_signed_rank(deltas, alt);
      const double exact_p = testoracles::exact_wilcoxon_p(deltas, alt == Alternative::greater);
      CHECK(std::fabs(approx_p - exact_p) < 0.01);
    }
  }
}

TEST_CASE("wilcoxon one-sided p-values are complementary up to tie mass") {
  const Vec fixture{0.8, -0.3, 1.2, 0.5, -0.9, 0.7, 1.5, -0.2, 0.4, 1.1};
  const double sum =
      wilcoxon_signed_rank(fixture, Alternative::greater) + wilcoxon_signed_rank(fixture, Alternative::less);
  CHECK(sum > 0.98);
  CHECK(sum < 1.1);
}

TEST_SUITE_END();
