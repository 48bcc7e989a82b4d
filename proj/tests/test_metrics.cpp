#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ragaudit/metrics.hpp"

using namespace ragaudit;

namespace {

Ranking ranking_of(std::vector<int> items) {
  Ranking r;
  r.items = std::move(items);
  return r;
}

Ranking random_permutation(int k, Rng& rng) {
  Ranking r = Ranking::identity(k);
  rng.shuffle(r.items);
  return r;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("rank_generator sorts descending with index tie-break") {
  CHECK(rank_generator({0.1, 0.5, 0.2}).items == std::vector<int>{1, 2, 0});
  CHECK(rank_generator({1.0, 1.0, 1.0, 1.0}).items == std::vector<int>{0, 1, 2, 3});
  CHECK(rank_generator({-0.2, 0.0, -0.5}).items == std::vector<int>{1, 0, 2});
  CHECK_THROWS_AS(rank_generator({1.0, std::nan("")}), RagError);
  CHECK_THROWS_AS(rank_generator({}), RagError);
}

TEST_CASE("rbo of identical rankings is 1 - p^k") {
  const Ranking r = Ranking::identity(10);
  CHECK(rbo(r, r, 0.9) == doctest::Approx(0.6513215599).epsilon(1e-9));
  for (int k : {3, 5, 10}) {
    const Ranking id = Ranking::identity(k);
    for (double p : {0.5, 0.9})
      CHECK(std::fabs(rbo(id, id, p) - (1.0 - std::pow(p, k))) < 1e-12);
  }
}

TEST_CASE("rbo hand example confirmed by brute-force evaluation") {
  const Ranking a = ranking_of({1, 2, 0});  // items relabelled to 0-based
  const Ranking b = ranking_of({1, 0, 2});
  // Depth overlaps 1, 1/2, 1 with p=0.5: 0.5*(1 + 0.25 + 0.25) = 0.75.
  CHECK(rbo(a, b, 0.5) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(rbo(a, b, 0.5) == doctest::Approx(testoracles::brute_force_rbo(a.items, b.items, 0.5)).epsilon(1e-12));
}

TEST_CASE("rbo at vanishing p keeps only the top-1 term") {
  const Ranking a = ranking_of({0, 1, 2, 3});
  const Ranking b = ranking_of({0, 3, 2, 1});
  const Ranking c = ranking_of({1, 0, 2, 3});
  CHECK(std::fabs(rbo(a, b, 1e-6) - 1.0) < 1e-5);
  CHECK(std::fabs(rbo(a, c, 1e-6) - 0.0) < 1e-5);
}

TEST_CASE("rbo matches the brute-force oracle on random permutation pairs") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + rng.bounded(10);
    const Ranking a = random_permutation(k, rng);
    const Ranking b = random_permutation(k, rng);
    const double p = 0.05 + 0.9 * rng.uniform01();
    CHECK(std::fabs(rbo(a, b, p) - testoracles::brute_force_rbo(a.items, b.items, p)) < 1e-12);
    CHECK(std::fabs(rbo(a, b, p) - rbo(b, a, p)) < 1e-15);  // symmetry
  }
}

TEST_CASE("rbo validates its inputs") {
  const Ranking a = ranking_of({0, 1, 2});
  CHECK_THROWS_AS(rbo(a, a, 0.0), RagError);
  CHECK_THROWS_AS(rbo(a, a, 1.0), RagError);
  CHECK_THROWS_AS(rbo(a, ranking_of({0, 1}), 0.5), RagError);
  CHECK_THROWS_AS(rbo(a, ranking_of({0, 1, 1}), 0.5), RagError);
}

TEST_CASE("warg closed forms and bounds") {
  const Ranking id5 = Ranking::identity(5);
  CHECK(warg(id5, id5, 0.5) == doctest::Approx(0.03125).epsilon(1e-12));  // p^k

  // Reversed rankings, k=3, p=0.5, against the independent oracle.
  const Ranking fwd = ranking_of({0, 1, 2});
  const Ranking rev = ranking_of({2, 1, 0});
  const double expected = 1.0 - testoracles::brute_force_rbo(fwd.items, rev.items, 0.5);
  CHECK(warg(fwd, rev, 0.5) == doctest::Approx(expected).epsilon(1e-12));

  Rng rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + rng.bounded(11);
    const Ranking a = random_permutation(k, rng);
    const Ranking b = random_permutation(k, rng);
    const double p = 0.05 + 0.9 * rng.uniform01();
    const double w = warg(a, b, p);
    CHECK(w >= 0.0);
    CHECK(w <= 1.0);
  }
}

TEST_CASE("warg identity floor decreases with depth") {
  double previous = 1.0;
  for (int k : {2, 4, 6, 8, 10}) {
    const Ranking id = Ranking::identity(k);
    const double w = warg(id, id, 0.8);
    CHECK(w == doctest::Approx(std::pow(0.8, k)).epsilon(1e-12));
    CHECK(w < previous);
    previous = w;
  }
}

TEST_CASE("warg sweep covers the default persistence grid") {
  const Ranking a = Ranking::identity(4);
  const Ranking b = ranking_of({1, 0, 3, 2});
  const auto sweep = warg_sweep(a, b);
  REQUIRE(sweep.size() == 5);
  for (double p : {0.5, 0.6, 0.7, 0.8, 0.9}) CHECK(sweep.count(p) == 1);
}

TEST_CASE("spearman extremes and tie handling against rank-then-pearson") {
  const Ranking id = Ranking::identity(4);
  CHECK(*spearman(id, {4.0, 3.0, 2.0, 1.0}) == doctest::Approx(1.0));
  CHECK(*spearman(id, {1.0, 2.0, 3.0, 4.0}) == doctest::Approx(-1.0));

  // Tied importances (3, 3, 1): oracle computes average ranks then Pearson.
  const Ranking id3 = Ranking::identity(3);
  const Vec imp{3.0, 3.0, 1.0};
  std::vector<double> neg{-3.0, -3.0, -1.0};
  const std::vector<double> gen_ranks = testoracles::average_ranks(neg);
  const std::vector<double> ret_ranks{0.0, 1.0, 2.0};
  const double expected = testoracles::pearson(ret_ranks, gen_ranks);
  CHECK(*spearman(id3, imp) == doctest::Approx(expected).epsilon(1e-12));

  CHECK(!spearman(id3, {2.0, 2.0, 2.0}).has_value());  // undefined sentinel
  CHECK_THROWS_AS(spearman(Ranking::identity(1), {1.0}), RagError);
}

TEST_CASE("spearman against the oracle on random inputs") {
  Rng rng(31337);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 3 + rng.bounded(8);
    const Ranking r_ret = random_permutation(k, rng);
    Vec imp(static_cast<std::size_t>(k));
    for (double& v : imp) v = std::round(rng.normal() * 2.0) / 2.0;  // force ties
    const auto rho = spearman(r_ret, imp);
    std::vector<double> neg(imp.size());
    for (std::size_t i = 0; i < imp.size(); ++i) neg[i] = -imp[i];
    const std::vector<double> gen_ranks = testoracles::average_ranks(neg);
    std::vector<double> ret_ranks(static_cast<std::size_t>(k));
    for (int pos = 0; pos < k; ++pos)
      ret_ranks[static_cast<std::size_t>(r_ret.items[static_cast<std::size_t>(pos)])] = pos;
    bool all_tied = true;
    for (double v : imp) all_tied = all_tied && v == imp[0];
    if (all_tied) {
      CHECK(!rho.has_value());
    } else {
      CHECK(*rho == doctest::Approx(testoracles::pearson(ret_ranks, gen_ranks)).epsilon(1e-10));
    }
  }
}

TEST_CASE("failure classification thresholds are strict") {
  const int k = 6;
  const Ranking id = Ranking::identity(k);

  // Generator places the retriever's top doc at position 3: wasted.
  CHECK(classify_failures(id, ranking_of({1, 2, 3, 0, 4, 5})).wasted_retrieval);
  // Position 2 is still within the threshold.
  CHECK(!classify_failures(id, ranking_of({1, 2, 0, 3, 4, 5})).wasted_retrieval);
  // Generator's top doc has retriever rank 1: no noise distraction.
  CHECK(!classify_failures(id, ranking_of({1, 0, 2, 3, 4, 5})).noise_distraction);
  // Retriever rank 3 at the generator top: noise distraction.
  CHECK(classify_failures(id, ranking_of({3, 0, 1, 2, 4, 5})).noise_distraction);
  // Identical rankings: clean.
  const FailureFlags clean = classify_failures(id, id);
  CHECK(!clean.wasted_retrieval);
  CHECK(!clean.noise_distraction);
  // Thresholds are configurable.
  CHECK(classify_failures(id, ranking_of({1, 2, 0, 3, 4, 5}), 1).wasted_retrieval);
}

TEST_CASE("failure rates are exact percentages") {
  std::vector<FailureFlags> records(4);
  records[0].wasted_retrieval = true;
  records[2].wasted_retrieval = true;
  const FailureRates rates = failure_rates(records);
  CHECK(rates.wasted_retrieval_pct == 50.0);
  CHECK(rates.noise_distraction_pct == 0.0);
  CHECK_THROWS_AS(failure_rates({}), RagError);
}

TEST_CASE("alignment is invariant under strictly increasing transforms") {
  Rng rng(555);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 4 + rng.bounded(6);
    const Ranking r_ret = random_permutation(k, rng);
    Vec imp(static_cast<std::size_t>(k));
    for (double& v : imp) v = rng.normal();
    Vec transformed(imp.size());
    for (std::size_t i = 0; i < imp.size(); ++i) transformed[i] = std::exp(0.5 * imp[i]) * 3.0 + 1.0;

    const AlignmentRecord a = align(r_ret, imp);
    const AlignmentRecord b = align(r_ret, transformed);
    CHECK(a.generator_ranking.items == b.generator_ranking.items);
    CHECK(a.flags.wasted_retrieval == b.flags.wasted_retrieval);
    CHECK(a.flags.noise_distraction == b.flags.noise_distraction);
    if (a.spearman_rho && b.spearman_rho)
      CHECK(*a.spearman_rho == doctest::Approx(*b.spearman_rho).epsilon(1e-10));
    for (const auto& [p, w] : a.warg_by_p) CHECK(w == doctest::Approx(b.warg_by_p.at(p)).epsilon(1e-12));
  }
}

TEST_SUITE_END();
