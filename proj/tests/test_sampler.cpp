#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "stts/sampler.hpp"

using namespace stts;

namespace {

// support as an index set
std::vector<std::size_t> sorted_support(const DurationDistribution& p, double top_p) {
  auto s = nucleus_support(p, top_p);
  std::sort(s.begin(), s.end());
  return s;
}

JointLogits random_joint(Rng& rng, std::size_t d, std::size_t n, double scale) {
  std::vector<double> v(d * n);
  for (auto& x : v) x = (rng.uniform() * 2.0 - 1.0) * scale;
  return JointLogits(d, n, v);
}

std::vector<std::vector<double>> rows(const JointLogits& j) {
  std::vector<std::vector<double>> out;
  for (std::size_t d = 0; d < j.d_bins(); ++d) out.emplace_back(j.row(d).begin(), j.row(d).end());
  return out;
}

// Upper tail p-value of Pearson's statistic against expected probabilities
// (bins with zero expectation must have zero counts; checked by the caller).
double chi_square_p(const std::vector<std::size_t>& counts, const std::vector<long double>& probs, std::size_t draws) {
  double stat = 0.0;
  std::size_t bins = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (probs[i] <= 0) continue;
    const double e = static_cast<double>(probs[i]) * static_cast<double>(draws);
    const double diff = static_cast<double>(counts[i]) - e;
    stat += diff * diff / e;
    ++bins;
  }
  if (bins < 2) return 1.0;
  boost::math::chi_squared dist(static_cast<double>(bins - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace

TEST_CASE("marginal: constant logits give a uniform distribution") {
  for (double c : {-3.0, 0.0, 7.5}) {
    const auto p = marginal_duration(JointLogits(6, 5, std::vector<double>(30, c)), 0.9);
    for (double v : p.p) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-15));
  }
}

TEST_CASE("marginal: two-row worked value") {
  const auto p = marginal_duration(JointLogits(2, 1, {0.0, 0.9}), 0.9);
  CHECK(p[0] == doctest::Approx(0.268941421369995).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.731058578630005).epsilon(1e-12));
}

TEST_CASE("marginal: matches the unstabilized oracle on 6x64") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto j = random_joint(rng, 6, 64, 8.0);
    const double t = 0.3 + rng.uniform() * 1.5;
    const auto got = marginal_duration(j, t);
    const auto want = oracle::marginal(rows(j), t);
    for (std::size_t d = 0; d < 6; ++d) CHECK(oracle::relative_error(got[d], want[d]) < 1e-9);
  }
}

TEST_CASE("marginal: sums to one and is shift invariant") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    auto j = random_joint(rng, 6, 16, 20.0);
    const auto a = marginal_duration(j, 0.9);
    CHECK(std::accumulate(a.p.begin(), a.p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> shifted(j.values().begin(), j.values().end());
    for (auto& v : shifted) v += 123.25;
    const auto b = marginal_duration(JointLogits(6, 16, shifted), 0.9);
    for (std::size_t d = 0; d < 6; ++d) CHECK(std::abs(a[d] - b[d]) < 1e-12);
  }
}

TEST_CASE("marginal: non-finite logit names the cell") {
  std::vector<double> v(12, 0.0);
  v[7] = std::nan("");
  try {
    marginal_duration(JointLogits(6, 2, v), 0.9);
    FAIL("expected a throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("d=3, n=1") != std::string::npos);
  }
  CHECK_THROWS(marginal_duration(JointLogits(6, 2, std::vector<double>(12, 0.0)), 0.0));
  CHECK_THROWS_AS(JointLogits(6, 2, std::vector<double>(11, 0.0)), std::invalid_argument);
}

TEST_CASE("weights: identity, closed form and oracle") {
  const DurationDistribution h{{0.1, 0.2, 0.3, 0.2, 0.1, 0.1}};
  for (double w : matching_weights(h, h, 5.0).w) CHECK(w == 1.0);

  DurationDistribution t = h;
  DurationDistribution a{{0.01, 0.2, 0.3, 0.2, 0.1, 0.1}};
  const auto w = matching_weights(t, a, 5.0);
  CHECK(w.w[0] == doctest::Approx(std::exp(5.0)).epsilon(1e-12));
  CHECK(w.w[0] == doctest::Approx(148.4132).epsilon(1e-6));

  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto tp = oracle::random_histogram(rng);
    const auto ap = oracle::random_histogram(rng);
    const double beta = rng.uniform() * 10.0;
    const auto got = matching_weights(DurationDistribution{tp}, DurationDistribution{ap}, beta);
    const auto want = oracle::weights(tp, ap, beta);
    for (std::size_t i = 0; i < 6; ++i) CHECK(oracle::relative_error(got.w[i], want[i]) < 1e-9);
    const auto back = matching_weights(DurationDistribution{ap}, DurationDistribution{tp}, beta);
    for (std::size_t i = 0; i < 6; ++i) CHECK(got.w[i] * back.w[i] == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("weights: zero bin is rejected") {
  const DurationDistribution good{{0.2, 0.2, 0.2, 0.2, 0.1, 0.1}};
  const DurationDistribution bad{{0.0, 0.2, 0.2, 0.2, 0.2, 0.2}};
  CHECK_THROWS_AS(matching_weights(bad, good, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(matching_weights(good, bad, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(matching_weights(good, good, -1.0), std::invalid_argument);
}

TEST_CASE("apply_matching: identity, worked value, oracle") {
  const DurationDistribution cur{{0.1, 0.2, 0.3, 0.2, 0.15, 0.05}};
  const auto same = apply_matching(cur, WeightVector{std::vector<double>(6, 1.0)});
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(same[i] - cur[i]) <= 1e-12);

  std::vector<double> w(6, 1.0);
  w[0] = std::exp(5.0);
  const auto boosted = apply_matching(DurationDistribution::uniform(), WeightVector{w});
  CHECK(boosted[0] == doctest::Approx(std::exp(5.0) / (std::exp(5.0) + 5.0)).epsilon(1e-12));
  CHECK(boosted[0] == doctest::Approx(0.96742).epsilon(1e-5));

  Rng rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = oracle::random_histogram(rng);
    std::vector<double> ww(6);
    for (auto& x : ww) x = std::exp((rng.uniform() - 0.5) * 20.0);
    const auto got = apply_matching(DurationDistribution{c}, WeightVector{ww});
    const auto want = oracle::matching(std::vector<long double>(c.begin(), c.end()),
                                       std::vector<long double>(ww.begin(), ww.end()));
    for (std::size_t i = 0; i < 6; ++i) CHECK(oracle::relative_error(got[i], want[i]) < 1e-9);
  }
  CHECK_THROWS_AS(apply_matching(cur, WeightVector{std::vector<double>(5, 1.0)}), std::invalid_argument);
  CHECK_THROWS_AS(apply_matching(DurationDistribution{{1e-320, 0, 0, 0, 0, 0}}, WeightVector{std::vector<double>(6, 1e-10)}),
                  std::runtime_error);
}

TEST_CASE("nucleus: degenerate cases") {
  Rng rng(15);
  DurationDistribution one_hot{{0, 0, 0, 1, 0, 0}};
  for (int i = 0; i < 1000; ++i) CHECK(sample_duration(one_hot, 0.9, rng) == 3);
  DurationDistribution pair{{0.5, 0.5, 0, 0, 0, 0}};
  for (int i = 0; i < 1000; ++i) CHECK(sample_duration(pair, 0.9, rng) < 2);
  CHECK(nucleus_support(pair, 0.9) == std::vector<std::size_t>{0, 1});
  // ties go to the lower index
  CHECK(nucleus_support(DurationDistribution{{0.25, 0.25, 0.25, 0.25, 0, 0}}, 0.5) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS(nucleus_support(pair, 0.0));
  CHECK_THROWS(nucleus_support(DurationDistribution{std::vector<double>(6, 0.0)}, 0.9));
}

TEST_CASE("nucleus: support equals exhaustive enumeration") {
  Rng rng(16);
  for (int trial = 0; trial < 500; ++trial) {
    auto p = oracle::random_histogram(rng, 6, 0.0);
    if (trial % 3 == 0) p[static_cast<std::size_t>(trial % 6)] = 0.0;
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= s;
    const double top_p = 0.05 + rng.uniform() * 0.95;
    CHECK(sorted_support(DurationDistribution{p}, top_p) == oracle::nucleus(p, top_p));
  }
}

TEST_CASE("nucleus: top_p = 1 frequencies match the distribution") {
  Rng rng(17);
  const auto p = oracle::random_histogram(rng, 6, 0.05);
  std::vector<std::size_t> counts(6, 0);
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) ++counts[sample_duration(DurationDistribution{p}, 1.0, rng)];
  CHECK(chi_square_p(counts, std::vector<long double>(p.begin(), p.end()), n) > 0.001);
}

TEST_CASE("top-k: dominated row, greedy k=1, oracle frequencies") {
  Rng rng(18);
  std::vector<double> row(64);
  for (auto& v : row) v = rng.normal();
  row[17] = 100.0 + *std::max_element(row.begin(), row.end());
  std::size_t hits = 0;
  for (int i = 0; i < 10000; ++i) hits += sample_top_k(row, 5, 0.9, rng) == 17;
  CHECK(static_cast<double>(hits) / 10000.0 > 0.999);

  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r(16);
    for (auto& v : r) v = rng.normal();
    CHECK(sample_top_k(r, 1, 0.9, rng) == oracle::argmax(r));
  }

  std::vector<double> r(32);
  for (auto& v : r) v = rng.normal() * 0.7;
  const auto want = oracle::top_k_probs(r, 5, 0.9);
  std::vector<std::size_t> counts(32, 0);
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) ++counts[sample_top_k(r, 5, 0.9, rng)];
  for (std::size_t i = 0; i < 32; ++i) {
    if (want[i] == 0) CHECK(counts[i] == 0);
  }
  CHECK(chi_square_p(counts, want, n) > 0.001);
}

TEST_CASE("top-k: index order and ties") {
  const std::vector<double> v{1.0, 3.0, 3.0, 2.0, 3.0};
  CHECK(top_k_indices(v, 3) == std::vector<std::size_t>{1, 2, 4});
  CHECK(top_k_indices(v, 10).size() == 5);
  CHECK_THROWS(top_k_indices(std::vector<double>{}, 1));
  CHECK_THROWS(top_k_indices(v, 0));
}

TEST_CASE("sampling is reproducible for a fixed seed") {
  const DurationDistribution p{{0.3, 0.1, 0.2, 0.15, 0.15, 0.1}};
  std::vector<double> row{0.1, 0.5, -0.2, 0.9, 0.3, 0.0};
  Rng a(99), b(99);
  for (int i = 0; i < 200; ++i) {
    CHECK(sample_duration(p, 0.9, a) == sample_duration(p, 0.9, b));
    CHECK(sample_top_k(row, 5, 0.9, a) == sample_top_k(row, 5, 0.9, b));
  }
}

TEST_CASE("cfg_combine") {
  const std::vector<double> cond{0.3, -1.25, 2.0};
  const std::vector<double> uncond{1.0, 0.5, -0.7};
  CHECK(cfg_combine(cond, uncond, 1.0) == cond);
  CHECK(cfg_combine(cond, uncond, 0.0) == uncond);
  const auto x = cfg_combine(std::vector<double>{1, 0}, std::vector<double>{0, 0}, 1.5);
  CHECK(x[0] == 1.5);
  CHECK(x[1] == 0.0);
  for (double g = 1.0; g < 10.0; g += 0.5) CHECK(argmax(cfg_combine(std::vector<double>{1, 0}, std::vector<double>{0, 0}, g)) == 0);
  CHECK(argmax(cfg_combine(cond, uncond, 1.0)) == argmax(cond));
  CHECK_THROWS_AS(cfg_combine(cond, std::vector<double>{1.0}, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(cfg_combine(cond, uncond, INFINITY), std::invalid_argument);
}

TEST_CASE("argmax and greedy acoustic decode") {
  CHECK(argmax(std::vector<double>(7, 0.25)) == 0);
  Rng rng(20);
  std::vector<std::vector<double>> books;
  std::vector<int> want;
  for (int c = 0; c < 15; ++c) {
    std::vector<double> v(12);
    for (auto& x : v) x = std::floor(rng.normal() * 3.0);  // frequent ties
    want.push_back(static_cast<int>(oracle::argmax(v)));
    books.push_back(v);
  }
  CHECK(sample_acoustic(books) == want);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(20);
    for (auto& x : v) x = std::round(rng.normal() * 2.0);
    CHECK(argmax(v) == oracle::argmax(v));
  }
  CHECK_THROWS(argmax(std::vector<double>{}));
  CHECK_THROWS(sample_acoustic(std::vector<std::vector<double>>{{}}));
}

TEST_CASE("small instances: marginal, weights, matching, nucleus against enumeration") {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t d = 2 + static_cast<std::size_t>(trial % 2);  // 2 or 3 bins
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 4);
    const auto j = random_joint(rng, d, n, 4.0);
    const auto cur = marginal_duration(j, 0.9);
    const auto tp = oracle::random_histogram(rng, d);
    const auto ap = oracle::random_histogram(rng, d);
    const double beta = rng.uniform() * 6.0;
    const auto p = apply_matching(cur, matching_weights(DurationDistribution{tp}, DurationDistribution{ap}, beta));
    const auto want = oracle::matching(oracle::marginal(rows(j), 0.9), oracle::weights(tp, ap, beta));
    std::vector<double> wd(want.begin(), want.end());
    for (std::size_t i = 0; i < d; ++i) CHECK(oracle::relative_error(p[i], want[i]) < 1e-9);
    const double top_p = 0.1 + rng.uniform() * 0.9;
    CHECK(sorted_support(p, top_p) == oracle::nucleus(wd, top_p));
  }
}

TEST_CASE("config validation") {
  SamplerConfig s;
  CHECK_NOTHROW(s.validate());
  s.top_p = 1.5;
  CHECK_THROWS(s.validate());
  s = {};
  s.temperature = 0.0;
  CHECK_THROWS(s.validate());
  GuidanceConfig g;
  g.gamma_temp = NAN;
  CHECK_THROWS(g.validate());
  CHECK_THROWS(DurationDistribution{{0.5, 0.6}}.validate());
}
