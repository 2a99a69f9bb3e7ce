#include <cmath>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "meio/distributions.hpp"
#include "meio/error.hpp"

namespace meio {
namespace {

// Independent oracles ------------------------------------------------------

double poisson_term(double lambda, int k) {
  double log_p = -lambda + k * std::log(lambda);
  for (int i = 2; i <= k; ++i) log_p -= std::log(static_cast<double>(i));
  return std::exp(log_p);
}

std::vector<double> naive_convolution(const Pmf& a, const Pmf& b, std::int64_t upto) {
  std::vector<double> out(static_cast<std::size_t>(upto + 1), 0.0);
  for (std::int64_t i = a.min_value(); i <= a.max_value(); ++i)
    for (std::int64_t j = b.min_value(); j <= b.max_value(); ++j)
      if (i + j <= upto) out[static_cast<std::size_t>(i + j)] += a(i) * b(j);
  return out;
}

Pmf random_pmf(Rng& rng, int max_len, int max_offset) {
  const int len = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_len)));
  const int offset = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_offset + 1)));
  std::vector<double> w(static_cast<std::size_t>(len));
  for (auto& x : w) x = 0.05 + uniform01(rng);
  return Pmf(offset, w);
}

void expect_pmf_near(const Pmf& a, const Pmf& b, double tol) {
  const auto lo = std::min(a.min_value(), b.min_value());
  const auto hi = std::max(a.max_value(), b.max_value());
  for (std::int64_t k = lo; k <= hi; ++k) EXPECT_NEAR(a(k), b(k), tol) << "at k=" << k;
}

// Pmf construction ---------------------------------------------------------

TEST(Pmf, NormalizesAndCachesMoments) {
  const Pmf p(2, {1.0, 2.0, 1.0});
  EXPECT_NEAR(p(2) + p(3) + p(4), 1.0, 1e-12);
  EXPECT_NEAR(p.mean(), 3.0, 1e-12);
  EXPECT_NEAR(p.variance(), 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(p(1), 0.0);
  EXPECT_DOUBLE_EQ(p.cdf(1), 0.0);
  EXPECT_DOUBLE_EQ(p.cdf(10), 1.0);
}

TEST(Pmf, RejectsInvalidWeights) {
  EXPECT_THROW(Pmf(0, {}), Error);
  EXPECT_THROW(Pmf(0, {0.0, 0.0}), Error);
  EXPECT_THROW(Pmf(0, {1.0, -0.1}), Error);
  EXPECT_THROW(Pmf(-1, {1.0}), Error);
  EXPECT_THROW(Pmf(0, {std::nan("")}), Error);
}

TEST(Pmf, StripsZeroEnds) {
  const Pmf p(0, {0.0, 0.0, 1.0, 0.0});
  EXPECT_EQ(p.min_value(), 2);
  EXPECT_EQ(p.max_value(), 2);
}

// Poisson ------------------------------------------------------------------

TEST(Poisson, TermMatchesSeries) {
  const auto p = make_poisson(10.0, 1e-12);
  for (int k : {0, 3, 10, 25}) EXPECT_NEAR(p(k), poisson_term(10.0, k), 1e-12);
  EXPECT_NEAR(p.mean(), 10.0, 1e-9);
  EXPECT_NEAR(p.variance(), 10.0, 1e-8);
}

TEST(Poisson, Additivity) {
  const auto sum = convolve(make_poisson(3.0), make_poisson(4.0));
  expect_pmf_near(sum, make_poisson(7.0), 1e-9);
}

TEST(Poisson, RejectsBadArguments) {
  EXPECT_THROW(make_poisson(0.0), Error);
  EXPECT_THROW(make_poisson(-1.0), Error);
  EXPECT_THROW(make_poisson(5.0, 0.0), Error);
  EXPECT_THROW(make_poisson(5.0, 1e-2), Error);
  const auto zero = make_point_mass(0);
  EXPECT_DOUBLE_EQ(zero(0), 1.0);
}

TEST(PoissonMixture, MomentsAndDegenerateCase) {
  const auto m = make_uniform_poisson_mixture(5, 15);
  EXPECT_NEAR(m.mean(), 10.0, 1e-9);
  // Oracle: E[m] + Var[m] with m uniform on {5..15}: Var = (11^2 - 1) / 12 = 10.
  EXPECT_NEAR(m.variance(), 20.0, 1e-7);
  expect_pmf_near(make_uniform_poisson_mixture(7, 7), make_poisson(7.0), 1e-15);
  EXPECT_THROW(make_uniform_poisson_mixture(6, 5), Error);
  EXPECT_THROW(make_uniform_poisson_mixture(0, 5), Error);
}

// Empirical ------------------------------------------------------------------

TEST(Empirical, ScalesAndRebins) {
  const std::vector<std::int64_t> flat{10, 10, 10};
  EXPECT_DOUBLE_EQ(make_empirical(flat, 10.0)(10), 1.0);
  const std::vector<std::int64_t> two{5, 15};
  const auto a = make_empirical(two, 10.0);
  EXPECT_DOUBLE_EQ(a(5), 0.5);
  EXPECT_DOUBLE_EQ(a(15), 0.5);
  const std::vector<std::int64_t> small{2, 4};
  const auto b = make_empirical(small, 6.0);
  EXPECT_DOUBLE_EQ(b(4), 0.5);
  EXPECT_DOUBLE_EQ(b(8), 0.5);
}

TEST(Empirical, MeanWithinTwoPercent) {
  Rng rng(7);
  std::vector<std::int64_t> series(400);
  for (auto& x : series) x = static_cast<std::int64_t>(uniform_index(rng, 37));
  const auto p = make_empirical(series, 10.0);
  EXPECT_NEAR(p.mean(), 10.0, 0.2);
}

TEST(Empirical, RejectsEmptyAndZero) {
  const std::vector<std::int64_t> zeros{0, 0};
  EXPECT_THROW(make_empirical(zeros, 10.0), Error);
  EXPECT_THROW(make_empirical({}, 10.0), Error);
}

// Convolution -----------------------------------------------------------------

TEST(Convolve, PointMassesAndIdentity) {
  const auto s = convolve(make_point_mass(3), make_point_mass(4));
  EXPECT_DOUBLE_EQ(s(7), 1.0);
  const Pmf a(1, {0.2, 0.5, 0.3});
  expect_pmf_near(convolve(a, make_point_mass(0)), a, 1e-15);
}

TEST(Convolve, MatchesNaiveSum) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_pmf(rng, 40, 5);
    const auto b = random_pmf(rng, 40, 5);
    const auto c = convolve(a, b);
    const auto oracle = naive_convolution(a, b, a.max_value() + b.max_value());
    for (std::size_t k = 0; k < oracle.size(); ++k)
      EXPECT_NEAR(c(static_cast<std::int64_t>(k)), oracle[k], 1e-12);
  }
}

TEST(Convolve, FftAndDirectRoutesAgree) {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const auto a = random_pmf(rng, 300, 0);
    const auto b = random_pmf(rng, 300, 0);
    const auto d = detail::convolve_direct(a.probs(), b.probs());
    const auto f = detail::convolve_fft(a.probs(), b.probs());
    ASSERT_EQ(d.size(), f.size());
    for (std::size_t k = 0; k < d.size(); ++k) EXPECT_NEAR(d[k], f[k], 1e-9);
  }
}

TEST(Convolve, CommutativeAssociativeAndMoments) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_pmf(rng, 150, 3);
    const auto b = random_pmf(rng, 150, 3);
    const auto c = random_pmf(rng, 150, 3);
    expect_pmf_near(convolve(a, b), convolve(b, a), 1e-9);
    expect_pmf_near(convolve(convolve(a, b), c), convolve(a, convolve(b, c)), 1e-9);
    const auto ab = convolve(a, b);
    EXPECT_NEAR(ab.mean(), a.mean() + b.mean(), 1e-9);
    EXPECT_NEAR(ab.variance(), a.variance() + b.variance(), 1e-8);
  }
}

TEST(ConvolvePower, MatchesRepeatedConvolution) {
  const Pmf a(0, {0.3, 0.4, 0.3});
  expect_pmf_near(convolve_power(a, 3), convolve(convolve(a, a), a), 1e-12);
  EXPECT_DOUBLE_EQ(convolve_power(a, 0)(0), 1.0);
}

// Compounding and thinning ---------------------------------------------------

TEST(Compound, DegenerateLeads) {
  const Pmf d(0, {0.5, 0.5});
  expect_pmf_near(compound_lead_time_demand(d, make_point_mass(2)), convolve(d, d), 1e-15);
  EXPECT_DOUBLE_EQ(compound_lead_time_demand(d, make_point_mass(0))(0), 1.0);
}

TEST(Compound, PoissonMixtureOracle) {
  const auto demand = make_poisson(10.0);
  const Pmf lead(1, {0.5, 0.5});
  const auto c = compound_lead_time_demand(demand, lead);
  for (int k = 0; k < 60; ++k)
    EXPECT_NEAR(c(k), 0.5 * poisson_term(10.0, k) + 0.5 * poisson_term(20.0, k), 1e-9);
}

TEST(Compound, WaldIdentity) {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const auto d = random_pmf(rng, 20, 4);
    const auto l = random_pmf(rng, 5, 2);
    EXPECT_NEAR(compound_lead_time_demand(d, l).mean(), d.mean() * l.mean(), 1e-9);
  }
}

TEST(Thinning, MixtureWithZero) {
  const Pmf a(2, {0.25, 0.75});
  expect_pmf_near(thin_random_routing(a, 1), a, 1e-15);
  const auto t = thin_random_routing(make_point_mass(10), 2);
  EXPECT_DOUBLE_EQ(t(0), 0.5);
  EXPECT_DOUBLE_EQ(t(10), 0.5);
  EXPECT_THROW(thin_random_routing(a, 0), Error);
  Rng rng(5);
  for (int n = 1; n <= 4; ++n) {
    const auto r = random_pmf(rng, 30, 6);
    EXPECT_NEAR(thin_random_routing(r, n).mean(), r.mean() / n, 1e-12);
  }
}

// Quantile and shortfall -----------------------------------------------------------

TEST(Quantile, Boundaries) {
  EXPECT_EQ(quantile(make_point_mass(7), 0.5), 7);
  const Pmf a(0, {0.4, 0.6});
  EXPECT_EQ(quantile(a, 0.4), 0);
  EXPECT_EQ(quantile(a, 0.41), 1);
  EXPECT_THROW(quantile(a, 0.0), Error);
  EXPECT_THROW(quantile(a, 1.0), Error);
}

TEST(Quantile, PoissonCumulativeSumOracle) {
  const auto p = make_poisson(10.0);
  double cum = 0.0;
  int s = 0;
  for (;; ++s) {
    cum += poisson_term(10.0, s);
    if (cum >= 0.95) break;
  }
  EXPECT_EQ(quantile(p, 0.95), s);
}

TEST(Quantile, MonotoneInR) {
  const auto p = make_uniform_poisson_mixture(5, 15);
  std::int64_t last = -1;
  for (double r = 0.01; r < 1.0; r += 0.01) {
    const auto q = quantile(p, r);
    EXPECT_GE(q, last);
    last = q;
  }
}

TEST(Shortfall, OraclesAndShape) {
  EXPECT_DOUBLE_EQ(expected_shortfall(make_point_mass(5), 3), 2.0);
  const Pmf a(1, {0.2, 0.3, 0.5});
  EXPECT_DOUBLE_EQ(expected_shortfall(a, 3), 0.0);
  EXPECT_DOUBLE_EQ(expected_shortfall(a, 50), 0.0);

  const auto p = make_poisson(10.0);
  double brute = 0.0;
  for (int k = 11; k < 80; ++k) brute += (k - 10) * poisson_term(10.0, k);
  EXPECT_NEAR(expected_shortfall(p, 10), brute, 1e-9);

  for (std::int64_t s = -3; s < 40; ++s) {
    const double es0 = expected_shortfall(p, s);
    const double es1 = expected_shortfall(p, s + 1);
    const double es2 = expected_shortfall(p, s + 2);
    EXPECT_LE(es1, es0 + 1e-12);
    EXPECT_GE(es0 - 2 * es1 + es2, -1e-12);  // convex
    EXPECT_NEAR(es0 - es1, 1.0 - p.cdf(s), 1e-9);  // telescoping
  }
}

// Sampling ---------------------------------------------------------------------------

TEST(Sample, DegenerateAndReproducible) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample(make_point_mass(4), rng), 4);
  const Pmf one(1, {1.0});
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample(one, rng), 1);
  const auto p = make_poisson(10.0);
  Rng a(99), b(99);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample(p, a), sample(p, b));
}

TEST(Sample, LawOfLargeNumbers) {
  const auto p = make_poisson(10.0);
  Rng rng(2024);
  double sum = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) sum += static_cast<double>(sample(p, rng));
  EXPECT_NEAR(sum / n, 10.0, 0.05);
}

// Specs and CSV ingestion ------------------------------------------------------------

TEST(Specs, ResolvedMeansAndDescriptions) {
  const auto d = DemandSpec::poisson_uniform(5, 15);
  EXPECT_NEAR(d.resolved.mean(), d.nominal_mean, 0.01 * d.nominal_mean);
  const auto l = LeadTimeSpec::fixed(3);
  EXPECT_DOUBLE_EQ(l.resolved(3), 1.0);
  const auto u = LeadTimeSpec::uniform(1, 5);
  EXPECT_NEAR(u.resolved.mean(), 3.0, 1e-12);
  EXPECT_GE(u.resolved.min_value(), 0);
  EXPECT_THROW(LeadTimeSpec::fixed(-1), Error);
}

TEST(SeriesCsv, ParsesAndRejectsMissingCells) {
  std::istringstream ok("a,b\n1,2\n3,4\n");
  const auto t = read_series_csv(ok);
  ASSERT_EQ(t.column_count(), 2u);
  EXPECT_EQ(t.names[1], "b");
  EXPECT_EQ(t.columns[1], (std::vector<std::int64_t>{2, 4}));

  std::istringstream missing("a,b\n1,\n");
  EXPECT_THROW(read_series_csv(missing), Error);
  std::istringstream negative("a\n-1\n");
  EXPECT_THROW(read_series_csv(negative), Error);
  std::istringstream text("a\nx\n");
  EXPECT_THROW(read_series_csv(text), Error);
}

}  // namespace
}  // namespace meio
