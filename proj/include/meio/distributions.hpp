#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "meio/rng.hpp"

namespace meio {

/// Probability mass function over consecutive non-negative integers
/// `offset, offset + 1, ...`. Immutable once built; moments and the CDF are
/// cached at construction so the value can be shared freely between threads.
class Pmf {
 public:
  /// Point mass at 0.
  Pmf();

  /// Normalizes `weights` to sum to one. Weights must be finite and
  /// non-negative with a positive total; `offset` must be >= 0.
  Pmf(std::int64_t offset, std::vector<double> weights);

  std::int64_t offset() const { return offset_; }
  std::int64_t min_value() const { return offset_; }
  std::int64_t max_value() const {
    return offset_ + static_cast<std::int64_t>(probs_.size()) - 1;
  }
  std::size_t size() const { return probs_.size(); }
  std::span<const double> probs() const { return probs_; }

  /// P(X = k); zero outside the support.
  double operator()(std::int64_t k) const;
  /// P(X <= k).
  double cdf(std::int64_t k) const;

  double mean() const { return mean_; }
  double variance() const { return variance_; }

 private:
  std::int64_t offset_ = 0;
  std::vector<double> probs_;
  std::vector<double> cdf_;
  double mean_ = 0.0;
  double variance_ = 0.0;
};

Pmf make_point_mass(std::int64_t value);

/// Poisson(mean) truncated at the smallest K whose upper tail mass is below
/// `tail_eps`, then renormalized.
Pmf make_poisson(double mean, double tail_eps = 1e-12);

/// Equal-weight mixture of Poisson(m) for integer m in [lo, hi].
Pmf make_uniform_poisson_mixture(int lo, int hi, double tail_eps = 1e-12);

/// Discrete uniform on {lo, ..., hi}.
Pmf make_uniform_int(std::int64_t lo, std::int64_t hi);

/// Scales every sample by target_mean / sample_mean, rounds to the nearest
/// integer and re-bins into relative frequencies.
Pmf make_empirical(std::span<const std::int64_t> series, double target_mean);

/// Weighted mixture of PMFs. Weights are normalized.
Pmf mixture(std::span<const double> weights, std::span<const Pmf> components);

/// Distribution of the independent sum. Uses an FFT once the combined support
/// reaches kFftThreshold points; trailing mass below kPruneMass is dropped and
/// the result renormalized.
Pmf convolve(const Pmf& a, const Pmf& b);

inline constexpr std::size_t kFftThreshold = 256;
inline constexpr double kPruneMass = 1e-12;

namespace detail {
// Raw linear convolution of weight vectors, exposed so tests can pin the two
// routes against each other.
std::vector<double> convolve_direct(std::span<const double> a, std::span<const double> b);
std::vector<double> convolve_fft(std::span<const double> a, std::span<const double> b);
}  // namespace detail

/// n-fold self convolution; n == 0 gives point(0).
Pmf convolve_power(const Pmf& a, std::int64_t n);

/// Demand accumulated over a random number of periods:
/// sum_l P(L = l) * demand^{*l}.
Pmf compound_lead_time_demand(const Pmf& demand, const Pmf& lead);

/// Per-period order stream one supplier sees from a customer that routes each
/// order to one of `supplier_count` suppliers uniformly at random.
Pmf thin_random_routing(const Pmf& order, int supplier_count);

/// Smallest s with CDF(s) >= r, r in (0, 1).
std::int64_t quantile(const Pmf& a, double r);

/// E[(X - s)^+].
double expected_shortfall(const Pmf& a, std::int64_t s);

/// Inverse-CDF draw.
std::int64_t sample(const Pmf& a, Rng& rng);

/// Moves any mass at values below `floor` onto `floor`.
Pmf floor_support(const Pmf& a, std::int64_t floor);

// --- specs resolved into PMFs ----------------------------------------------

struct DemandSpec {
  enum class Kind { kPoissonUniform, kEmpirical, kPoint };
  Kind kind = Kind::kPoint;
  int lo = 0;
  int hi = 0;
  std::int64_t point = 0;
  std::string source;  // column name for empirical specs
  double nominal_mean = 0.0;
  Pmf resolved;

  static DemandSpec poisson_uniform(int lo, int hi);
  static DemandSpec point_mass(std::int64_t value);
  static DemandSpec empirical(std::string column, std::span<const std::int64_t> series,
                              double target_mean);
  std::string describe() const;
};

struct LeadTimeSpec {
  enum class Kind { kStatic, kUniform, kEmpirical };
  Kind kind = Kind::kStatic;
  std::int64_t lo = 1;
  std::int64_t hi = 1;
  std::string source;
  Pmf resolved = make_point_mass(1);

  static LeadTimeSpec fixed(std::int64_t periods);
  static LeadTimeSpec uniform(std::int64_t lo, std::int64_t hi);
  static LeadTimeSpec empirical(std::string column, std::span<const std::int64_t> series,
                                double target_mean);
  std::string describe() const;
};

/// Named integer series, one per CSV column.
struct SeriesTable {
  std::vector<std::string> names;
  std::vector<std::vector<std::int64_t>> columns;

  std::size_t column_count() const { return names.size(); }
};

/// Reads a header row of identifiers followed by rows of non-negative
/// integers. Missing or malformed cells are rejected with the row/column.
SeriesTable read_series_csv(std::istream& in);
SeriesTable read_series_csv_file(const std::string& path);

}  // namespace meio
