#include "meio/distributions.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "meio/error.hpp"

namespace meio {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidParameter: return "invalid-parameter";
    case ErrorKind::kMissingData: return "missing-data";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kConfiguration: return "configuration";
    case ErrorKind::kContract: return "contract-violation";
    case ErrorKind::kTraining: return "training";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

double standard_normal(Rng& rng) {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------

Pmf::Pmf() : Pmf(0, {1.0}) {}

Pmf::Pmf(std::int64_t offset, std::vector<double> weights) : offset_(offset) {
  require(offset >= 0, ErrorKind::kInvalidParameter, "pmf support must be non-negative");
  require(!weights.empty(), ErrorKind::kInvalidParameter, "pmf needs at least one weight");
  double total = 0.0;
  for (double w : weights) {
    require(std::isfinite(w) && w >= 0.0, ErrorKind::kInvalidParameter,
            "pmf weights must be finite and non-negative");
    total += w;
  }
  require(total > 0.0, ErrorKind::kInvalidParameter, "pmf weights sum to zero");

  // Strip exact zeros at both ends so min/max reflect the true support.
  auto first = std::find_if(weights.begin(), weights.end(), [](double w) { return w > 0.0; });
  auto last = std::find_if(weights.rbegin(), weights.rend(), [](double w) { return w > 0.0; }).base();
  offset_ += first - weights.begin();
  probs_.assign(first, last);
  for (double& p : probs_) p /= total;

  cdf_.resize(probs_.size());
  std::partial_sum(probs_.begin(), probs_.end(), cdf_.begin());
  cdf_.back() = 1.0;

  double m = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) m += static_cast<double>(offset_ + i) * probs_[i];
  double v = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    const double d = static_cast<double>(offset_ + i) - m;
    v += d * d * probs_[i];
  }
  mean_ = m;
  variance_ = v;
}

double Pmf::operator()(std::int64_t k) const {
  if (k < offset_ || k > max_value()) return 0.0;
  return probs_[static_cast<std::size_t>(k - offset_)];
}

double Pmf::cdf(std::int64_t k) const {
  if (k < offset_) return 0.0;
  if (k >= max_value()) return 1.0;
  return cdf_[static_cast<std::size_t>(k - offset_)];
}

// ---------------------------------------------------------------------------

Pmf make_point_mass(std::int64_t value) {
  require(value >= 0, ErrorKind::kInvalidParameter, "point mass must be non-negative");
  return Pmf(value, {1.0});
}

namespace {

std::vector<double> poisson_weights(double mean, double tail_eps) {
  std::vector<double> w;
  double cumulative = 0.0;
  const double log_mean = std::log(mean);
  for (std::int64_t k = 0;; ++k) {
    const double p = std::exp(-mean + static_cast<double>(k) * log_mean -
                              std::lgamma(static_cast<double>(k) + 1.0));
    w.push_back(p);
    cumulative += p;
    if (static_cast<double>(k) >= mean && 1.0 - cumulative < tail_eps) break;
  }
  return w;
}

void check_tail_eps(double tail_eps) {
  require(tail_eps > 0.0 && tail_eps < 1e-3, ErrorKind::kInvalidParameter,
          "tail_eps must lie in (0, 1e-3)");
}

std::vector<double> prune_trailing(std::vector<double> w) {
  for (double& x : w) x = std::max(x, 0.0);  // FFT round-off can go slightly negative
  double tail = 0.0;
  while (w.size() > 1 && tail + w.back() < kPruneMass) {
    tail += w.back();
    w.pop_back();
  }
  return w;
}

}  // namespace

Pmf make_poisson(double mean, double tail_eps) {
  require(mean > 0.0 && std::isfinite(mean), ErrorKind::kInvalidParameter,
          "poisson mean must be positive");
  check_tail_eps(tail_eps);
  return Pmf(0, poisson_weights(mean, tail_eps));
}

Pmf make_uniform_poisson_mixture(int lo, int hi, double tail_eps) {
  require(lo > 0, ErrorKind::kInvalidParameter, "mixture lower mean must be positive");
  require(lo <= hi, ErrorKind::kInvalidParameter, "mixture requires lo <= hi");
  check_tail_eps(tail_eps);
  std::vector<double> total;
  for (int m = lo; m <= hi; ++m) {
    auto w = poisson_weights(m, tail_eps);
    if (w.size() > total.size()) total.resize(w.size(), 0.0);
    for (std::size_t k = 0; k < w.size(); ++k) total[k] += w[k];
  }
  return Pmf(0, std::move(total));
}

Pmf make_uniform_int(std::int64_t lo, std::int64_t hi) {
  require(lo >= 0 && lo <= hi, ErrorKind::kInvalidParameter, "uniform needs 0 <= lo <= hi");
  return Pmf(lo, std::vector<double>(static_cast<std::size_t>(hi - lo + 1), 1.0));
}

Pmf make_empirical(std::span<const std::int64_t> series, double target_mean) {
  require(!series.empty(), ErrorKind::kInvalidParameter, "empirical series is empty");
  require(target_mean > 0.0, ErrorKind::kInvalidParameter, "target mean must be positive");
  double sum = 0.0;
  for (auto x : series) {
    require(x >= 0, ErrorKind::kInvalidParameter, "empirical samples must be non-negative");
    sum += static_cast<double>(x);
  }
  require(sum > 0.0, ErrorKind::kInvalidParameter, "empirical series has zero mean");
  const double scale = target_mean / (sum / static_cast<double>(series.size()));

  std::vector<std::int64_t> scaled(series.size());
  std::transform(series.begin(), series.end(), scaled.begin(), [scale](std::int64_t x) {
    return static_cast<std::int64_t>(std::llround(static_cast<double>(x) * scale));
  });
  const auto [lo, hi] = std::minmax_element(scaled.begin(), scaled.end());
  std::vector<double> counts(static_cast<std::size_t>(*hi - *lo + 1), 0.0);
  for (auto x : scaled) counts[static_cast<std::size_t>(x - *lo)] += 1.0;
  return Pmf(*lo, std::move(counts));
}

Pmf mixture(std::span<const double> weights, std::span<const Pmf> components) {
  require(weights.size() == components.size() && !weights.empty(),
          ErrorKind::kInvalidParameter, "mixture weights and components must align");
  std::int64_t lo = components[0].min_value();
  std::int64_t hi = components[0].max_value();
  for (const auto& c : components) {
    lo = std::min(lo, c.min_value());
    hi = std::max(hi, c.max_value());
  }
  std::vector<double> out(static_cast<std::size_t>(hi - lo + 1), 0.0);
  for (std::size_t i = 0; i < components.size(); ++i) {
    require(weights[i] >= 0.0, ErrorKind::kInvalidParameter, "mixture weight is negative");
    const auto& c = components[i];
    const auto base = static_cast<std::size_t>(c.min_value() - lo);
    for (std::size_t k = 0; k < c.size(); ++k) out[base + k] += weights[i] * c.probs()[k];
  }
  return Pmf(lo, std::move(out));
}

// ---------------------------------------------------------------------------

namespace {

using Complex = std::complex<double>;

void fft_in_place(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::size_t half = len / 2;
    // Twiddles computed directly per index rather than by repeated
    // multiplication, which drifts for long transforms.
    std::vector<Complex> twiddle(half);
    for (std::size_t k = 0; k < half; ++k)
      twiddle[k] = std::polar(1.0, angle * static_cast<double>(k));
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex u = a[i + k];
        const Complex v = a[i + k + half] * twiddle[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

}  // namespace

namespace detail {

std::vector<double> convolve_direct(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  }
  return out;
}

std::vector<double> convolve_fft(std::span<const double> a, std::span<const double> b) {
  const std::size_t out_len = a.size() + b.size() - 1;
  std::size_t n = 1;
  while (n < out_len) n <<= 1;
  // Pack both real inputs into one complex transform: z = a + i b.
  std::vector<Complex> z(n);
  for (std::size_t i = 0; i < a.size(); ++i) z[i].real(a[i]);
  for (std::size_t i = 0; i < b.size(); ++i) z[i].imag(b[i]);
  fft_in_place(z, false);
  std::vector<Complex> prod(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Complex zk = z[k];
    const Complex zc = std::conj(z[(n - k) & (n - 1)]);
    const Complex fa = 0.5 * (zk + zc);
    const Complex fb = Complex(0.0, -0.5) * (zk - zc);
    prod[k] = fa * fb;
  }
  fft_in_place(prod, true);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = prod[i].real();
  return out;
}

}  // namespace detail

Pmf convolve(const Pmf& a, const Pmf& b) {
  const std::size_t combined = a.size() + b.size() - 1;
  auto raw = combined < kFftThreshold ? detail::convolve_direct(a.probs(), b.probs())
                                      : detail::convolve_fft(a.probs(), b.probs());
  return Pmf(a.offset() + b.offset(), prune_trailing(std::move(raw)));
}

Pmf convolve_power(const Pmf& a, std::int64_t n) {
  require(n >= 0, ErrorKind::kInvalidParameter, "convolution power must be >= 0");
  Pmf result = make_point_mass(0);
  Pmf base = a;
  // Binary powering keeps the number of convolutions logarithmic.
  while (n > 0) {
    if (n & 1) result = convolve(result, base);
    n >>= 1;
    if (n > 0) base = convolve(base, base);
  }
  return result;
}

Pmf compound_lead_time_demand(const Pmf& demand, const Pmf& lead) {
  std::vector<double> weights;
  std::vector<Pmf> parts;
  Pmf power = convolve_power(demand, lead.min_value());
  for (std::int64_t l = lead.min_value(); l <= lead.max_value(); ++l) {
    if (l > lead.min_value()) power = convolve(power, demand);
    const double w = lead(l);
    if (w == 0.0) continue;
    weights.push_back(w);
    parts.push_back(power);
  }
  return mixture(weights, parts);
}

Pmf thin_random_routing(const Pmf& order, int supplier_count) {
  require(supplier_count >= 1, ErrorKind::kInvalidParameter, "supplier_count must be >= 1");
  if (supplier_count == 1) return order;
  const double keep = 1.0 / supplier_count;
  const std::array<double, 2> weights{1.0 - keep, keep};
  const std::array<Pmf, 2> parts{make_point_mass(0), order};
  return mixture(weights, parts);
}

std::int64_t quantile(const Pmf& a, double r) {
  require(r > 0.0 && r < 1.0, ErrorKind::kInvalidParameter, "quantile level must be in (0, 1)");
  for (std::int64_t s = a.min_value(); s < a.max_value(); ++s) {
    if (a.cdf(s) >= r) return s;
  }
  return a.max_value();
}

double expected_shortfall(const Pmf& a, std::int64_t s) {
  double total = 0.0;
  for (std::int64_t k = std::max(s + 1, a.min_value()); k <= a.max_value(); ++k)
    total += static_cast<double>(k - s) * a(k);
  return total;
}

std::int64_t sample(const Pmf& a, Rng& rng) {
  if (a.size() == 1) return a.offset();
  const double u = uniform01(rng);
  // First index whose cumulative probability exceeds u.
  std::int64_t lo = 0;
  std::int64_t hi = static_cast<std::int64_t>(a.size()) - 1;
  while (lo < hi) {
    const std::int64_t mid = (lo + hi) / 2;
    if (a.cdf(a.offset() + mid) > u) hi = mid;
    else lo = mid + 1;
  }
  return a.offset() + lo;
}

Pmf floor_support(const Pmf& a, std::int64_t floor) {
  if (a.min_value() >= floor) return a;
  if (a.max_value() <= floor) return make_point_mass(floor);
  std::vector<double> w(static_cast<std::size_t>(a.max_value() - floor + 1), 0.0);
  for (std::int64_t k = a.min_value(); k <= a.max_value(); ++k)
    w[static_cast<std::size_t>(std::max(k, floor) - floor)] += a(k);
  return Pmf(floor, std::move(w));
}

// ---------------------------------------------------------------------------

DemandSpec DemandSpec::poisson_uniform(int lo, int hi) {
  DemandSpec d;
  d.kind = Kind::kPoissonUniform;
  d.lo = lo;
  d.hi = hi;
  d.nominal_mean = 0.5 * (lo + hi);
  d.resolved = make_uniform_poisson_mixture(lo, hi);
  return d;
}

DemandSpec DemandSpec::point_mass(std::int64_t value) {
  DemandSpec d;
  d.kind = Kind::kPoint;
  d.point = value;
  d.nominal_mean = static_cast<double>(value);
  d.resolved = make_point_mass(value);
  return d;
}

DemandSpec DemandSpec::empirical(std::string column, std::span<const std::int64_t> series,
                                 double target_mean) {
  DemandSpec d;
  d.kind = Kind::kEmpirical;
  d.source = std::move(column);
  d.nominal_mean = target_mean;
  d.resolved = make_empirical(series, target_mean);
  return d;
}

std::string DemandSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kPoissonUniform: os << "Pois(Unif{" << lo << "," << hi << "})"; break;
    case Kind::kEmpirical: os << "empirical(" << source << ")"; break;
    case Kind::kPoint: os << "point(" << point << ")"; break;
  }
  return os.str();
}

LeadTimeSpec LeadTimeSpec::fixed(std::int64_t periods) {
  LeadTimeSpec l;
  l.kind = Kind::kStatic;
  l.lo = l.hi = periods;
  l.resolved = make_point_mass(periods);
  return l;
}

LeadTimeSpec LeadTimeSpec::uniform(std::int64_t lo, std::int64_t hi) {
  LeadTimeSpec l;
  l.kind = Kind::kUniform;
  l.lo = lo;
  l.hi = hi;
  l.resolved = make_uniform_int(lo, hi);
  return l;
}

LeadTimeSpec LeadTimeSpec::empirical(std::string column, std::span<const std::int64_t> series,
                                     double target_mean) {
  LeadTimeSpec l;
  l.kind = Kind::kEmpirical;
  l.source = std::move(column);
  l.resolved = make_empirical(series, target_mean);
  l.lo = l.resolved.min_value();
  l.hi = l.resolved.max_value();
  return l;
}

std::string LeadTimeSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kStatic: os << lo; break;
    case Kind::kUniform: os << "Unif{" << lo << "," << hi << "}"; break;
    case Kind::kEmpirical: os << "empirical(" << source << ")"; break;
  }
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

SeriesTable read_series_csv(std::istream& in) {
  SeriesTable table;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kMissingData,
          "series csv is empty");
  table.names = split_csv_line(line);
  require(!table.names.empty(), ErrorKind::kMissingData, "series csv has no columns");
  for (const auto& n : table.names)
    require(!n.empty(), ErrorKind::kValidation, "series csv has an empty column name");
  table.columns.resize(table.names.size());

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    require(cells.size() == table.names.size(), ErrorKind::kValidation,
            "series csv row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                " cells, expected " + std::to_string(table.names.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto& cell = cells[c];
      require(!cell.empty(), ErrorKind::kValidation,
              "series csv row " + std::to_string(row) + " column '" + table.names[c] +
                  "' is missing");
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used == cell.size() && v >= 0, ErrorKind::kValidation,
              "series csv row " + std::to_string(row) + " column '" + table.names[c] +
                  "' is not a non-negative integer: '" + cell + "'");
      table.columns[c].push_back(v);
    }
  }
  return table;
}

SeriesTable read_series_csv_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open series csv: " + path);
  return read_series_csv(in);
}

}  // namespace meio
