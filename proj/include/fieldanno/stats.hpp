#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fieldanno {

class UndefinedStatisticError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Modified Lentz evaluation of the incomplete-beta continued fraction.
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 20000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw std::runtime_error("incomplete beta continued fraction did not converge");
}

}  // namespace detail

// I_x(a, b) given both x and y = 1 - x, so callers that know the complement
// exactly (as the t distribution does) keep full precision near x = 1.
inline double regularized_incomplete_beta(double a, double b, double x, double y) {
  if (a <= 0 || b <= 0) throw std::domain_error("incomplete beta needs a, b > 0");
  if (x <= 0) return 0.0;
  if (y <= 0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log(y);
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(log_front) * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - std::exp(log_front) * detail::beta_continued_fraction(b, a, y) / b;
}

inline double regularized_incomplete_beta(double a, double b, double x) {
  return regularized_incomplete_beta(a, b, x, 1.0 - x);
}

// P(T > t) for Student's t with `df` degrees of freedom, via
// P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2).
inline double student_t_sf(double t, double df) {
  if (!(df > 0)) throw std::domain_error("degrees of freedom must be positive");
  if (t == 0) return 0.5;
  const double t2 = t * t;
  const double two_sided = regularized_incomplete_beta(df / 2, 0.5, df / (df + t2), t2 / (df + t2));
  return t > 0 ? 0.5 * two_sided : 1.0 - 0.5 * two_sided;
}

inline double student_t_two_sided_p(double t, double df) {
  if (!(df > 0)) throw std::domain_error("degrees of freedom must be positive");
  if (t == 0) return 1.0;
  const double t2 = t * t;
  return std::min(1.0, regularized_incomplete_beta(df / 2, 0.5, df / (df + t2), t2 / (df + t2)));
}

// ---------------------------------------------------------------------------
// Two-sample t-test

enum class TTestVariant { kPooled, kWelch };

inline const char* to_string(TTestVariant v) { return v == TTestVariant::kPooled ? "pooled" : "welch"; }

inline constexpr double kDefaultAlpha = 0.05;

struct TestResult {
  double t_statistic = 0;
  double degrees_of_freedom = 0;
  double p_value = 1;
  double alpha = kDefaultAlpha;
  bool significant = false;
};

struct SampleMoments {
  double n = 0;
  double mean = 0;
  double variance = 0;  // unbiased
};

inline SampleMoments moments(const std::vector<double>& xs) {
  SampleMoments m;
  m.n = static_cast<double>(xs.size());
  double sum = 0;
  for (double x : xs) sum += x;
  m.mean = sum / m.n;
  double ss = 0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.variance = xs.size() > 1 ? ss / (m.n - 1) : 0.0;
  return m;
}

// Two-sided independent two-sample test.
inline TestResult t_test(const std::vector<double>& a, const std::vector<double>& b,
                         TTestVariant variant = TTestVariant::kPooled, double alpha = kDefaultAlpha) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("each sample needs at least 2 values");
  for (const auto* xs : {&a, &b})
    for (double x : *xs)
      if (!std::isfinite(x)) throw std::invalid_argument("samples must be finite");
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("alpha must lie in (0, 1)");

  const auto ma = moments(a);
  const auto mb = moments(b);
  TestResult r;
  r.alpha = alpha;
  if (ma.variance == 0 && mb.variance == 0)
    throw UndefinedStatisticError("t statistic undefined: both samples have zero variance");
  double se2 = 0;
  if (variant == TTestVariant::kPooled) {
    r.degrees_of_freedom = ma.n + mb.n - 2;
    const double pooled = ((ma.n - 1) * ma.variance + (mb.n - 1) * mb.variance) / r.degrees_of_freedom;
    se2 = pooled * (1 / ma.n + 1 / mb.n);
  } else {
    const double va = ma.variance / ma.n;
    const double vb = mb.variance / mb.n;
    se2 = va + vb;
    r.degrees_of_freedom = se2 * se2 / (va * va / (ma.n - 1) + vb * vb / (mb.n - 1));
  }
  r.t_statistic = (ma.mean - mb.mean) / std::sqrt(se2);
  r.p_value = student_t_two_sided_p(r.t_statistic, r.degrees_of_freedom);
  r.significant = r.p_value < alpha;
  return r;
}

// Four decimals, or "<0.0001" below 1e-4.
inline std::string format_p_value(double p) {
  if (p < 1e-4) return "<0.0001";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", p);
  return buf;
}

inline std::string format_statistic(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", t);
  return buf;
}

// "T-statistic = 2.5588, P-value = 0.0113 (significant at alpha = 0.05)"
inline std::string describe(const TestResult& r) {
  char alpha[16];
  std::snprintf(alpha, sizeof alpha, "%g", r.alpha);
  const std::string p = format_p_value(r.p_value);
  return "T-statistic = " + format_statistic(r.t_statistic) + ", P-value " + (p[0] == '<' ? "" : "= ") + p +
         (r.significant ? " (significant" : " (not significant") + " at alpha = " + alpha + ")";
}

// ---------------------------------------------------------------------------
// Box plot summary and histogram

// Linear interpolation between order statistics ("inclusive" rule):
// position (n - 1) * q of the sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty data");
  const double pos = (sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo);
}

struct BoxSummary {
  double median = 0;
  double q1 = 0;
  double q3 = 0;
  double iqr = 0;
  double whisker_low = 0;
  double whisker_high = 0;
  std::vector<double> outliers;  // ascending
};

inline BoxSummary box_summary(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("box summary needs at least one value");
  std::sort(values.begin(), values.end());
  BoxSummary s;
  s.q1 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.q3 = quantile_sorted(values, 0.75);
  s.iqr = s.q3 - s.q1;
  const double low_fence = s.q1 - 1.5 * s.iqr;
  const double high_fence = s.q3 + 1.5 * s.iqr;
  s.whisker_low = std::numeric_limits<double>::infinity();
  s.whisker_high = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (v < low_fence || v > high_fence) {
      s.outliers.push_back(v);
    } else {
      s.whisker_low = std::min(s.whisker_low, v);
      s.whisker_high = std::max(s.whisker_high, v);
    }
  }
  return s;
}

struct HistogramBin {
  double low = 0;
  double high = 0;
  std::size_t count = 0;
};

// Equal-width bins over [min, max]; right-open except the last. When all
// values coincide a single bin [v, v] holds them all.
inline std::vector<HistogramBin> histogram(const std::vector<double>& values, std::size_t bin_count) {
  if (bin_count == 0) throw std::invalid_argument("bin_count must be at least 1");
  if (values.empty()) throw std::invalid_argument("histogram of empty data");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (lo == hi) return {{lo, hi, values.size()}};
  const double width = (hi - lo) / bin_count;
  std::vector<HistogramBin> bins(bin_count);
  for (std::size_t k = 0; k < bin_count; ++k) {
    bins[k].low = lo + k * width;
    bins[k].high = k + 1 == bin_count ? hi : lo + (k + 1) * width;
  }
  for (double v : values) {
    auto k = static_cast<std::size_t>(std::floor((v - lo) / width));
    k = std::min(k, bin_count - 1);
    // Keep placement consistent with the reported edges.
    while (k > 0 && v < bins[k].low) --k;
    while (k + 1 < bin_count && v >= bins[k + 1].low) ++k;
    ++bins[k].count;
  }
  return bins;
}

}  // namespace fieldanno
