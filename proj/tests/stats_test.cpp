#include "fieldanno/stats.hpp"

#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <functional>

#include "fieldanno/random.hpp"
#include "fieldanno/training_log.hpp"

namespace fa = fieldanno;

namespace {

// P(T > t) by adaptive Gauss-Kronrod integration of the Student-t density.
double oracle_t_sf(double t, double df) {
  const double log_norm = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * M_PI);
  auto pdf = [&](double x) { return std::exp(log_norm - (df + 1) / 2 * std::log1p(x * x / df)); };
  const double mass = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(pdf, 0.0, std::abs(t), 15, 1e-12);
  return t >= 0 ? 0.5 - mass : 0.5 + mass;
}

// Quartile by the inclusive rule in exact quarter arithmetic; values are
// small integers, so every intermediate is exact.
double oracle_quartile(std::vector<int> v, int k) {
  std::sort(v.begin(), v.end());
  const int num = (static_cast<int>(v.size()) - 1) * k;
  const int lo = num / 4;
  const int rem = num % 4;
  if (rem == 0) return v[lo];
  return v[lo] + (v[lo + 1] - v[lo]) * rem / 4.0;
}

std::string log_csv(const std::vector<double>& map, int start = 1) {
  std::string out = "epoch,map_50_95,precision,recall,f1\n";
  for (std::size_t i = 0; i < map.size(); ++i)
    out += std::to_string(start + int(i)) + "," + std::to_string(map[i]) + ",0.8,0.6,0.685714\n";
  return out;
}

}  // namespace

TEST(StudentT, ClosedFormPoints) {
  EXPECT_EQ(fa::student_t_sf(0, 3), 0.5);
  EXPECT_NEAR(fa::student_t_sf(1, 1), 0.25, 1e-15);
  EXPECT_NEAR(fa::student_t_sf(-1, 1), 0.75, 1e-15);
  // df = 2 has sf = 1/2 - t / (2 sqrt(t^2 + 2))
  for (double t : {0.3, 1.0, 2.5, 9.0}) EXPECT_NEAR(fa::student_t_sf(t, 2), 0.5 - t / (2 * std::sqrt(t * t + 2)), 1e-14);
  // df = 4: sf = 1/2 - 3/8 * u * (1 - t^2 / (12 (1 + t^2/4))), u = t / sqrt(1 + t^2/4)
  for (double t : {0.5, 1.224745, 4.0}) {
    const double s = 1 + t * t / 4;
    EXPECT_NEAR(fa::student_t_sf(t, 4), 0.5 - 0.375 * t / std::sqrt(s) * (1 - t * t / (12 * s)), 1e-14);
  }
  EXPECT_NEAR(fa::student_t_sf(1.224745, 4), 0.143932, 1e-6);
}

TEST(StudentT, MatchesIntegrationOracleOnGrid) {
  for (double df : {1.0, 2.0, 4.0, 10.0, 30.0, 100.0})
    for (double t = 0; t <= 10.0 + 1e-9; t += 0.125) {
      EXPECT_NEAR(fa::student_t_sf(t, df), oracle_t_sf(t, df), 1e-8) << "df=" << df << " t=" << t;
      EXPECT_NEAR(fa::student_t_sf(-t, df), oracle_t_sf(-t, df), 1e-8);
    }
}

TEST(StudentT, FractionalDfAndLargeT) {
  for (double df : {0.5, 3.7, 17.25, 999.0})
    for (double t : {0.01, 0.7, 3.0, 25.0, 50.0}) EXPECT_NEAR(fa::student_t_sf(t, df), oracle_t_sf(t, df), 1e-10);
}

TEST(IncompleteBeta, KnownValues) {
  EXPECT_NEAR(fa::regularized_incomplete_beta(1, 1, 0.3), 0.3, 1e-15);
  // I_x(2, 1) = x^2, I_x(1, 2) = 1 - (1-x)^2
  EXPECT_NEAR(fa::regularized_incomplete_beta(2, 1, 0.6), 0.36, 1e-15);
  EXPECT_NEAR(fa::regularized_incomplete_beta(1, 2, 0.6), 1 - 0.16, 1e-15);
  EXPECT_EQ(fa::regularized_incomplete_beta(3, 4, 0.0), 0.0);
  EXPECT_EQ(fa::regularized_incomplete_beta(3, 4, 1.0), 1.0);
  EXPECT_THROW(fa::regularized_incomplete_beta(0, 1, 0.5), std::domain_error);
}

TEST(TTest, PooledWorkedExample) {
  const auto r = fa::t_test({1, 2, 3}, {2, 3, 4});
  // means 2 and 3, both variances 1: t = -1 / sqrt(1 * (1/3 + 1/3))
  EXPECT_NEAR(r.t_statistic, -1 / std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_NEAR(r.t_statistic, -1.224745, 1e-6);
  EXPECT_EQ(r.degrees_of_freedom, 4);
  EXPECT_NEAR(r.p_value, 0.2879, 1e-3);
  EXPECT_NEAR(r.p_value, 2 * oracle_t_sf(-r.t_statistic, 4), 1e-10);
  EXPECT_FALSE(r.significant);
  EXPECT_EQ(r.alpha, 0.05);
}

TEST(TTest, EqualSamplesGiveZero) {
  const auto r = fa::t_test({0.3, 0.5, 0.9}, {0.3, 0.5, 0.9});
  EXPECT_EQ(r.t_statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_FALSE(r.significant);
}

TEST(TTest, WelchMatchesHandComputation) {
  const std::vector<double> a = {1, 2, 3, 4}, b = {2, 4, 6, 8, 10, 12};
  // var a = 5/3, var b = 14; va = 5/12, vb = 7/3
  const double va = 5.0 / 12, vb = 7.0 / 3;
  const double t = (2.5 - 7) / std::sqrt(va + vb);
  const double df = (va + vb) * (va + vb) / (va * va / 3 + vb * vb / 5);
  const auto r = fa::t_test(a, b, fa::TTestVariant::kWelch);
  EXPECT_NEAR(r.t_statistic, t, 1e-12);
  EXPECT_NEAR(r.degrees_of_freedom, df, 1e-12);
  EXPECT_NEAR(r.p_value, 2 * oracle_t_sf(std::abs(t), df), 1e-9);
}

TEST(TTest, AntisymmetryAndScaleInvariance) {
  fa::SplitMix64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> a(2 + rng.below(20)), b(2 + rng.below(20));
    for (auto& x : a) x = rng.uniform(0, 1);
    for (auto& x : b) x = rng.uniform(0.1, 1.1);
    for (auto variant : {fa::TTestVariant::kPooled, fa::TTestVariant::kWelch}) {
      const auto ab = fa::t_test(a, b, variant);
      const auto ba = fa::t_test(b, a, variant);
      EXPECT_EQ(ab.t_statistic, -ba.t_statistic);
      EXPECT_EQ(ab.p_value, ba.p_value);
      EXPECT_EQ(ab.degrees_of_freedom, ba.degrees_of_freedom);
      const double c = rng.uniform(0.01, 100);
      auto sa = a, sb = b;
      for (auto& x : sa) x *= c;
      for (auto& x : sb) x *= c;
      const auto scaled = fa::t_test(sa, sb, variant);
      EXPECT_NEAR(scaled.t_statistic, ab.t_statistic, 1e-12 * std::max(1.0, std::abs(ab.t_statistic)));
      EXPECT_NEAR(scaled.degrees_of_freedom, ab.degrees_of_freedom, 1e-12 * ab.degrees_of_freedom);
      EXPECT_NEAR(scaled.p_value, ab.p_value, 1e-12);
      EXPECT_EQ(ab.significant, ab.p_value < 0.05);
    }
  }
}

TEST(TTest, Errors) {
  EXPECT_THROW(fa::t_test({1}, {1, 2}), std::invalid_argument);
  EXPECT_THROW(fa::t_test({1, NAN}, {1, 2}), std::invalid_argument);
  EXPECT_THROW(fa::t_test({2, 2, 2}, {3, 3}), fa::UndefinedStatisticError);
  // one constant sample is fine
  EXPECT_NO_THROW(fa::t_test({2, 2, 2}, {3, 4}));
}

TEST(TTest, TenSigmaGapIsSignificant) {
  fa::SplitMix64 rng(4);
  std::vector<double> a(30), b(30);
  for (auto& x : a) x = 0.5 + 0.01 * (rng.uniform() - 0.5) * std::sqrt(12.0);
  for (auto& x : b) x = 0.6 + 0.01 * (rng.uniform() - 0.5) * std::sqrt(12.0);
  const auto r = fa::t_test(b, a);
  EXPECT_LT(r.p_value, 1e-6);
  EXPECT_TRUE(r.significant);
}

TEST(Formatting, PValuesAndDescription) {
  EXPECT_EQ(fa::format_p_value(0.0113), "0.0113");
  EXPECT_EQ(fa::format_p_value(0.00009), "<0.0001");
  EXPECT_EQ(fa::format_p_value(1e-30), "<0.0001");
  EXPECT_EQ(fa::format_p_value(0.0001), "0.0001");
  fa::TestResult r{2.5588, 98, 0.0113, 0.05, true};
  EXPECT_EQ(fa::describe(r), "T-statistic = 2.5588, P-value = 0.0113 (significant at alpha = 0.05)");
  r.p_value = 1e-9;
  EXPECT_EQ(fa::describe(r), "T-statistic = 2.5588, P-value <0.0001 (significant at alpha = 0.05)");
}

TEST(BoxSummary, WorkedCases) {
  const auto one = fa::box_summary({5});
  EXPECT_EQ(one.median, 5);
  EXPECT_EQ(one.q1, 5);
  EXPECT_EQ(one.whisker_high, 5);
  EXPECT_TRUE(one.outliers.empty());
  const auto five = fa::box_summary({5, 3, 1, 4, 2});
  EXPECT_EQ(five.median, 3);
  EXPECT_EQ(five.q1, 2);
  EXPECT_EQ(five.q3, 4);
  const auto outlier = fa::box_summary({1, 2, 3, 4, 100});
  EXPECT_EQ(outlier.outliers, std::vector<double>{100});
  EXPECT_EQ(outlier.whisker_high, 4);
  EXPECT_EQ(outlier.whisker_low, 1);
}

TEST(BoxSummary, ExhaustiveSmallListsMatchOracle) {
  std::function<void(std::vector<int>&, std::size_t, int)> walk = [&](std::vector<int>& v, std::size_t len, int vmax) {
    if (v.size() == len) {
      const std::vector<double> xs(v.begin(), v.end());
      const auto s = fa::box_summary(xs);
      ASSERT_EQ(s.q1, oracle_quartile(v, 1));
      ASSERT_EQ(s.median, oracle_quartile(v, 2));
      ASSERT_EQ(s.q3, oracle_quartile(v, 3));
      ASSERT_EQ(s.iqr, s.q3 - s.q1);
      const double lo = s.q1 - 1.5 * s.iqr, hi = s.q3 + 1.5 * s.iqr;
      std::size_t inside = 0;
      for (int x : v) inside += x >= lo && x <= hi;
      ASSERT_EQ(inside + s.outliers.size(), v.size());
      ASSERT_GE(s.whisker_low, lo);
      ASSERT_LE(s.whisker_high, hi);
      return;
    }
    for (int x = 0; x <= vmax; ++x) {
      v.push_back(x);
      walk(v, len, vmax);
      v.pop_back();
    }
  };
  std::vector<int> v;
  for (std::size_t len = 1; len <= 8; ++len) walk(v, len, len <= 6 ? 4 : 2);
  // one wide-range outlier pattern per length
  for (std::size_t len = 4; len <= 8; ++len) {
    std::vector<int> w(len, 0);
    for (std::size_t i = 0; i < len; ++i) w[i] = static_cast<int>(i);
    w.back() = 1000;
    const std::vector<double> xs(w.begin(), w.end());
    EXPECT_EQ(fa::box_summary(xs).outliers, std::vector<double>{1000});
  }
}

TEST(Histogram, Placement) {
  std::vector<double> ten;
  for (int i = 0; i < 10; ++i) ten.push_back(i);
  const auto bins = fa::histogram(ten, 10);
  ASSERT_EQ(bins.size(), 10u);
  for (const auto& b : bins) EXPECT_EQ(b.count, 1u);
  EXPECT_EQ(bins.front().low, 0);
  EXPECT_EQ(bins.back().high, 9);
  const auto single = fa::histogram({0.4}, 5);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(single[0].count, 1u);
  EXPECT_THROW(fa::histogram({}, 3), std::invalid_argument);
  EXPECT_THROW(fa::histogram({1}, 0), std::invalid_argument);
}

TEST(Histogram, CountsAreConserved) {
  fa::SplitMix64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> xs(1 + rng.below(200));
    for (auto& x : xs) x = rng.below(3) ? rng.uniform(-1, 1) : std::round(rng.uniform(-5, 5));
    const auto bins = fa::histogram(xs, 1 + rng.below(20));
    std::size_t total = 0;
    for (const auto& b : bins) total += b.count;
    EXPECT_EQ(total, xs.size());
    for (double x : xs) {
      std::size_t hits = 0;
      for (std::size_t k = 0; k < bins.size(); ++k) {
        const bool last = k + 1 == bins.size();
        hits += x >= bins[k].low && (last ? x <= bins[k].high : x < bins[k].high);
      }
      EXPECT_EQ(hits, 1u);
    }
  }
}

TEST(TrainingLog, HundredEpochs) {
  std::vector<double> map(100);
  for (int i = 0; i < 100; ++i) map[i] = 0.3 + 0.004 * i;
  const auto series = fa::ingest_training_log(log_csv(map), "v8-SP");
  ASSERT_EQ(series.size(), 4u);
  for (const auto& s : series) {
    EXPECT_EQ(s.values.size(), 100u);
    EXPECT_EQ(s.config_id, "v8-SP");
    EXPECT_EQ(s.unit, "epoch");
  }
  EXPECT_EQ(series[0].metric_name, "map_50_95");
  EXPECT_NEAR(series[0].values[99], 0.696, 1e-6);
}

TEST(TrainingLog, Errors) {
  EXPECT_THROW(fa::ingest_training_log("", "x"), fa::LogError);
  EXPECT_THROW(fa::ingest_training_log("epoch,map_50_95,precision,recall,f1\n", "x"), fa::LogError);
  EXPECT_THROW(fa::ingest_training_log("epoch,map_50_95,precision,f1\n1,0.1,0.2,0.3\n", "x"), fa::LogError);
  EXPECT_THROW(fa::ingest_training_log("epoch,map_50_95,precision,recall,f1\n2,0.1,0.2,0.3,0.2\n1,0.1,0.2,0.3,0.2\n", "x"),
               fa::LogError);
  try {
    fa::ingest_training_log("epoch,map_50_95,precision,recall,f1\n1,0.1,0.2,0.3,0.2\n2,abc,0.2,0.3,0.2\n", "x");
    FAIL();
  } catch (const fa::LogError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("line 3:", 0), 0u) << e.what();
  }
}

TEST(TrainingLog, ConfigColumnRunsAndAliases) {
  const auto s = fa::ingest_training_log(
      "config,run,mAP50-95,metrics/precision(B),metrics/recall(B)\r\n"
      "v8-SP,1,0.5,0.8,0.6\r\nv8-MP,1,0.4,0.5,0.5\r\nv8-SP,2,0.52,1.0,0.0\r\n",
      "ignored");
  ASSERT_EQ(s.size(), 8u);
  EXPECT_EQ(s[0].config_id, "v8-SP");
  EXPECT_EQ(s[0].unit, "run");
  EXPECT_EQ(s[0].values, (std::vector<double>{0.5, 0.52}));
  const auto& f1 = fa::find_series(s, "v8-SP", "f1");
  EXPECT_NEAR(f1.values[0], 0.685714, 1e-6);
  EXPECT_EQ(f1.values[1], 0.0);
}

TEST(CompareConfigs, RowsInPairOrderWithDirection) {
  fa::SplitMix64 rng(1);
  std::vector<double> hi(40), lo(40);
  for (auto& x : hi) x = 0.7 + 0.01 * rng.uniform();
  for (auto& x : lo) x = 0.5 + 0.01 * rng.uniform();
  auto all = fa::ingest_training_log(log_csv(hi), "v8-SP");
  const auto more = fa::ingest_training_log(log_csv(lo), "v8-MP");
  all.insert(all.end(), more.begin(), more.end());
  const auto rows = fa::compare_configs(all, {{"v8-MP", "v8-SP"}, {"v8-SP", "v8-SP"}}, "map_50_95");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].direction(), "v8-SP>v8-MP");
  EXPECT_TRUE(rows[0].result.significant);
  EXPECT_LT(rows[0].result.t_statistic, 0);
  EXPECT_EQ(rows[1].result.t_statistic, 0.0);
  EXPECT_FALSE(rows[1].result.significant);
  EXPECT_EQ(rows[1].direction(), "equal");
  EXPECT_THROW(fa::compare_configs(all, {{"v8-SP", "v5-SP"}}, "map_50_95"), std::invalid_argument);
  const auto csv = fa::format_comparison_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "pair,metric,t,df,p,significant,direction,unit,p_exact");
  EXPECT_NE(csv.find("v8-MP vs v8-SP,map_50_95,"), std::string::npos);
  EXPECT_NE(csv.find(",<0.0001,true,v8-SP>v8-MP,epoch,"), std::string::npos);
}

TEST(PlotData, BoxHistogramAndCurves) {
  const auto s = fa::ingest_training_log(log_csv({0.1, 0.2, 0.3, 0.4, 5.0}), "c");
  const auto box = fa::format_box_csv(s);
  EXPECT_NE(box.find("c,map_50_95,0.300000,0.200000,0.400000,0.200000,0.100000,0.400000,5.000000\n"), std::string::npos);
  const auto hist = fa::format_histogram_csv(s, 2);
  EXPECT_NE(hist.find("c,map_50_95,0.100000,2.550000,4\n"), std::string::npos);
  const auto curves = fa::format_curves_csv(s);
  EXPECT_NE(curves.find("c,map_50_95,epoch,5,5.000000\n"), std::string::npos);
}
