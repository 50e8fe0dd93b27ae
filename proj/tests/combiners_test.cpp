#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "pvfuse/combiners.hpp"
#include "test_support.hpp"

namespace {

using namespace pvfuse;
namespace pt = pvfuse::testing;

// Equicorrelated normal scores via one shared factor: sqrt(rho) w + sqrt(1 - rho) e_j.
ScoreMatrix factor_scores(std::size_t n, std::size_t k, double rho, std::uint64_t seed, double shift = 0.0) {
  std::vector<std::string> names;
  for (std::size_t j = 0; j < k; ++j) names.push_back("d" + std::to_string(j));
  ScoreMatrix m(names);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<double> row(k);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = z(rng);
    for (auto& v : row) v = std::sqrt(rho) * w + std::sqrt(1.0 - rho) * z(rng) - shift;
    m.append_row(row);
  }
  return m;
}

std::vector<double> uniforms(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) {
    do x = u(rng);
    while (x == 0.0);
  }
  return v;
}

CalibrateOptions quiet() {
  CalibrateOptions o;
  o.warn = nullptr;
  return o;
}

TEST(CombinerNames, RoundTrip) {
  for (auto kind : kAllCombiners) EXPECT_EQ(parse_combiner(combiner_name(kind)), kind);
  EXPECT_THROW(parse_combiner("median"), std::invalid_argument);
}

TEST(FisherStat, Examples) {
  EXPECT_NEAR(fisher_stat(std::vector<double>{0.99999, 0.99999}), -4.0 * std::log1p(-1e-5), 1e-12);
  EXPECT_NEAR(fisher_stat(std::vector<double>{std::exp(-1.0), std::exp(-1.0)}), 4.0, 1e-12);
  EXPECT_THROW(fisher_stat(std::vector<double>{0.5, 0.0}), DomainError);
  EXPECT_THROW(fisher_stat(std::vector<double>{0.5, 1.0}), DomainError);
  EXPECT_THROW(fisher_stat(std::vector<double>{}), DomainError);
}

TEST(FisherStat, StrictlyDecreasingInEachArgument) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.01, 0.98);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p{u(rng), u(rng), u(rng)};
    const double base = fisher_stat(p);
    p[i % 3] += 0.01;
    EXPECT_LT(fisher_stat(p), base);
  }
}

TEST(FisherStat, NullMomentsMatchChiSquare) {
  const std::size_t k = 6, n = 100000;
  const auto u = uniforms(n * k, 2);
  std::vector<double> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(fisher_stat(std::span(u).subspan(i * k, k)));
  EXPECT_NEAR(pt::mean(s), 12.0, 0.1);
  EXPECT_NEAR(pt::variance(s), 24.0, 0.8);
}

TEST(StoufferStat, Examples) {
  EXPECT_NEAR(stouffer_stat(std::vector<double>{0.5, 0.5, 0.5}), 0.0, 1e-15);
  EXPECT_NEAR(stouffer_stat(std::vector<double>{0.3, 0.7}), 0.0, 1e-12);
  EXPECT_THROW(stouffer_stat(std::vector<double>{0.0}), DomainError);
}

TEST(StoufferStat, NullMoments) {
  const std::size_t k = 4, n = 100000;
  const auto u = uniforms(n * k, 3);
  std::vector<double> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(stouffer_stat(std::span(u).subspan(i * k, k)));
  EXPECT_NEAR(pt::mean(s), 0.0, 0.02);
  EXPECT_NEAR(pt::variance(s), 4.0, 0.15);
}

TEST(BasicStats, Examples) {
  const auto s = basic_stats(std::vector<double>{0.2, 0.4});
  EXPECT_DOUBLE_EQ(s.tippett, 0.2);
  EXPECT_DOUBLE_EQ(s.wilkinson, 0.4);
  EXPECT_DOUBLE_EQ(s.edgington, 0.3);
  EXPECT_NEAR(s.pearson, 2.0 * (std::log(0.8) + std::log(0.6)), 1e-14);
  EXPECT_DOUBLE_EQ(s.simes, 0.4);

  const auto same = basic_stats(std::vector<double>{0.3, 0.3, 0.3});
  EXPECT_DOUBLE_EQ(same.tippett, 0.3);
  EXPECT_DOUBLE_EQ(same.wilkinson, 0.3);
  EXPECT_NEAR(same.edgington, 0.3, 1e-15);
  EXPECT_DOUBLE_EQ(same.simes, 0.3);
}

// For every value and every rank it could occupy among ties, (k / rank) * value.
double simes_brute_force(const std::vector<double>& p) {
  const double k = static_cast<double>(p.size());
  double best = 1.0;
  for (double v : p) {
    const auto below = std::count_if(p.begin(), p.end(), [&](double x) { return x < v; });
    const auto at_most = std::count_if(p.begin(), p.end(), [&](double x) { return x <= v; });
    for (auto rank = below + 1; rank <= at_most; ++rank) best = std::min(best, k / static_cast<double>(rank) * v);
  }
  return best;
}

TEST(SimesStat, MatchesBruteForceAndBounds) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  std::uniform_int_distribution<int> width(1, 8);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> p(static_cast<std::size_t>(width(rng)));
    for (auto& v : p) v = t % 4 == 0 ? std::round(u(rng) * 5.0) / 6.0 + 0.01 : u(rng);
    const auto s = basic_stats(p);
    EXPECT_DOUBLE_EQ(s.simes, simes_brute_force(p));
    EXPECT_GE(s.simes, s.tippett);
    EXPECT_LE(s.simes, std::min(1.0, static_cast<double>(p.size()) * s.tippett) * (1 + 1e-15));
    EXPECT_LE(s.tippett, s.edgington * (1 + 1e-15));
    EXPECT_LE(s.edgington, s.wilkinson * (1 + 1e-15));
  }
}

TEST(Baseline, Identities) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  std::vector<double> a(300), b(300);
  for (std::size_t i = 0; i < 300; ++i) a[i] = n(rng), b[i] = 3.0 * n(rng) + 2.0;
  const std::vector<Ecdf> e{fit_ecdf(a, "a"), fit_ecdf(b, "b")};
  const std::vector<DetectorMoments> m{detector_moments(e[0]), detector_moments(e[1])};

  EXPECT_NEAR(baseline_combine(std::vector<double>{m[0].mean, m[1].mean}, Normalization::Standard, Aggregation::Mean, m), 0.0,
              1e-12);
  EXPECT_DOUBLE_EQ(baseline_combine(std::vector<double>{m[0].max, m[1].max}, Normalization::MinMax, Aggregation::Max, m), 1.0);
  EXPECT_DOUBLE_EQ(baseline_combine(std::vector<double>{m[0].min, m[1].min}, Normalization::MinMax, Aggregation::Min, m), 0.0);

  for (int t = 0; t < 100; ++t) {
    const std::vector<double> row{n(rng), 3.0 * n(rng)};
    const auto p = p_value_row(e, row);
    EXPECT_DOUBLE_EQ(baseline_combine(row, Normalization::Quantile, Aggregation::Mean, m, e), basic_stats(p.values).edgington);
    EXPECT_DOUBLE_EQ(baseline_combine(row, Normalization::Quantile, Aggregation::Min, m, e), basic_stats(p.values).tippett);
  }
}

TEST(Baseline, ZeroSpreadIsDegenerate) {
  const std::vector<Ecdf> e{fit_ecdf(std::vector<double>{1.0, 1.0, 1.0}, "a"), fit_ecdf(std::vector<double>{1.0, 2.0}, "b")};
  const std::vector<DetectorMoments> m{detector_moments(e[0]), detector_moments(e[1])};
  EXPECT_THROW(baseline_combine(std::vector<double>{1.0, 1.0}, Normalization::Standard, Aggregation::Mean, m), DegenerateError);
  EXPECT_THROW(baseline_combine(std::vector<double>{1.0, 1.0}, Normalization::MinMax, Aggregation::Mean, m), DegenerateError);
  EXPECT_NO_THROW(baseline_combine(std::vector<double>{1.0, 1.0}, Normalization::Quantile, Aggregation::Mean, m, e));
}

TEST(FitBrown, RecoversIndependenceParameters) {
  // Two-point sample with population mean mu and variance sigma^2.
  const double k = 5.0, mu = 2.0 * k, sd = std::sqrt(4.0 * k);
  const auto b = fit_brown(std::vector<double>{mu - sd, mu + sd, mu - sd, mu + sd});
  EXPECT_NEAR(b.c, 1.0, 1e-12);
  EXPECT_NEAR(b.k_prime, 2.0 * k, 1e-12);
}

TEST(FitBrown, ScalesWithStatistics) {
  std::mt19937_64 rng(6);
  std::gamma_distribution<double> g(3.0, 2.0);
  std::vector<double> s(1000);
  for (auto& v : s) v = g(rng);
  const auto b = fit_brown(s);
  for (double lambda : {0.5, 3.0, 17.0}) {
    auto scaled = s;
    for (auto& v : scaled) v *= lambda;
    const auto bl = fit_brown(scaled);
    EXPECT_NEAR(bl.c, lambda * b.c, 1e-9 * lambda * b.c);
    EXPECT_NEAR(bl.k_prime, b.k_prime, 1e-9 * b.k_prime);
  }
}

TEST(FitBrown, Errors) {
  EXPECT_THROW(fit_brown(std::vector<double>{3.0, 3.0, 3.0}), DegenerateError);
  EXPECT_THROW(fit_brown(std::vector<double>{3.0}), DataError);
}

TEST(BrownConfidence, Examples) {
  const BrownParams b{1.0, 2.0};
  EXPECT_NEAR(brown_confidence(b, 2.0), std::exp(-1.0), 1e-14);
  const double at_zero = brown_confidence(BrownParams{1.3, 7.0}, 0.0);
  EXPECT_LT(at_zero, 1.0);
  EXPECT_GE(at_zero, 1.0 - 1e-15);
  EXPECT_THROW(brown_confidence(b, -1.0), DomainError);
  double prev = 1.0;
  for (double s = 0.25; s < 60.0; s += 0.25) {
    const double c = brown_confidence(BrownParams{1.3, 7.0}, s);
    EXPECT_LT(c, prev);
    prev = c;
  }
  EXPECT_GE(brown_confidence(b, 1e6), 1e-300);
}

TEST(BrownConfidence, UniformUnderEquicorrelation) {
  const auto cal = calibrate(factor_scores(10000, 5, 0.5, 7), CombinerKind::Fisher);
  const auto conf = combined_confidences(cal, factor_scores(10000, 5, 0.5, 8));
  EXPECT_LT(pt::ks_uniform_distance(conf), 0.03);
}

TEST(BrownConfidence, ScaledStatisticHasMeanKPrime) {
  const auto cal = calibrate(factor_scores(10000, 5, 0.5, 9), CombinerKind::Fisher);
  const auto fresh = factor_scores(10000, 5, 0.5, 10);
  std::vector<double> scaled;
  for (std::size_t i = 0; i < fresh.rows(); ++i) scaled.push_back(combined_statistic(cal, fresh.row(i)) / cal.brown()->c);
  EXPECT_NEAR(pt::mean(scaled), cal.brown()->k_prime, 0.03 * cal.brown()->k_prime);
}

TEST(BrownConfidence, PreservesFisherOrdering) {
  const auto cal = calibrate(factor_scores(2000, 4, 0.3, 11), CombinerKind::Fisher);
  const auto fresh = factor_scores(2000, 4, 0.3, 12, 0.5);
  std::vector<std::pair<double, double>> sc;
  for (std::size_t i = 0; i < fresh.rows(); ++i)
    sc.emplace_back(combined_statistic(cal, fresh.row(i)), combined_confidence(cal, fresh.row(i)));
  std::sort(sc.begin(), sc.end());
  for (std::size_t i = 1; i < sc.size(); ++i) EXPECT_LE(sc[i].second, sc[i - 1].second);
}

TEST(BrownThreshold, AgreesWithDecide) {
  const auto cal = calibrate(factor_scores(5000, 3, 0.4, 13), CombinerKind::Fisher);
  const auto fresh = factor_scores(5000, 3, 0.4, 14, 0.3);
  const double alpha = 0.95, gamma = brown_threshold(*cal.brown(), alpha);
  for (std::size_t i = 0; i < fresh.rows(); ++i) {
    const double s = combined_statistic(cal, fresh.row(i));
    if (std::abs(s - gamma) < 1e-9 * gamma) continue;
    EXPECT_EQ(decide(cal, fresh.row(i), alpha), s > gamma);
  }
}

TEST(FitHartung, Examples) {
  std::vector<double> constant_rows;
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 4; ++j) constant_rows.push_back(0.1 * i - 2.0);
  EXPECT_DOUBLE_EQ(fit_hartung(constant_rows, 4).rho_hat, 1.0 - 1e-6);

  std::vector<double> opposite;
  for (int i = 0; i < 50; ++i) opposite.push_back(0.1 * i + 1.0), opposite.push_back(-0.1 * i - 1.0);
  EXPECT_DOUBLE_EQ(fit_hartung(opposite, 2).rho_hat, -1.0 + 1e-6);

  std::mt19937_64 rng(15);
  std::normal_distribution<double> n;
  std::vector<double> iid(10000 * 5);
  for (auto& v : iid) v = n(rng);
  EXPECT_NEAR(fit_hartung(iid, 5).rho_hat, 0.0, 0.03);

  EXPECT_THROW(fit_hartung(iid, 1), DataError);
  EXPECT_THROW(fit_hartung(std::vector<double>{1.0, 2.0, 3.0}, 2), DataError);
}

TEST(HartungStat, Examples) {
  HartungParams h;
  h.rho_hat = 0.0;
  h.weights.assign(4, 1.0);
  const std::vector<double> p{0.1, 0.4, 0.7, 0.95};
  EXPECT_NEAR(hartung_stat(h, p), stouffer_stat(p) / 2.0, 1e-14);
  EXPECT_NEAR(hartung_stat(h, std::vector<double>{0.5, 0.5, 0.5, 0.5}), 0.0, 1e-15);
  h.rho_hat = 0.7;
  EXPECT_NEAR(hartung_stat(h, std::vector<double>{0.5, 0.5, 0.5, 0.5}), 0.0, 1e-15);
  EXPECT_THROW(hartung_stat(h, std::vector<double>{0.5}), DataError);
}

TEST(HartungStat, StandardNormalUnderEquicorrelation) {
  const auto cal = calibrate(factor_scores(10000, 5, 0.5, 16), CombinerKind::Stouffer);
  const auto fresh = factor_scores(10000, 5, 0.5, 17);
  std::vector<double> s, raw;
  for (std::size_t i = 0; i < fresh.rows(); ++i) {
    s.push_back(combined_statistic(cal, fresh.row(i)));
    raw.push_back(stouffer_stat(p_value_row(cal.ecdfs(), fresh.row(i)).values) / std::sqrt(5.0));
  }
  const double sd = std::sqrt(pt::variance(s));
  EXPECT_GE(sd, 0.93);
  EXPECT_LE(sd, 1.07);
  EXPECT_GT(std::sqrt(pt::variance(raw)), 1.5);  // the uncorrected statistic is visibly too wide
}

TEST(Calibrate, ConfidenceOnCalibrationRowsIsCentered) {
  const auto train = factor_scores(10000, 4, 0.2, 18);
  for (auto kind : {CombinerKind::Fisher, CombinerKind::Stouffer, CombinerKind::Pearson}) {
    const auto cal = calibrate(train, kind);
    EXPECT_NEAR(pt::mean(combined_confidences(cal, train)), 0.5, 0.03) << combiner_name(kind);
  }
}

TEST(Calibrate, DeterministicAndNameAligned) {
  const auto train = factor_scores(500, 3, 0.3, 19);
  for (auto kind : kAllCombiners) {
    const auto a = calibrate(train, kind), b = calibrate(train, kind);
    EXPECT_TRUE(a == b) << combiner_name(kind);
  }
  const auto cal = calibrate(train, CombinerKind::Fisher);
  const auto fresh = factor_scores(100, 3, 0.3, 20);
  const std::vector<std::size_t> order{2, 0, 1};
  EXPECT_EQ(combined_confidences(cal, fresh), combined_confidences(cal, fresh.select_columns(order)));
}

TEST(Calibrate, WarnsOnSmallCalibrationSet) {
  std::vector<std::string> warnings;
  CalibrateOptions opts;
  opts.warn = [&](const std::string& m) { warnings.push_back(m); };
  calibrate(factor_scores(50, 2, 0.0, 21), CombinerKind::Fisher, opts);
  EXPECT_EQ(warnings.size(), 1u);
  warnings.clear();
  calibrate(factor_scores(100, 2, 0.0, 21), CombinerKind::Fisher, opts);
  EXPECT_TRUE(warnings.empty());
}

TEST(Calibrate, ParameterPresence) {
  const auto train = factor_scores(200, 3, 0.0, 22);
  EXPECT_TRUE(calibrate(train, CombinerKind::Fisher).brown().has_value());
  EXPECT_FALSE(calibrate(train, CombinerKind::Fisher).hartung().has_value());
  EXPECT_TRUE(calibrate(train, CombinerKind::Stouffer).hartung().has_value());
  EXPECT_FALSE(calibrate(train, CombinerKind::Simes).brown().has_value());
  const std::vector<Ecdf> e{fit_ecdf(train.column(0), "d0"), fit_ecdf(train.column(1), "d1")};
  EXPECT_THROW(Calibration(e, CombinerKind::Fisher, std::nullopt, std::nullopt, 200), DataError);
  EXPECT_THROW(Calibration(e, CombinerKind::Tippett, BrownParams::independent(2), std::nullopt, 200), DataError);
  EXPECT_THROW(Calibration(e, CombinerKind::Tippett, std::nullopt, std::nullopt, 1), DataError);
}

TEST(Calibrate, SingleDetectorPassesThroughPValue) {
  const auto train = factor_scores(300, 1, 0.0, 23);
  const auto fresh = factor_scores(50, 1, 0.0, 24);
  for (auto kind : {CombinerKind::Fisher, CombinerKind::Stouffer, CombinerKind::Simes, CombinerKind::MeanScore}) {
    const auto cal = calibrate(train, kind);
    EXPECT_FALSE(cal.brown().has_value());
    for (std::size_t i = 0; i < fresh.rows(); ++i)
      EXPECT_EQ(combined_confidence(cal, fresh.row(i)), cal.ecdfs()[0].p_value(fresh(i, 0)));
  }
}

TEST(CombinedConfidence, ExtremesAndUniformity) {
  const auto train = factor_scores(10000, 4, 0.0, 25);
  const auto cal = calibrate(train, CombinerKind::Fisher);
  const std::vector<double> high(4, 100.0), low(4, -100.0);
  EXPECT_GT(combined_confidence(cal, high), 0.999);
  EXPECT_LT(combined_confidence(cal, low), 1e-6);
  EXPECT_LT(pt::ks_uniform_distance(combined_confidences(cal, factor_scores(10000, 4, 0.0, 26))), 0.03);
  const auto pearson = calibrate(train, CombinerKind::Pearson);
  EXPECT_LT(pt::ks_uniform_distance(combined_confidences(pearson, factor_scores(10000, 4, 0.0, 27))), 0.03);
}

TEST(CombinedConfidence, RejectsWrongWidth) {
  const auto cal = calibrate(factor_scores(200, 3, 0.0, 28), CombinerKind::Fisher);
  EXPECT_THROW(combined_confidence(cal, std::vector<double>{1.0, 2.0}), DataError);
}

TEST(Decide, RateAndLimits) {
  const auto cal = calibrate(factor_scores(10000, 5, 0.5, 29), CombinerKind::Fisher);
  const auto fresh = factor_scores(10000, 5, 0.5, 30);
  std::size_t at95 = 0, near_one = 0, near_zero = 0;
  for (std::size_t i = 0; i < fresh.rows(); ++i) {
    at95 += decide(cal, fresh.row(i), 0.95);
    near_one += decide(cal, fresh.row(i), 1.0 - 1e-6);
    near_zero += decide(cal, fresh.row(i), 1e-6);
  }
  EXPECT_NEAR(at95 / 10000.0, 0.05, 0.01);
  EXPECT_LE(near_one, 10u);
  EXPECT_GE(near_zero, 9990u);
  EXPECT_THROW(decide(cal, fresh.row(0), 1.0), DomainError);
  EXPECT_THROW(decide(cal, fresh.row(0), 0.0), DomainError);
}

// Applying a strictly increasing map to one detector in both calibration and test data
// leaves every p-value, and so every p-value based decision, unchanged.
TEST(Invariants, RankInvarianceOfPValueCombiners) {
  auto train = factor_scores(2000, 3, 0.3, 31);
  auto test = factor_scores(500, 3, 0.3, 32, 0.4);
  auto warp = [](ScoreMatrix m) {
    ScoreMatrix out(m.names());
    for (std::size_t i = 0; i < m.rows(); ++i) {
      std::vector<double> row(m.row(i).begin(), m.row(i).end());
      row[1] = row[1] * row[1] * row[1] + row[1];
      out.append_row(row);
    }
    return out;
  };
  for (auto kind : {CombinerKind::Fisher, CombinerKind::Stouffer, CombinerKind::Tippett, CombinerKind::Pearson,
                    CombinerKind::Edgington, CombinerKind::Simes, CombinerKind::Wilkinson}) {
    const auto a = calibrate(train, kind, quiet()), b = calibrate(warp(train), kind, quiet());
    EXPECT_EQ(combined_confidences(a, test), combined_confidences(b, warp(test))) << combiner_name(kind);
  }
  CalibrateOptions q = quiet();
  q.baseline_norm = Normalization::Quantile;
  const auto a = calibrate(train, CombinerKind::MeanScore, q), b = calibrate(warp(train), CombinerKind::MeanScore, q);
  EXPECT_EQ(combined_confidences(a, test), combined_confidences(b, warp(test)));
}

TEST(Invariants, LowerScoresNeverRaiseConfidence) {
  const auto train = factor_scores(1000, 3, 0.2, 33);
  const auto test = factor_scores(300, 3, 0.2, 34);
  for (auto kind : kAllCombiners) {
    const auto cal = calibrate(train, kind, quiet());
    for (std::size_t i = 0; i < test.rows(); ++i) {
      std::vector<double> lower(test.row(i).begin(), test.row(i).end());
      for (auto& v : lower) v -= 0.3;
      EXPECT_LE(combined_confidence(cal, lower), combined_confidence(cal, test.row(i))) << combiner_name(kind);
    }
  }
}

}  // namespace
