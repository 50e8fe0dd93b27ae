#pragma once

// p-value combination statistics, their correlation corrections, and the offline
// calibration that turns a held-out in-distribution score matrix into a Calibration.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pvfuse/ecdf.hpp"
#include "pvfuse/error.hpp"
#include "pvfuse/metrics.hpp"
#include "pvfuse/numerics.hpp"
#include "pvfuse/score_matrix.hpp"

namespace pvfuse {

enum class CombinerKind { Fisher, Stouffer, Tippett, Pearson, Edgington, Simes, Wilkinson, MeanScore, MinScore, MaxScore };

inline constexpr std::array kAllCombiners = {
    CombinerKind::Fisher,    CombinerKind::Stouffer,  CombinerKind::Tippett,  CombinerKind::Pearson,
    CombinerKind::Edgington, CombinerKind::Simes,     CombinerKind::Wilkinson, CombinerKind::MeanScore,
    CombinerKind::MinScore,  CombinerKind::MaxScore};

inline std::string_view combiner_name(CombinerKind kind) {
  switch (kind) {
    case CombinerKind::Fisher: return "fisher";
    case CombinerKind::Stouffer: return "stouffer";
    case CombinerKind::Tippett: return "tippett";
    case CombinerKind::Pearson: return "pearson";
    case CombinerKind::Edgington: return "edgington";
    case CombinerKind::Simes: return "simes";
    case CombinerKind::Wilkinson: return "wilkinson";
    case CombinerKind::MeanScore: return "mean";
    case CombinerKind::MinScore: return "min";
    case CombinerKind::MaxScore: return "max";
  }
  return "?";
}

inline CombinerKind parse_combiner(std::string_view name) {
  for (auto kind : kAllCombiners)
    if (combiner_name(kind) == name) return kind;
  throw std::invalid_argument("unknown combiner '" + std::string(name) + "'");
}

// Direction of the raw statistic. Fisher's and Pearson's statistics grow with evidence of
// shift; all the others grow with in-distribution confidence.
inline Orientation statistic_orientation(CombinerKind kind) {
  return (kind == CombinerKind::Fisher || kind == CombinerKind::Pearson) ? Orientation::HigherIsShift
                                                                         : Orientation::HigherIsID;
}

namespace detail {

inline void require_open_unit(std::span<const double> p, const char* fn) {
  if (p.empty()) throw DomainError(std::string(fn) + ": empty p-value vector");
  for (double v : p)
    if (!(v > 0.0 && v < 1.0)) throw DomainError(std::string(fn) + ": p-values must lie in (0,1)");
}

}  // namespace detail

// -2 * sum(ln p_i)
inline double fisher_stat(std::span<const double> p) {
  detail::require_open_unit(p, "fisher_stat");
  double s = 0.0;
  for (double v : p) s += std::log(v);
  return -2.0 * s;
}

// sum(probit(p_i))
inline double stouffer_stat(std::span<const double> p) {
  detail::require_open_unit(p, "stouffer_stat");
  double s = 0.0;
  for (double v : p) s += probit(v);
  return s;
}

// min over ascending-sorted p of (k / i) * p_(i), i 1-based, capped at 1.
inline double simes_stat(std::span<const double> p) {
  detail::require_open_unit(p, "simes_stat");
  std::vector<double> sorted(p.begin(), p.end());
  std::sort(sorted.begin(), sorted.end());
  const double k = static_cast<double>(sorted.size());
  double best = 1.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) best = std::min(best, k / static_cast<double>(i + 1) * sorted[i]);
  return best;
}

struct BasicStats {
  double tippett;    // min p
  double pearson;    // 2 * sum ln(1 - p)
  double edgington;  // mean p
  double simes;
  double wilkinson;  // max p
};

inline BasicStats basic_stats(std::span<const double> p) {
  detail::require_open_unit(p, "basic_stats");
  BasicStats s{};
  s.tippett = *std::min_element(p.begin(), p.end());
  s.wilkinson = *std::max_element(p.begin(), p.end());
  double sum = 0.0, log_sum = 0.0;
  for (double v : p) {
    sum += v;
    log_sum += std::log1p(-v);
  }
  s.edgington = sum / static_cast<double>(p.size());
  s.pearson = 2.0 * log_sum;
  s.simes = simes_stat(p);
  return s;
}

// ---------------------------------------------------------------------------
// Simple normalization baselines

enum class Normalization { MinMax, Standard, Quantile };
enum class Aggregation { Mean, Min, Max };

inline std::string_view normalization_name(Normalization n) {
  switch (n) {
    case Normalization::MinMax: return "minmax";
    case Normalization::Standard: return "standard";
    case Normalization::Quantile: return "quantile";
  }
  return "?";
}

inline Normalization parse_normalization(std::string_view name) {
  for (auto n : {Normalization::MinMax, Normalization::Standard, Normalization::Quantile})
    if (normalization_name(n) == name) return n;
  throw std::invalid_argument("unknown normalization '" + std::string(name) + "'");
}

// Per-detector constants for min-max and z-score normalization (population moments).
struct DetectorMoments {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline DetectorMoments detector_moments(const Ecdf& e) {
  const auto& v = e.sorted_reference();
  DetectorMoments m;
  m.min = v.front();
  m.max = v.back();
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

inline void check_normalizable(std::span<const DetectorMoments> moments, Normalization norm) {
  for (std::size_t j = 0; j < moments.size(); ++j) {
    if (norm == Normalization::Standard && !(moments[j].stddev > 0.0))
      throw DegenerateError("standard normalization: detector " + std::to_string(j) + " has zero variance");
    if (norm == Normalization::MinMax && !(moments[j].max > moments[j].min))
      throw DegenerateError("min-max normalization: detector " + std::to_string(j) + " has max == min");
  }
}

// Normalizes each detector score then aggregates. Quantile normalization needs `ecdfs`
// and yields the smoothed p-value.
inline double baseline_combine(std::span<const double> row, Normalization norm, Aggregation agg,
                               std::span<const DetectorMoments> moments, std::span<const Ecdf> ecdfs = {}) {
  if (row.empty()) throw DataError("baseline_combine: empty row");
  if (norm == Normalization::Quantile ? ecdfs.size() != row.size() : moments.size() != row.size())
    throw DataError("baseline_combine: row width does not match normalization constants");
  if (norm != Normalization::Quantile) check_normalizable(moments, norm);

  double acc = agg == Aggregation::Min ? std::numeric_limits<double>::infinity()
               : agg == Aggregation::Max ? -std::numeric_limits<double>::infinity()
                                         : 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    double z = 0.0;
    switch (norm) {
      case Normalization::MinMax: z = (row[j] - moments[j].min) / (moments[j].max - moments[j].min); break;
      case Normalization::Standard: z = (row[j] - moments[j].mean) / moments[j].stddev; break;
      case Normalization::Quantile: z = ecdfs[j].p_value(row[j]); break;
    }
    switch (agg) {
      case Aggregation::Mean: acc += z; break;
      case Aggregation::Min: acc = std::min(acc, z); break;
      case Aggregation::Max: acc = std::max(acc, z); break;
    }
  }
  return agg == Aggregation::Mean ? acc / static_cast<double>(row.size()) : acc;
}

// ---------------------------------------------------------------------------
// Brown: Fisher's statistic under correlation modelled as c * chi2(k').

struct BrownParams {
  double c = 1.0;
  double k_prime = 2.0;

  // Parameters that make the correction a no-op for k independent p-values.
  static BrownParams independent(std::size_t k) { return {1.0, 2.0 * static_cast<double>(k)}; }

  void validate() const {
    if (!(c > 0.0) || !std::isfinite(c) || !(k_prime > 0.0) || !std::isfinite(k_prime))
      throw DataError("brown parameters must be finite and positive");
  }
  bool operator==(const BrownParams&) const = default;
};

// Moment matching with the 1/r population variance.
inline BrownParams fit_brown(std::span<const double> fisher_stats) {
  if (fisher_stats.size() < 2) throw DataError("fit_brown: needs at least 2 calibration statistics");
  const double r = static_cast<double>(fisher_stats.size());
  const double mean = std::accumulate(fisher_stats.begin(), fisher_stats.end(), 0.0) / r;
  double ss = 0.0;
  for (double s : fisher_stats) ss += (s - mean) * (s - mean);
  const double var = ss / r;
  if (!(var > 0.0) || !(mean > 0.0)) throw DegenerateError("fit_brown: calibration statistics have zero variance");
  BrownParams b{var / (2.0 * mean), 2.0 * mean * mean / var};
  b.validate();
  return b;
}

// Upper tail of c * chi2(k') at the observed statistic: large for ID-like samples,
// small for shifted ones.
inline double brown_confidence(const BrownParams& b, double fisher_stat) {
  if (!(fisher_stat >= 0.0)) throw DomainError("brown_confidence: statistic must be >= 0");
  return clamp_probability(chi2_sf(fisher_stat / b.c, b.k_prime));
}

// Fisher statistic above which a sample is flagged at in-distribution acceptance rate alpha.
inline double brown_threshold(const BrownParams& b, double alpha) { return b.c * chi2_inv_cdf(alpha, b.k_prime); }

// ---------------------------------------------------------------------------
// Hartung: Stouffer's sum rescaled for equicorrelated probits.

struct HartungParams {
  double rho_hat = 0.0;
  std::vector<double> weights;

  static double rho_lower_bound(std::size_t k) { return -1.0 / (static_cast<double>(k) - 1.0) + 1e-6; }
  static double rho_upper_bound() { return 1.0 - 1e-6; }

  double denominator() const {
    double sw = 0.0, sw2 = 0.0;
    for (double w : weights) {
      sw += w;
      sw2 += w * w;
    }
    return std::sqrt((1.0 - rho_hat) * sw2 + rho_hat * sw * sw);
  }

  void validate(std::size_t k) const {
    if (weights.size() != k) throw DataError("hartung parameters: weight count does not match detector count");
    if (!std::isfinite(rho_hat)) throw DataError("hartung parameters: non-finite rho");
    double sw = 0.0;
    for (double w : weights) {
      if (!std::isfinite(w)) throw DataError("hartung parameters: non-finite weight");
      sw += w;
    }
    if (sw == 0.0) throw DataError("hartung parameters: weights sum to zero");
    const double d = denominator();
    if (!(d > 0.0) || !std::isfinite(d)) throw DataError("hartung parameters: non-positive denominator");
  }
  bool operator==(const HartungParams&) const = default;
};

// rho = 1 - mean over rows of the (k-1)-divisor variance of the row's probits, clamped so
// the Hartung denominator stays positive. `probits` is row-major with `k` columns.
inline HartungParams fit_hartung(std::span<const double> probits, std::size_t k) {
  if (k < 2) throw DataError("fit_hartung: needs at least 2 detectors");
  if (probits.size() % k != 0) throw DataError("fit_hartung: matrix is not rectangular");
  const std::size_t n = probits.size() / k;
  if (n < 2) throw DataError("fit_hartung: needs at least 2 rows");
  double mean_var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = probits.subspan(i * k, k);
    const double m = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(k);
    double ss = 0.0;
    for (double z : row) ss += (z - m) * (z - m);
    mean_var += ss / static_cast<double>(k - 1);
  }
  mean_var /= static_cast<double>(n);
  HartungParams h;
  h.rho_hat = std::clamp(1.0 - mean_var, HartungParams::rho_lower_bound(k), HartungParams::rho_upper_bound());
  h.weights.assign(k, 1.0);
  return h;
}

inline HartungParams fit_hartung(const PValueMatrix& p) {
  std::vector<double> z;
  z.reserve(p.rows() * p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (double v : p.row(i)) z.push_back(probit(v));
  return fit_hartung(z, p.cols());
}

inline double hartung_stat(const HartungParams& h, std::span<const double> p) {
  detail::require_open_unit(p, "hartung_stat");
  if (p.size() != h.weights.size()) throw DataError("hartung_stat: p-value count does not match weights");
  double num = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) num += h.weights[i] * probit(p[i]);
  return num / h.denominator();
}

// ---------------------------------------------------------------------------
// Calibration

class Calibration {
 public:
  static constexpr int kFormatVersion = 1;

  Calibration(std::vector<Ecdf> ecdfs, CombinerKind kind, std::optional<BrownParams> brown,
              std::optional<HartungParams> hartung, std::size_t r,
              Normalization baseline_norm = Normalization::Standard)
      : ecdfs_(std::move(ecdfs)),
        kind_(kind),
        brown_(std::move(brown)),
        hartung_(std::move(hartung)),
        r_(r),
        baseline_norm_(baseline_norm) {
    if (ecdfs_.empty()) throw DataError("calibration: no detectors");
    std::vector<std::string> names;
    for (const auto& e : ecdfs_) names.push_back(e.name());
    ScoreMatrix{names};  // name uniqueness check
    names_ = std::move(names);
    const bool combining = ecdfs_.size() >= 2;
    if (brown_.has_value() != (combining && kind_ == CombinerKind::Fisher))
      throw DataError("calibration: brown parameters must be present exactly for fisher with k >= 2");
    if (hartung_.has_value() != (combining && kind_ == CombinerKind::Stouffer))
      throw DataError("calibration: hartung parameters must be present exactly for stouffer with k >= 2");
    if (brown_) brown_->validate();
    if (hartung_) hartung_->validate(ecdfs_.size());
    if (r_ < 2) throw DataError("calibration: r must be >= 2");
    for (const auto& e : ecdfs_) moments_.push_back(detector_moments(e));
    if (is_baseline() && combining) check_normalizable(moments_, baseline_norm_);
  }

  const std::vector<Ecdf>& ecdfs() const { return ecdfs_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t k() const { return ecdfs_.size(); }
  CombinerKind kind() const { return kind_; }
  const std::optional<BrownParams>& brown() const { return brown_; }
  const std::optional<HartungParams>& hartung() const { return hartung_; }
  std::size_t r() const { return r_; }
  int format_version() const { return kFormatVersion; }
  Normalization baseline_normalization() const { return baseline_norm_; }
  const std::vector<DetectorMoments>& moments() const { return moments_; }

  bool is_baseline() const {
    return kind_ == CombinerKind::MeanScore || kind_ == CombinerKind::MinScore || kind_ == CombinerKind::MaxScore;
  }

  bool operator==(const Calibration& o) const {
    return ecdfs_ == o.ecdfs_ && kind_ == o.kind_ && brown_ == o.brown_ && hartung_ == o.hartung_ && r_ == o.r_ &&
           baseline_norm_ == o.baseline_norm_;
  }

 private:
  std::vector<Ecdf> ecdfs_;
  CombinerKind kind_;
  std::optional<BrownParams> brown_;
  std::optional<HartungParams> hartung_;
  std::size_t r_;
  Normalization baseline_norm_;
  std::vector<std::string> names_;
  std::vector<DetectorMoments> moments_;
};

struct CalibrateOptions {
  Normalization baseline_norm = Normalization::Standard;
  std::function<void(const std::string&)> warn = [](const std::string& msg) { std::clog << "warning: " << msg << '\n'; };
};

// Ecdfs come from `ecdf_split`; Brown/Hartung parameters are fitted on the p-values of
// `moments_split` against those ecdfs. calibrate() passes the same matrix for both.
inline Calibration calibrate_two_split(const ScoreMatrix& ecdf_split, const ScoreMatrix& moments_split,
                                       CombinerKind kind, const CalibrateOptions& opts = {}) {
  if (ecdf_split.cols() == 0) throw DataError("calibrate: score matrix has no detector columns");
  const std::size_t r = ecdf_split.rows();
  if (r < 100 && opts.warn)
    opts.warn("calibrating on " + std::to_string(r) + " rows; at least 100 are recommended");

  std::vector<Ecdf> ecdfs;
  ecdfs.reserve(ecdf_split.cols());
  for (std::size_t j = 0; j < ecdf_split.cols(); ++j)
    ecdfs.push_back(Ecdf::fit(ecdf_split.column(j), ecdf_split.names()[j]));

  std::optional<BrownParams> brown;
  std::optional<HartungParams> hartung;
  if (ecdfs.size() >= 2 && (kind == CombinerKind::Fisher || kind == CombinerKind::Stouffer)) {
    const PValueMatrix p = p_value_matrix(ecdfs, moments_split.aligned_to(ecdf_split.names()));
    if (kind == CombinerKind::Fisher) {
      std::vector<double> stats;
      stats.reserve(p.rows());
      for (std::size_t i = 0; i < p.rows(); ++i) stats.push_back(fisher_stat(p.row(i)));
      brown = fit_brown(stats);
    } else {
      hartung = fit_hartung(p);
    }
  }
  return Calibration(std::move(ecdfs), kind, std::move(brown), std::move(hartung), r, opts.baseline_norm);
}

inline Calibration calibrate(const ScoreMatrix& scores, CombinerKind kind, const CalibrateOptions& opts = {}) {
  return calibrate_two_split(scores, scores, kind, opts);
}

namespace detail {

inline std::vector<double> row_p_values(const Calibration& cal, std::span<const double> row) {
  if (row.size() != cal.k())
    throw DataError("score row has " + std::to_string(row.size()) + " values but calibration has " +
                    std::to_string(cal.k()) + " detectors");
  std::vector<double> p(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) p[j] = cal.ecdfs()[j].p_value(row[j]);
  return p;
}

inline Aggregation baseline_aggregation(CombinerKind kind) {
  return kind == CombinerKind::MinScore ? Aggregation::Min
         : kind == CombinerKind::MaxScore ? Aggregation::Max
                                          : Aggregation::Mean;
}

}  // namespace detail

// The calibrated kind's raw statistic, in its native orientation (see statistic_orientation).
// Stouffer reports the Hartung-corrected statistic; k = 1 reports the single p-value.
inline double combined_statistic(const Calibration& cal, std::span<const double> row) {
  if (cal.is_baseline() && cal.k() >= 2)
    return baseline_combine(row, cal.baseline_normalization(), detail::baseline_aggregation(cal.kind()),
                            cal.moments(), cal.ecdfs());
  const auto p = detail::row_p_values(cal, row);
  if (cal.k() == 1) return p.front();
  switch (cal.kind()) {
    case CombinerKind::Fisher: return fisher_stat(p);
    case CombinerKind::Stouffer: return hartung_stat(*cal.hartung(), p);
    case CombinerKind::Tippett: return *std::min_element(p.begin(), p.end());
    case CombinerKind::Wilkinson: return *std::max_element(p.begin(), p.end());
    case CombinerKind::Simes: return simes_stat(p);
    case CombinerKind::Edgington: return basic_stats(p).edgington;
    case CombinerKind::Pearson: return basic_stats(p).pearson;
    default: break;
  }
  throw std::logic_error("combined_statistic: unhandled combiner");
}

// Confidence-oriented combined score: low means shifted. Fisher and Stouffer map to calibrated
// probabilities through Brown's scaled chi-squared and Hartung's standard normal; Pearson's
// negated statistic goes through the chi2(2k) cdf; the remaining p-value combiners are used
// as-is; score baselines return the aggregated normalized score.
inline double combined_confidence(const Calibration& cal, std::span<const double> row) {
  const double stat = combined_statistic(cal, row);
  if (cal.k() == 1) return stat;
  switch (cal.kind()) {
    case CombinerKind::Fisher: return brown_confidence(*cal.brown(), stat);
    case CombinerKind::Stouffer: return std_normal_cdf(stat);
    case CombinerKind::Pearson: return clamp_probability(chi2_cdf(-stat, 2.0 * static_cast<double>(cal.k())));
    default: return stat;
  }
}

// Name-aligned confidences for every row of `scores`.
inline std::vector<double> combined_confidences(const Calibration& cal, const ScoreMatrix& scores) {
  const ScoreMatrix aligned = scores.aligned_to(cal.names());
  std::vector<double> out;
  out.reserve(aligned.rows());
  for (std::size_t i = 0; i < aligned.rows(); ++i) out.push_back(combined_confidence(cal, aligned.row(i)));
  return out;
}

// True when a shift is detected: the confidence falls below 1 - alpha, alpha being the
// desired in-distribution acceptance rate.
inline bool decide(const Calibration& cal, std::span<const double> row, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("decide: alpha must lie in (0,1)");
  return combined_confidence(cal, row) < 1.0 - alpha;
}

}  // namespace pvfuse
