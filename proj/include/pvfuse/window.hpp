#pragma once

// Window-based two-sample shift detection and the sliding-window stream monitor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "pvfuse/combiners.hpp"
#include "pvfuse/error.hpp"
#include "pvfuse/score_matrix.hpp"

namespace pvfuse {

namespace detail {

inline void require_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) throw DataError("ks_two_sample: non-finite value");
}

// Merged sweep over two ascending samples; at each distinct value both ecdfs step past
// all of their ties before the gap is measured.
inline double ks_sorted(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double t = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= t) ++i;
    while (j < y.size() && y[j] <= t) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return d;
}

}  // namespace detail

// Exact two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
inline double ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DataError("ks_two_sample: both samples must be non-empty");
  detail::require_finite(a);
  detail::require_finite(b);
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  return detail::ks_sorted(x, y);
}

// Same statistic against a reference that is already sorted ascending; avoids re-sorting
// a large fixed reference for every test window.
inline double ks_against_sorted(std::span<const double> sorted_reference, std::span<const double> sample) {
  if (sorted_reference.empty() || sample.empty()) throw DataError("ks_two_sample: both samples must be non-empty");
  if (!std::is_sorted(sorted_reference.begin(), sorted_reference.end()))
    throw DataError("ks_against_sorted: reference is not sorted");
  detail::require_finite(sorted_reference);
  detail::require_finite(sample);
  std::vector<double> y(sample.begin(), sample.end());
  std::sort(y.begin(), y.end());
  return detail::ks_sorted(sorted_reference, y);
}

struct WindowConfig {
  std::size_t window_size = 32;
  std::size_t reference_size = 1000;
  double alpha = 0.95;
  std::size_t null_calibration_draws = 2000;
  std::uint64_t seed = 0;

  void validate() const {
    if (window_size < 1) throw DomainError("window config: window_size must be >= 1");
    if (reference_size < 2) throw DomainError("window config: reference_size must be >= 2");
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("window config: alpha must lie in (0,1)");
    if (null_calibration_draws < 100) throw DomainError("window config: null_calibration_draws must be >= 100");
  }
};

struct WindowVerdict {
  double ks_stat = 0.0;
  double threshold = 0.0;
  bool detected = false;
  std::size_t window_size = 0;
};

// Null KS threshold: B subsamples of a reference window (size r) and a disjoint test
// window (size m) from the in-distribution pool; returns the alpha-quantile of their KS
// statistics, so that ID windows are accepted at rate >= alpha.
inline double calibrate_window_threshold(const WindowConfig& cfg, std::span<const double> reference_scores) {
  cfg.validate();
  const std::size_t r = cfg.reference_size, m = cfg.window_size;
  if (reference_scores.size() < r + m)
    throw DataError("window threshold: need at least r + m = " + std::to_string(r + m) + " reference scores, got " +
                    std::to_string(reference_scores.size()));
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> pool(reference_scores.begin(), reference_scores.end());
  std::vector<double> null_ks;
  null_ks.reserve(cfg.null_calibration_draws);
  for (std::size_t b = 0; b < cfg.null_calibration_draws; ++b) {
    // partial Fisher-Yates: the first r + m slots become a uniform draw without replacement
    for (std::size_t i = 0; i < r + m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    null_ks.push_back(ks_two_sample(std::span(pool).first(r), std::span(pool).subspan(r, m)));
  }
  std::sort(null_ks.begin(), null_ks.end());
  const auto B = static_cast<double>(null_ks.size());
  auto idx = static_cast<std::size_t>(std::ceil(cfg.alpha * B));
  idx = std::clamp<std::size_t>(idx, 1, null_ks.size()) - 1;
  return null_ks[idx];
}

inline WindowVerdict window_verdict(std::span<const double> reference_conf, std::span<const double> test_conf,
                                    double threshold) {
  WindowVerdict v;
  v.ks_stat = ks_two_sample(reference_conf, test_conf);
  v.threshold = threshold;
  v.detected = v.ks_stat > threshold;
  v.window_size = test_conf.size();
  return v;
}

// Scores both windows through the calibration, then compares their KS distance to `threshold`.
inline WindowVerdict detect_window(const Calibration& cal, const WindowConfig& cfg, const ScoreMatrix& reference,
                                   const ScoreMatrix& test_window, double threshold) {
  cfg.validate();
  if (reference.rows() != cfg.reference_size)
    throw DataError("detect_window: reference has " + std::to_string(reference.rows()) + " rows, expected " +
                    std::to_string(cfg.reference_size));
  if (test_window.rows() != cfg.window_size)
    throw DataError("detect_window: test window has " + std::to_string(test_window.rows()) + " rows, expected " +
                    std::to_string(cfg.window_size));
  return window_verdict(combined_confidences(cal, reference), combined_confidences(cal, test_window), threshold);
}

// Fixed reference window plus bootstrap threshold, both taken from an in-distribution pool.
// The reference window is the first r rows of the pool and is never updated.
// `cal` must outlive the detector.
class WindowDetector {
 public:
  WindowDetector(const Calibration& cal, WindowConfig cfg, const ScoreMatrix& pool) : cal_(&cal), cfg_(cfg) {
    cfg_.validate();
    const auto conf = combined_confidences(cal, pool);
    threshold_ = calibrate_window_threshold(cfg_, conf);
    reference_.assign(conf.begin(), conf.begin() + static_cast<std::ptrdiff_t>(cfg_.reference_size));
    std::sort(reference_.begin(), reference_.end());
  }

  double threshold() const { return threshold_; }
  const WindowConfig& config() const { return cfg_; }

  WindowVerdict detect(const ScoreMatrix& test_window) const {
    if (test_window.rows() != cfg_.window_size)
      throw DataError("detect_window: test window has " + std::to_string(test_window.rows()) + " rows, expected " +
                      std::to_string(cfg_.window_size));
    WindowVerdict v;
    v.ks_stat = ks_against_sorted(reference_, combined_confidences(*cal_, test_window));
    v.threshold = threshold_;
    v.detected = v.ks_stat > threshold_;
    v.window_size = test_window.rows();
    return v;
  }

 private:
  const Calibration* cal_;
  WindowConfig cfg_;
  double threshold_ = 0.0;
  std::vector<double> reference_;  // sorted
};

// Ring buffer of the last m confidences with a running sum. Single writer.
class MonitorState {
 public:
  static constexpr std::uint64_t kRecomputeEvery = 4096;

  explicit MonitorState(std::size_t window) : window_(window) {
    if (window == 0) throw DomainError("monitor: window must be >= 1");
    buffer_.reserve(window);
  }

  // Emits the mean of the last m values once m values have been seen.
  std::optional<double> push(double confidence) {
    if (!std::isfinite(confidence)) throw DataError("monitor: non-finite confidence");
    if (buffer_.size() < window_) {
      buffer_.push_back(confidence);
    } else {
      sum_ -= buffer_[head_];
      buffer_[head_] = confidence;
      head_ = (head_ + 1) % window_;
    }
    sum_ += confidence;
    ++seen_;
    if (seen_ % kRecomputeEvery == 0) {
      sum_ = 0.0;
      for (double v : buffer_) sum_ += v;
    }
    if (buffer_.size() < window_) return std::nullopt;
    return sum_ / static_cast<double>(window_);
  }

  std::size_t window() const { return window_; }
  std::uint64_t samples_seen() const { return seen_; }
  double running_sum() const { return sum_; }
  const std::vector<double>& buffer() const { return buffer_; }

 private:
  std::size_t window_;
  std::vector<double> buffer_;
  std::size_t head_ = 0;
  double sum_ = 0.0;
  std::uint64_t seen_ = 0;
};

inline std::optional<double> monitor_push(MonitorState& state, double confidence) { return state.push(confidence); }

// Sample Pearson correlation coefficient.
inline double monitor_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("correlation: length mismatch");
  if (x.size() < 2) throw DataError("correlation: needs at least 2 pairs");
  auto constant = [](std::span<const double> v) {
    auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *lo == *hi;
  };
  if (constant(x) || constant(y)) throw DegenerateError("correlation: zero variance input");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw DegenerateError("correlation: zero variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace pvfuse
