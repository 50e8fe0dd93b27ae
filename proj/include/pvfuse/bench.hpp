#pragma once

// Synthetic detector scores and experiment drivers: copula-correlated scores, beta-mixture
// windows, progressive drift streams and exhaustive detector-subset evaluation.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "pvfuse/combiners.hpp"
#include "pvfuse/error.hpp"
#include "pvfuse/metrics.hpp"
#include "pvfuse/numerics.hpp"
#include "pvfuse/score_matrix.hpp"
#include "pvfuse/window.hpp"

namespace pvfuse {

struct NormalShape {
  double mean = 0.0;
  double stddev = 1.0;
};

// loc + scale * Gamma(shape, 1)
struct ShiftedGammaShape {
  double shape = 2.0;
  double scale = 1.0;
  double loc = 0.0;
};

// Two-component normal mixture; `mix` is the weight of the second component.
struct BimodalShape {
  double mean1 = -1.0;
  double stddev1 = 0.5;
  double mean2 = 1.5;
  double stddev2 = 0.7;
  double mix = 0.4;
};

using ScoreShape = std::variant<NormalShape, ShiftedGammaShape, BimodalShape>;

inline void validate_shape(const ScoreShape& shape) {
  auto bad = [](const char* what) { throw DomainError(std::string("invalid score shape: ") + what); };
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, NormalShape>) {
          if (!(s.stddev > 0.0) || !std::isfinite(s.mean)) bad("normal needs finite mean and stddev > 0");
        } else if constexpr (std::is_same_v<T, ShiftedGammaShape>) {
          if (!(s.shape > 0.0) || !(s.scale > 0.0) || !std::isfinite(s.loc)) bad("gamma needs shape, scale > 0");
        } else {
          if (!(s.stddev1 > 0.0) || !(s.stddev2 > 0.0) || !(s.mix >= 0.0 && s.mix <= 1.0))
            bad("bimodal needs positive stddevs and mix in [0,1]");
        }
      },
      shape);
}

// Standard deviation of the shape's distribution.
inline double shape_spread(const ScoreShape& shape) {
  return std::visit(
      [](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, NormalShape>) {
          return s.stddev;
        } else if constexpr (std::is_same_v<T, ShiftedGammaShape>) {
          return std::sqrt(s.shape) * s.scale;
        } else {
          const double w1 = 1.0 - s.mix, w2 = s.mix;
          const double mean = w1 * s.mean1 + w2 * s.mean2;
          const double second = w1 * (s.stddev1 * s.stddev1 + s.mean1 * s.mean1) +
                                w2 * (s.stddev2 * s.stddev2 + s.mean2 * s.mean2);
          return std::sqrt(second - mean * mean);
        }
      },
      shape);
}

// Maps a standard-normal latent value through Phi and then the shape's inverse cdf.
inline double shape_from_latent(const ScoreShape& shape, double z) {
  return std::visit(
      [z](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, NormalShape>) {
          return s.mean + s.stddev * z;
        } else if constexpr (std::is_same_v<T, ShiftedGammaShape>) {
          // Boost's inverse here: the generator's hot loop, where our bracketing solver is ~5x slower.
          return s.loc + s.scale * boost::math::gamma_p_inv(s.shape, std_normal_cdf(z));
        } else {
          const double u = std_normal_cdf(z);
          auto cdf = [&s](double x) {
            return (1.0 - s.mix) * 0.5 * std::erfc(-(x - s.mean1) / (s.stddev1 * std::numbers::sqrt2)) +
                   s.mix * 0.5 * std::erfc(-(x - s.mean2) / (s.stddev2 * std::numbers::sqrt2));
          };
          auto pdf = [&s](double x) {
            return (1.0 - s.mix) * std_normal_pdf((x - s.mean1) / s.stddev1) / s.stddev1 +
                   s.mix * std_normal_pdf((x - s.mean2) / s.stddev2) / s.stddev2;
          };
          const double lo = std::min(s.mean1 - 40.0 * s.stddev1, s.mean2 - 40.0 * s.stddev2);
          const double hi = std::max(s.mean1 + 40.0 * s.stddev1, s.mean2 + 40.0 * s.stddev2);
          return detail::solve_increasing(cdf, pdf, u, lo, hi, ToleranceConfig{});
        }
      },
      shape);
}

struct SyntheticConfig {
  std::size_t k = 5;
  double rho = 0.0;
  std::vector<ScoreShape> id_shapes;
  std::vector<double> shift_offset;
  double beta = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) throw DomainError("synthetic config: k must be >= 1");
    if (id_shapes.size() != k || shift_offset.size() != k)
      throw DomainError("synthetic config: need one shape and one shift offset per detector");
    if (!(rho < 1.0) || (k > 1 && !(rho > -1.0 / (static_cast<double>(k) - 1.0))) || (k == 1 && rho < 0.0))
      throw DomainError("synthetic config: rho does not give a positive definite equicorrelation matrix");
    if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("synthetic config: beta must lie in [0,1]");
    for (const auto& s : id_shapes) validate_shape(s);
    for (double o : shift_offset)
      if (!std::isfinite(o)) throw DomainError("synthetic config: non-finite shift offset");
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (std::size_t j = 0; j < k; ++j) out.push_back("det" + std::to_string(j + 1));
    return out;
  }

  // k standard-normal detectors; shifted samples move down by `offset`.
  static SyntheticConfig normal(std::size_t k, double rho, double offset, std::uint64_t seed = 0) {
    SyntheticConfig c;
    c.k = k;
    c.rho = rho;
    c.id_shapes.assign(k, NormalShape{});
    c.shift_offset.assign(k, offset);
    c.seed = seed;
    return c;
  }

  // Cycles through a normal, a right-skewed gamma and a bimodal mixture; each detector's
  // shift is `separation` times its own standard deviation.
  static SyntheticConfig mixed(std::size_t k, double rho, double separation, std::uint64_t seed = 0) {
    const std::array<ScoreShape, 3> cycle = {NormalShape{0.0, 1.0}, ShiftedGammaShape{2.0, 1.0, -2.0},
                                             BimodalShape{}};
    SyntheticConfig c;
    c.k = k;
    c.rho = rho;
    c.seed = seed;
    for (std::size_t j = 0; j < k; ++j) {
      c.id_shapes.push_back(cycle[j % cycle.size()]);
      c.shift_offset.push_back(separation * shape_spread(c.id_shapes.back()));
    }
    return c;
  }
};

// Equicorrelated Gaussian copula: z_i = a e_i + c sum_j e_j has unit variance and pairwise
// correlation rho.
class ScoreGenerator {
 public:
  explicit ScoreGenerator(SyntheticConfig cfg) : ScoreGenerator(cfg, cfg.seed) {}

  ScoreGenerator(SyntheticConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(seed) {
    cfg_.validate();
    const double k = static_cast<double>(cfg_.k);
    own_ = std::sqrt(1.0 - cfg_.rho);
    common_ = (-own_ + std::sqrt(1.0 - cfg_.rho + k * cfg_.rho)) / k;
    names_ = cfg_.names();
    latent_.resize(cfg_.k);
  }

  const SyntheticConfig& config() const { return cfg_; }

  // `intensity` scales the shift offsets of shifted rows.
  void draw_row(bool shifted, double intensity, std::span<double> out) {
    double sum = 0.0;
    for (auto& e : latent_) {
      e = normal_(rng_);
      sum += e;
    }
    for (std::size_t j = 0; j < cfg_.k; ++j) {
      const double z = own_ * latent_[j] + common_ * sum;
      out[j] = shape_from_latent(cfg_.id_shapes[j], z);
      if (shifted) out[j] -= intensity * cfg_.shift_offset[j];
    }
  }

  ScoreMatrix draw(std::size_t n, bool shifted, double intensity = 1.0) {
    std::vector<double> values(n * cfg_.k);
    for (std::size_t i = 0; i < n; ++i) draw_row(shifted, intensity, std::span(values).subspan(i * cfg_.k, cfg_.k));
    return ScoreMatrix(names_, std::move(values));
  }

  // Each row independently shifted with probability beta.
  ScoreMatrix mixture(std::size_t m, double beta, std::vector<bool>* shifted_rows = nullptr) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("mixture: beta must lie in [0,1]");
    std::bernoulli_distribution coin(beta);
    std::vector<double> values(m * cfg_.k);
    if (shifted_rows) shifted_rows->clear();
    for (std::size_t i = 0; i < m; ++i) {
      const bool shifted = coin(rng_);
      if (shifted_rows) shifted_rows->push_back(shifted);
      draw_row(shifted, 1.0, std::span(values).subspan(i * cfg_.k, cfg_.k));
    }
    return ScoreMatrix(names_, std::move(values));
  }

  ScoreMatrix mixture(std::size_t m) { return mixture(m, cfg_.beta); }

 private:
  SyntheticConfig cfg_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
  double own_ = 1.0;
  double common_ = 0.0;
  std::vector<std::string> names_;
  std::vector<double> latent_;
};

inline ScoreMatrix gen_scores(const SyntheticConfig& cfg, std::size_t n, bool shifted) {
  if (n < 1) throw DomainError("gen_scores: n must be >= 1");
  return ScoreGenerator(cfg).draw(n, shifted);
}

inline ScoreMatrix gen_mixture_window(const SyntheticConfig& cfg, std::size_t m) {
  if (m < 1) throw DomainError("gen_mixture_window: m must be >= 1");
  return ScoreGenerator(cfg).mixture(m);
}

// Per-cell seed, independent of iteration order.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32)};
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

struct SeedSummary {
  double mean = 0.0;
  double ci_half_width = 0.0;  // 1.96 standard errors across seeds
};

inline SeedSummary summarize_seeds(std::span<const double> values) {
  SeedSummary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.ci_half_width = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return s;
}

struct WindowGridCell {
  std::size_t window_size = 0;
  double beta = 0.0;
  SeedSummary auroc;
  std::vector<double> per_seed;
};

struct WindowGridOptions {
  std::size_t trials = 500;
  std::size_t seeds = 10;
  std::size_t reference_size = 1000;
};

// For every (m, beta): `trials` pure-ID windows and `trials` beta-mixture windows, each
// scored by its KS distance to a fixed ID reference window; reports the window-level AUROC
// (higher KS = shifted) averaged over seeds.
inline std::vector<WindowGridCell> run_window_grid(const Calibration& cal, const SyntheticConfig& cfg,
                                                   std::span<const std::size_t> window_sizes,
                                                   std::span<const double> betas, const WindowGridOptions& opts = {}) {
  if (opts.trials < 1 || opts.seeds < 1 || opts.reference_size < 2) throw DomainError("window grid: bad options");
  std::vector<WindowGridCell> grid;
  for (std::size_t mi = 0; mi < window_sizes.size(); ++mi) {
    const std::size_t m = window_sizes[mi];
    if (m < 1) throw DomainError("window grid: window sizes must be >= 1");
    for (std::size_t bi = 0; bi < betas.size(); ++bi) {
      WindowGridCell cell;
      cell.window_size = m;
      cell.beta = betas[bi];
      for (std::size_t s = 0; s < opts.seeds; ++s) {
        ScoreGenerator gen(cfg, derive_seed(cfg.seed, {m, bi, s}));
        auto reference = combined_confidences(cal, gen.draw(opts.reference_size, false));
        std::sort(reference.begin(), reference.end());
        std::vector<double> id_ks, mix_ks;
        for (std::size_t t = 0; t < opts.trials; ++t) {
          id_ks.push_back(ks_against_sorted(reference, combined_confidences(cal, gen.draw(m, false))));
          mix_ks.push_back(ks_against_sorted(reference, combined_confidences(cal, gen.mixture(m, betas[bi]))));
        }
        cell.per_seed.push_back(auroc(LabeledScores::from_groups(id_ks, mix_ks, Orientation::HigherIsShift)));
      }
      cell.auroc = summarize_seeds(cell.per_seed);
      grid.push_back(std::move(cell));
    }
  }
  return grid;
}

// Stream segments of increasing drift intensity; accuracy_map gives the (hidden) model
// accuracy at each intensity.
struct DriftSchedule {
  std::vector<std::size_t> segment_lengths;
  std::vector<double> intensities;
  std::function<double(double)> accuracy_map;

  std::size_t total() const { return std::accumulate(segment_lengths.begin(), segment_lengths.end(), std::size_t{0}); }

  void validate() const {
    if (segment_lengths.empty() || segment_lengths.size() != intensities.size())
      throw DomainError("drift schedule: need one intensity per segment");
    for (double v : intensities)
      if (!std::isfinite(v) || v < 0.0) throw DomainError("drift schedule: intensities must be finite and >= 0");
    if (!accuracy_map) throw DomainError("drift schedule: missing accuracy map");
  }

  // `segments` equal-length segments with intensities 0, 1, ..., segments-1 and accuracy
  // falling linearly from `base_accuracy` by `accuracy_drop` per intensity unit.
  static DriftSchedule linear(std::size_t segments, std::size_t length, double base_accuracy = 0.8,
                              double accuracy_drop = 0.1) {
    DriftSchedule d;
    for (std::size_t i = 0; i < segments; ++i) {
      d.segment_lengths.push_back(length);
      d.intensities.push_back(static_cast<double>(i));
    }
    d.accuracy_map = [base_accuracy, accuracy_drop](double intensity) {
      return std::clamp(base_accuracy - accuracy_drop * intensity, 0.0, 1.0);
    };
    return d;
  }
};

struct SequentialTrace {
  std::vector<std::size_t> timestamps;
  std::vector<double> moving_avgs;
  std::vector<double> accuracies;
  double correlation = 0.0;
};

// Streams the schedule through a window-m monitor of per-sample confidences and correlates
// the moving average with the scheduled accuracy. Throws DegenerateError when either series
// is constant.
inline SequentialTrace run_sequential(const Calibration& cal, const SyntheticConfig& cfg, const DriftSchedule& schedule,
                                      std::size_t m = 64) {
  schedule.validate();
  if (schedule.total() <= m) throw DomainError("run_sequential: schedule must be longer than the window");
  ScoreGenerator gen(cfg);
  MonitorState monitor(m);
  SequentialTrace trace;
  std::vector<double> row(cfg.k);
  std::vector<double> aligned(cal.k());
  std::vector<std::size_t> order;
  const auto names = cfg.names();
  for (const auto& n : cal.names()) {
    auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw DataError("run_sequential: calibration detector '" + n + "' not generated");
    order.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  std::size_t t = 0;
  for (std::size_t seg = 0; seg < schedule.segment_lengths.size(); ++seg) {
    const double intensity = schedule.intensities[seg];
    const double accuracy = schedule.accuracy_map(intensity);
    for (std::size_t i = 0; i < schedule.segment_lengths[seg]; ++i, ++t) {
      gen.draw_row(intensity > 0.0, intensity, row);
      for (std::size_t j = 0; j < order.size(); ++j) aligned[j] = row[order[j]];
      if (auto avg = monitor.push(combined_confidence(cal, aligned))) {
        trace.timestamps.push_back(t);
        trace.moving_avgs.push_back(*avg);
        trace.accuracies.push_back(accuracy);
      }
    }
  }
  trace.correlation = monitor_correlation(trace.moving_avgs, trace.accuracies);
  return trace;
}

// AUROC of the calibrated combined confidence, calibrating on `id` and scoring both `id`
// and `shift`.
inline double pipeline_auroc(const ScoreMatrix& id, const ScoreMatrix& shift, CombinerKind kind,
                             const CalibrateOptions& opts = {}) {
  const Calibration cal = calibrate(id, kind, opts);
  const auto id_conf = combined_confidences(cal, id);
  const auto shift_conf = combined_confidences(cal, shift);
  return auroc(LabeledScores::from_groups(id_conf, shift_conf, Orientation::HigherIsID));
}

struct SubsetScore {
  std::vector<std::size_t> columns;
  double auroc = 0.0;
};

struct SubsetSizeSummary {
  std::size_t size = 0;
  std::size_t count = 0;
  double best = 0.0;
  double average = 0.0;
  double worst = 0.0;
};

struct SubsetStudy {
  std::vector<SubsetScore> subsets;
  std::vector<SubsetSizeSummary> by_size;
};

inline constexpr std::size_t kMaxSubsetDetectors = 20;

// Every detector subset of size >= min_size, ordered by size then by column bitmask.
inline SubsetStudy enumerate_subsets(const ScoreMatrix& scores_id, const ScoreMatrix& scores_shift, CombinerKind kind,
                                     std::size_t min_size = 2, std::size_t max_k = kMaxSubsetDetectors) {
  const std::size_t k = scores_id.cols();
  if (k > std::min(max_k, kMaxSubsetDetectors))
    throw DomainError("enumerate_subsets: " + std::to_string(k) + " detectors exceeds the subset guard of " +
                      std::to_string(std::min(max_k, kMaxSubsetDetectors)));
  if (min_size < 1 || min_size > k) throw DomainError("enumerate_subsets: min_size must lie in [1, k]");
  const ScoreMatrix shift = scores_shift.aligned_to(scores_id.names());
  CalibrateOptions quiet;
  quiet.warn = nullptr;

  std::vector<std::uint32_t> masks;
  for (std::uint32_t mask = 1; mask < (1u << k); ++mask)
    if (static_cast<std::size_t>(std::popcount(mask)) >= min_size) masks.push_back(mask);
  std::stable_sort(masks.begin(), masks.end(),
                   [](std::uint32_t a, std::uint32_t b) { return std::popcount(a) < std::popcount(b); });

  SubsetStudy study;
  for (auto mask : masks) {
    SubsetScore s;
    for (std::size_t j = 0; j < k; ++j)
      if (mask & (1u << j)) s.columns.push_back(j);
    s.auroc = pipeline_auroc(scores_id.select_columns(s.columns), shift.select_columns(s.columns), kind, quiet);
    study.subsets.push_back(std::move(s));
  }
  for (std::size_t size = min_size; size <= k; ++size) {
    SubsetSizeSummary sum;
    sum.size = size;
    sum.best = -1.0;
    sum.worst = 2.0;
    double total = 0.0;
    for (const auto& s : study.subsets) {
      if (s.columns.size() != size) continue;
      ++sum.count;
      total += s.auroc;
      sum.best = std::max(sum.best, s.auroc);
      sum.worst = std::min(sum.worst, s.auroc);
    }
    sum.average = total / static_cast<double>(sum.count);
    study.by_size.push_back(sum);
  }
  return study;
}

}  // namespace pvfuse
