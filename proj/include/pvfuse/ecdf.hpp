#pragma once

// Quantile normalization: empirical CDFs fitted on held-out in-distribution scores,
// used to turn raw detector scores into p-values.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pvfuse/error.hpp"
#include "pvfuse/score_matrix.hpp"

namespace pvfuse {

class Ecdf {
 public:
  // Sorts a copy of `reference`. Needs at least two finite values.
  static Ecdf fit(std::span<const double> reference, std::string name) {
    std::vector<double> sorted(reference.begin(), reference.end());
    check_values(sorted, name);
    std::sort(sorted.begin(), sorted.end());
    return Ecdf(std::move(sorted), std::move(name));
  }

  // Adopts an already sorted reference array (e.g. read back from a calibration file).
  static Ecdf from_sorted(std::vector<double> sorted, std::string name) {
    check_values(sorted, name);
    if (!std::is_sorted(sorted.begin(), sorted.end()))
      throw DataError("ecdf '" + name + "': reference array is not sorted");
    return Ecdf(std::move(sorted), std::move(name));
  }

  const std::vector<double>& sorted_reference() const { return sorted_; }
  const std::string& name() const { return name_; }
  std::size_t size() const { return sorted_.size(); }

  // Number of reference values <= s, ties counted with multiplicity.
  std::size_t count_le(double s) const {
    return static_cast<std::size_t>(std::upper_bound(sorted_.begin(), sorted_.end(), s) - sorted_.begin());
  }

  // Plain right-continuous empirical CDF, count / r.
  double cdf(double s) const { return static_cast<double>(count_le(s)) / static_cast<double>(size()); }

  // Add-one smoothed CDF, (count + 1) / (r + 2); always strictly inside (0, 1).
  double p_value(double s) const {
    if (!std::isfinite(s)) throw DataError("ecdf '" + name_ + "': non-finite score");
    return static_cast<double>(count_le(s) + 1) / static_cast<double>(size() + 2);
  }

  bool operator==(const Ecdf&) const = default;

 private:
  Ecdf(std::vector<double> sorted, std::string name) : sorted_(std::move(sorted)), name_(std::move(name)) {}

  static void check_values(const std::vector<double>& v, const std::string& name) {
    if (v.size() < 2) throw DataError("ecdf '" + name + "': needs at least 2 reference values");
    for (double x : v)
      if (!std::isfinite(x)) throw DataError("ecdf '" + name + "': non-finite reference value");
  }

  std::vector<double> sorted_;
  std::string name_;
};

inline Ecdf fit_ecdf(std::span<const double> reference, std::string name) {
  return Ecdf::fit(reference, std::move(name));
}

inline double p_value(const Ecdf& e, double s) { return e.p_value(s); }

struct PValueVector {
  std::vector<double> values;
  std::vector<std::string> detector_names;
};

// Row-major n x k block of p-values; row(i) is the p-value vector of sample i.
class PValueMatrix {
 public:
  PValueMatrix(std::vector<std::string> names, std::vector<double> values)
      : names_(std::move(names)), values_(std::move(values)) {}

  std::size_t rows() const { return names_.empty() ? 0 : values_.size() / names_.size(); }
  std::size_t cols() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::span<const double> row(std::size_t i) const { return {values_.data() + i * cols(), cols()}; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols() + j]; }
  PValueVector vector(std::size_t i) const {
    auto r = row(i);
    return {std::vector<double>(r.begin(), r.end()), names_};
  }

 private:
  std::vector<std::string> names_;
  std::vector<double> values_;
};

namespace detail {

inline void check_alignment(std::span<const Ecdf> ecdfs, const std::vector<std::string>& names) {
  if (ecdfs.size() != names.size())
    throw DataError("p-values: " + std::to_string(names.size()) + " score columns but " +
                    std::to_string(ecdfs.size()) + " ecdfs");
  for (std::size_t j = 0; j < ecdfs.size(); ++j)
    if (ecdfs[j].name() != names[j])
      throw DataError("p-values: column " + std::to_string(j) + " is '" + names[j] + "' but ecdf is '" +
                      ecdfs[j].name() + "'");
}

}  // namespace detail

inline PValueVector p_value_row(std::span<const Ecdf> ecdfs, std::span<const double> row) {
  if (row.size() != ecdfs.size()) throw DataError("p-values: row width does not match ecdf count");
  PValueVector out;
  out.values.reserve(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    out.values.push_back(ecdfs[j].p_value(row[j]));
    out.detector_names.push_back(ecdfs[j].name());
  }
  return out;
}

inline PValueMatrix p_value_matrix(std::span<const Ecdf> ecdfs, const ScoreMatrix& scores) {
  detail::check_alignment(ecdfs, scores.names());
  std::vector<double> values;
  values.reserve(scores.rows() * scores.cols());
  for (std::size_t i = 0; i < scores.rows(); ++i)
    for (std::size_t j = 0; j < scores.cols(); ++j) values.push_back(ecdfs[j].p_value(scores(i, j)));
  return {scores.names(), std::move(values)};
}

}  // namespace pvfuse
