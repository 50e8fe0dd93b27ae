#pragma once

// Threshold-free evaluation of ID-vs-shift separation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pvfuse/error.hpp"

namespace pvfuse {

enum class Orientation { HigherIsID, HigherIsShift };

enum class Label : std::uint8_t { ID, Shift };

struct LabeledScores {
  std::vector<double> scores;
  std::vector<Label> labels;
  Orientation orientation = Orientation::HigherIsID;

  static LabeledScores from_groups(std::span<const double> id_scores, std::span<const double> shift_scores,
                                   Orientation orientation) {
    LabeledScores d;
    d.orientation = orientation;
    d.scores.assign(id_scores.begin(), id_scores.end());
    d.scores.insert(d.scores.end(), shift_scores.begin(), shift_scores.end());
    d.labels.assign(id_scores.size(), Label::ID);
    d.labels.insert(d.labels.end(), shift_scores.size(), Label::Shift);
    return d;
  }
};

namespace detail {

// Scores re-oriented so that higher always means more in-distribution.
inline std::pair<std::vector<double>, std::vector<double>> split_oriented(const LabeledScores& d) {
  if (d.scores.size() != d.labels.size()) throw DataError("labeled scores: length mismatch");
  std::vector<double> id, shift;
  for (std::size_t i = 0; i < d.scores.size(); ++i) {
    if (std::isnan(d.scores[i])) throw DataError("labeled scores: NaN score");
    const double s = d.orientation == Orientation::HigherIsID ? d.scores[i] : -d.scores[i];
    (d.labels[i] == Label::ID ? id : shift).push_back(s);
  }
  if (id.empty() || shift.empty()) throw DataError("labeled scores: both ID and shift samples are required");
  return {std::move(id), std::move(shift)};
}

}  // namespace detail

// Mann-Whitney estimate of P(ID score > shift score) + 0.5 P(tie), with average ranks for ties.
inline double auroc(const LabeledScores& d) {
  auto [id, shift] = detail::split_oriented(d);
  const std::size_t n1 = id.size(), n2 = shift.size(), n = n1 + n2;
  std::vector<std::pair<double, bool>> all;
  all.reserve(n);
  for (double s : id) all.emplace_back(s, true);
  for (double s : shift) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  // Sum of doubled ranks keeps every quantity integral until the final division.
  std::uint64_t id_rank_sum_x2 = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    std::size_t ids_in_group = 0;
    while (j < n && all[j].first == all[i].first) ids_in_group += all[j++].second ? 1 : 0;
    // ranks i+1..j, average (i+1+j)/2, doubled: i+1+j
    id_rank_sum_x2 += static_cast<std::uint64_t>(ids_in_group) * (i + 1 + j);
    i = j;
  }
  const std::uint64_t u_x2 = id_rank_sum_x2 - static_cast<std::uint64_t>(n1) * (n1 + 1);
  return (static_cast<double>(u_x2) / 2.0) / (static_cast<double>(n1) * static_cast<double>(n2));
}

// Fraction of shift samples accepted as ID at the most stringent threshold that still
// accepts at least `tpr_level` of the ID samples.
inline double fpr_at_tpr(const LabeledScores& d, double tpr_level) {
  if (!(tpr_level > 0.0 && tpr_level < 1.0)) throw DomainError("fpr_at_tpr: tpr_level must lie in (0,1)");
  auto [id, shift] = detail::split_oriented(d);
  std::sort(id.begin(), id.end(), std::greater<>());
  const double n1 = static_cast<double>(id.size());
  double threshold = id.back();
  for (std::size_t i = 0; i < id.size(); ++i) {
    std::size_t last = i;
    while (last + 1 < id.size() && id[last + 1] == id[i]) ++last;
    if (static_cast<double>(last + 1) / n1 >= tpr_level) {
      threshold = id[i];
      break;
    }
    i = last;
  }
  const auto passing = std::count_if(shift.begin(), shift.end(), [&](double s) { return s >= threshold; });
  return static_cast<double>(passing) / static_cast<double>(shift.size());
}

struct MethodResult {
  double auroc = 0.0;
  double fpr_at_tpr = 0.0;
  double tpr_level = 0.95;
};

// Results per method, in insertion order.
struct EvalReport {
  std::vector<std::pair<std::string, MethodResult>> methods;

  void add(std::string name, const MethodResult& r) { methods.emplace_back(std::move(name), r); }

  const MethodResult& at(const std::string& name) const {
    for (const auto& [n, r] : methods)
      if (n == name) return r;
    throw DataError("eval report: no method named '" + name + "'");
  }
};

inline MethodResult evaluate(const LabeledScores& d, double tpr_level = 0.95) {
  return {auroc(d), fpr_at_tpr(d, tpr_level), tpr_level};
}

}  // namespace pvfuse
