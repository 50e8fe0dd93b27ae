#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "pvfuse/error.hpp"

namespace pvfuse {

// n x k matrix of raw detector scores, row-major, with one name per detector column.
// Rows may optionally carry string ids which are passed through to outputs.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;

  explicit ScoreMatrix(std::vector<std::string> names) : names_(std::move(names)) { check_names(); }

  ScoreMatrix(std::vector<std::string> names, std::vector<double> values)
      : names_(std::move(names)), values_(std::move(values)) {
    check_names();
    if (names_.empty() && !values_.empty()) throw DataError("score matrix: values without columns");
    if (!names_.empty() && values_.size() % names_.size() != 0)
      throw DataError("score matrix: value count is not a multiple of the column count");
    for (double v : values_)
      if (!std::isfinite(v)) throw DataError("score matrix: non-finite value");
  }

  std::size_t rows() const { return names_.empty() ? 0 : values_.size() / names_.size(); }
  std::size_t cols() const { return names_.size(); }
  bool empty() const { return rows() == 0; }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<std::string>& row_ids() const { return row_ids_; }
  bool has_row_ids() const { return !row_ids_.empty(); }

  std::span<const double> row(std::size_t i) const { return {values_.data() + i * cols(), cols()}; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols() + j]; }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> out;
    out.reserve(rows());
    for (std::size_t i = 0; i < rows(); ++i) out.push_back((*this)(i, j));
    return out;
  }

  void append_row(std::span<const double> row) {
    if (row.size() != cols()) throw DataError("score matrix: row width " + std::to_string(row.size()) +
                                              " does not match " + std::to_string(cols()) + " columns");
    for (double v : row)
      if (!std::isfinite(v)) throw DataError("score matrix: non-finite value");
    values_.insert(values_.end(), row.begin(), row.end());
  }

  void set_row_ids(std::vector<std::string> ids) {
    if (!ids.empty() && ids.size() != rows()) throw DataError("score matrix: row id count does not match row count");
    row_ids_ = std::move(ids);
  }

  std::size_t column_index(std::string_view name) const {
    for (std::size_t j = 0; j < names_.size(); ++j)
      if (names_[j] == name) return j;
    throw DataError("score matrix: no column named '" + std::string(name) + "'");
  }

  ScoreMatrix select_columns(std::span<const std::size_t> columns) const {
    std::vector<std::string> names;
    for (std::size_t j : columns) {
      if (j >= cols()) throw DataError("score matrix: column index out of range");
      names.push_back(names_[j]);
    }
    std::vector<double> values;
    values.reserve(rows() * columns.size());
    for (std::size_t i = 0; i < rows(); ++i)
      for (std::size_t j : columns) values.push_back((*this)(i, j));
    ScoreMatrix out(std::move(names), std::move(values));
    out.row_ids_ = row_ids_;
    return out;
  }

  ScoreMatrix select_rows(std::size_t first, std::size_t count) const {
    if (first + count > rows()) throw DataError("score matrix: row range out of bounds");
    std::vector<double> values(values_.begin() + static_cast<std::ptrdiff_t>(first * cols()),
                               values_.begin() + static_cast<std::ptrdiff_t>((first + count) * cols()));
    ScoreMatrix out(names_, std::move(values));
    if (has_row_ids())
      out.row_ids_.assign(row_ids_.begin() + static_cast<std::ptrdiff_t>(first),
                          row_ids_.begin() + static_cast<std::ptrdiff_t>(first + count));
    return out;
  }

  // Reorders columns to match `names`; extra columns are dropped, missing ones are an error.
  ScoreMatrix aligned_to(const std::vector<std::string>& names) const {
    if (names == names_) return *this;
    std::vector<std::size_t> idx;
    idx.reserve(names.size());
    for (const auto& n : names) idx.push_back(column_index(n));
    return select_columns(idx);
  }

 private:
  void check_names() const {
    std::unordered_set<std::string_view> seen;
    for (const auto& n : names_) {
      if (n.empty()) throw DataError("score matrix: empty detector name");
      if (!seen.insert(n).second) throw DataError("score matrix: duplicate detector name '" + n + "'");
    }
  }

  std::vector<std::string> names_;
  std::vector<double> values_;
  std::vector<std::string> row_ids_;
};

}  // namespace pvfuse
