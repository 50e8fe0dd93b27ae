#pragma once

// Score-matrix text files, the checksummed calibration container, logit-derived score
// adapters and report serialization.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <unistd.h>

#include <boost/crc.hpp>
#include <nlohmann/json.hpp>

#include "pvfuse/combiners.hpp"
#include "pvfuse/ecdf.hpp"
#include "pvfuse/error.hpp"
#include "pvfuse/metrics.hpp"
#include "pvfuse/score_matrix.hpp"

namespace pvfuse {

// 17 significant digits, locale independent; parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  if (ec != std::errc{}) throw std::logic_error("format_double: buffer too small");
  return std::string(buf, end);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_decimal(std::string_view token, const std::string& where) {
  double v = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, v, std::chars_format::general);
  if (token.empty() || ec != std::errc{} || ptr != last)
    throw DataError(where + ": cannot parse '" + std::string(token) + "' as a decimal number");
  if (!std::isfinite(v)) throw DataError(where + ": non-finite value '" + std::string(token) + "'");
  return v;
}

}  // namespace detail

// Header row of detector names followed by comma-separated decimal rows. A first column
// named "id" is read as string row ids rather than scores.
inline ScoreMatrix parse_score_matrix(std::istream& in, const std::string& source = "<input>") {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> names;
  bool with_ids = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) break;
  }
  if (detail::trim(line).empty()) throw DataError(source + ": empty file, expected a header row");
  for (auto tok : detail::split_commas(line)) names.emplace_back(tok);
  if (!names.empty() && names.front() == "id") {
    with_ids = true;
    names.erase(names.begin());
  }
  if (names.empty()) throw DataError(source + ":" + std::to_string(line_no) + ": header has no detector columns");

  ScoreMatrix m = [&] {
    try {
      return ScoreMatrix(names);
    } catch (const DataError& e) {
      throw DataError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }();
  std::vector<double> values;
  std::vector<std::string> ids;
  std::vector<double> row(names.size());
  const std::size_t expected = names.size() + (with_ids ? 1 : 0);
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto tokens = detail::split_commas(line);
    if (tokens.size() != expected)
      throw DataError(where + ": expected " + std::to_string(expected) + " fields, got " +
                      std::to_string(tokens.size()));
    std::size_t offset = 0;
    if (with_ids) {
      ids.emplace_back(tokens[0]);
      offset = 1;
    }
    for (std::size_t j = 0; j < names.size(); ++j) row[j] = detail::parse_decimal(tokens[j + offset], where);
    values.insert(values.end(), row.begin(), row.end());
  }
  ScoreMatrix out(std::move(names), std::move(values));
  if (with_ids) out.set_row_ids(std::move(ids));
  return out;
}

inline ScoreMatrix load_score_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open score file '" + path.string() + "'");
  return parse_score_matrix(in, path.string());
}

inline std::string score_matrix_to_string(const ScoreMatrix& m) {
  std::string out;
  if (m.has_row_ids()) out += "id,";
  for (std::size_t j = 0; j < m.cols(); ++j) out += (j ? "," : "") + m.names()[j];
  out += '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (m.has_row_ids()) out += m.row_ids()[i] + ",";
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

// Writes to a sibling temporary file and renames it over `path`, so readers never observe
// a partially written file.
inline void atomic_write(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw DataError("failed writing '" + path.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw DataError("cannot move output into place at '" + path.string() + "'");
  }
}

inline void write_score_matrix(const std::filesystem::path& path, const ScoreMatrix& m) {
  atomic_write(path, score_matrix_to_string(m));
}

// ---------------------------------------------------------------------------
// Calibration container:
//
//   PVFUSE-CALIBRATION\n
//   version <int>\n
//   <single-line JSON body>\n
//   crc32 <8 lowercase hex digits>\n
//
// The CRC-32 covers every byte before the trailer line.

inline constexpr std::string_view kCalibrationMagic = "PVFUSE-CALIBRATION";

namespace detail {

inline std::uint32_t crc32(std::string_view bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

inline std::string hex8(std::uint32_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

inline std::string with_checksum(std::string body) {
  body += "crc32 " + hex8(crc32(body)) + "\n";
  return body;
}

inline nlohmann::json calibration_body(const Calibration& cal) {
  nlohmann::json j;
  j["kind"] = std::string(combiner_name(cal.kind()));
  j["r"] = cal.r();
  j["baseline_normalization"] = std::string(normalization_name(cal.baseline_normalization()));
  auto dets = nlohmann::json::array();
  for (const auto& e : cal.ecdfs()) dets.push_back({{"name", e.name()}, {"reference", e.sorted_reference()}});
  j["detectors"] = std::move(dets);
  if (cal.brown()) j["brown"] = {{"c", cal.brown()->c}, {"k_prime", cal.brown()->k_prime}};
  if (cal.hartung()) j["hartung"] = {{"rho_hat", cal.hartung()->rho_hat}, {"weights", cal.hartung()->weights}};
  return j;
}

}  // namespace detail

// Container bytes for an arbitrary version and JSON body; save_calibration uses the current version.
inline std::string encode_calibration_container(int version, const nlohmann::json& body) {
  std::string out(kCalibrationMagic);
  out += "\nversion " + std::to_string(version) + "\n" + body.dump() + "\n";
  return detail::with_checksum(std::move(out));
}

inline std::string save_calibration(const Calibration& cal) {
  return encode_calibration_container(Calibration::kFormatVersion, detail::calibration_body(cal));
}

inline Calibration load_calibration(std::string_view bytes) {
  if (bytes.empty() || bytes.back() != '\n') throw ChecksumError("calibration: file is truncated (no checksum trailer)");
  const auto trailer_start = bytes.rfind('\n', bytes.size() - 2);
  if (trailer_start == std::string_view::npos) throw ChecksumError("calibration: file is truncated (no checksum trailer)");
  const std::string_view payload = bytes.substr(0, trailer_start + 1);
  const std::string_view trailer = bytes.substr(trailer_start + 1, bytes.size() - trailer_start - 2);
  constexpr std::string_view prefix = "crc32 ";
  const bool well_formed = trailer.size() == prefix.size() + 8 && trailer.substr(0, prefix.size()) == prefix &&
                           std::all_of(trailer.begin() + prefix.size(), trailer.end(), [](char c) {
                             return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
                           });
  if (!well_formed) throw ChecksumError("calibration: malformed checksum trailer (corrupted or truncated file)");
  if (detail::hex8(detail::crc32(payload)) != trailer.substr(prefix.size()))
    throw ChecksumError("calibration: checksum mismatch, file is corrupted");

  // Checksum verified; the remaining structure errors indicate a foreign or hand-edited file.
  const auto l1 = payload.find('\n');
  const auto l2 = payload.find('\n', l1 + 1);
  if (l1 == std::string_view::npos || l2 == std::string_view::npos || payload.substr(0, l1) != kCalibrationMagic)
    throw DataError("calibration: not a calibration file (bad magic)");
  const std::string_view version_line = payload.substr(l1 + 1, l2 - l1 - 1);
  if (version_line.substr(0, 8) != "version ") throw DataError("calibration: missing version line");
  int version = 0;
  {
    const auto digits = version_line.substr(8);
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), version);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || version < 1)
      throw DataError("calibration: malformed version line");
  }
  if (version > Calibration::kFormatVersion)
    throw UnsupportedVersionError("calibration: format version " + std::to_string(version) +
                                  " is newer than supported version " + std::to_string(Calibration::kFormatVersion));

  try {
    const auto j = nlohmann::json::parse(payload.substr(l2 + 1));
    const CombinerKind kind = parse_combiner(j.at("kind").get<std::string>());
    const Normalization norm = parse_normalization(j.at("baseline_normalization").get<std::string>());
    std::vector<Ecdf> ecdfs;
    for (const auto& d : j.at("detectors"))
      ecdfs.push_back(Ecdf::from_sorted(d.at("reference").get<std::vector<double>>(), d.at("name").get<std::string>()));
    std::optional<BrownParams> brown;
    if (j.contains("brown")) brown = BrownParams{j["brown"].at("c").get<double>(), j["brown"].at("k_prime").get<double>()};
    std::optional<HartungParams> hartung;
    if (j.contains("hartung"))
      hartung = HartungParams{j["hartung"].at("rho_hat").get<double>(),
                              j["hartung"].at("weights").get<std::vector<double>>()};
    return Calibration(std::move(ecdfs), kind, std::move(brown), std::move(hartung), j.at("r").get<std::size_t>(), norm);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("calibration: malformed body: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("calibration: ") + e.what());
  }
}

inline void save_calibration_file(const std::filesystem::path& path, const Calibration& cal) {
  atomic_write(path, save_calibration(cal));
}

inline Calibration load_calibration_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open calibration file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_calibration(ss.str());
}

// ---------------------------------------------------------------------------
// Logit-derived scores, all oriented so that higher means more in-distribution:
// msp = max softmax probability, maxlogit = max logit, energy = T log sum exp(logit / T),
// doctor = sum of squared softmax probabilities.

inline ScoreMatrix logit_adapters(const ScoreMatrix& logits, double temperature = 1.0) {
  if (logits.cols() < 2) throw DataError("logit adapters: need at least 2 classes");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw DomainError("logit adapters: temperature must be > 0");
  std::vector<double> out;
  out.reserve(logits.rows() * 4);
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0, sum_t = 0.0, sum_sq = 0.0;
    for (double l : row) {
      const double e = std::exp(l - mx);
      sum += e;
      sum_sq += e * e;
      sum_t += std::exp((l - mx) / temperature);
    }
    out.push_back(1.0 / sum);
    out.push_back(mx);
    out.push_back(mx + temperature * std::log(sum_t));
    out.push_back(sum_sq / (sum * sum));
  }
  ScoreMatrix m({"msp", "maxlogit", "energy", "doctor"}, std::move(out));
  if (logits.has_row_ids()) m.set_row_ids(logits.row_ids());
  return m;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string report_to_csv(const EvalReport& report) {
  std::string out = "method,auroc,fpr_at_tpr,tpr_level\n";
  for (const auto& [name, r] : report.methods)
    out += name + "," + format_double(r.auroc) + "," + format_double(r.fpr_at_tpr) + "," + format_double(r.tpr_level) + "\n";
  return out;
}

inline std::string report_to_json(const EvalReport& report) {
  auto arr = nlohmann::json::array();
  for (const auto& [name, r] : report.methods)
    arr.push_back({{"method", name}, {"auroc", r.auroc}, {"fpr_at_tpr", r.fpr_at_tpr}, {"tpr_level", r.tpr_level}});
  return nlohmann::json{{"methods", arr}}.dump(2) + "\n";
}

}  // namespace pvfuse
