// pvfuse command-line interface.
//
// Exit codes: 0 success, 2 usage error, 3 data/parse error, 4 numeric degeneracy.
// Errors are reported on stderr as a single line "pvfuse: <class>: <message>".

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pvfuse/pvfuse.hpp"

namespace {

using namespace pvfuse;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-") {
    std::cout << content;
    std::cout.flush();
  } else {
    atomic_write(out_path, content);
  }
}

CombinerKind kind_from_flag(const std::string& name) {
  try {
    return parse_combiner(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

Normalization normalization_from_flag(const std::string& name) {
  try {
    return parse_normalization(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("--alpha must lie in (0,1)");
}

std::string id_prefix(const ScoreMatrix& m, std::size_t i) { return m.has_row_ids() ? m.row_ids()[i] + "," : ""; }

// --- calibrate -------------------------------------------------------------

struct CalibrateArgs {
  std::string scores, method = "fisher", out, moments_scores, baseline_norm = "standard";
};

void run_calibrate(const CalibrateArgs& a) {
  CalibrateOptions opts;
  opts.baseline_norm = normalization_from_flag(a.baseline_norm);
  const auto kind = kind_from_flag(a.method);
  const ScoreMatrix scores = load_score_matrix(a.scores);
  const Calibration cal = a.moments_scores.empty()
                              ? calibrate(scores, kind, opts)
                              : calibrate_two_split(scores, load_score_matrix(a.moments_scores), kind, opts);
  save_calibration_file(a.out, cal);
}

// --- score -----------------------------------------------------------------

struct ScoreArgs {
  std::string cal, scores, out;
};

void run_score(const ScoreArgs& a) {
  const Calibration cal = load_calibration_file(a.cal);
  const ScoreMatrix raw = load_score_matrix(a.scores);
  const ScoreMatrix scores = raw.aligned_to(cal.names());
  std::string out;
  if (scores.has_row_ids()) out += "id,";
  for (const auto& n : cal.names()) out += "p_" + n + ",";
  out += "statistic,confidence\n";
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto row = scores.row(i);
    out += id_prefix(scores, i);
    for (std::size_t j = 0; j < cal.k(); ++j) out += format_double(cal.ecdfs()[j].p_value(row[j])) + ",";
    out += format_double(combined_statistic(cal, row)) + "," + format_double(combined_confidence(cal, row)) + "\n";
  }
  emit(a.out, out);
}

// --- decide ----------------------------------------------------------------

struct DecideArgs {
  std::string cal, scores, out;
  double alpha = 0.95;
};

void run_decide(const DecideArgs& a) {
  check_alpha(a.alpha);
  const Calibration cal = load_calibration_file(a.cal);
  const ScoreMatrix scores = load_score_matrix(a.scores).aligned_to(cal.names());
  std::string out = scores.has_row_ids() ? "id,decision\n" : "decision\n";
  for (std::size_t i = 0; i < scores.rows(); ++i)
    out += id_prefix(scores, i) + (decide(cal, scores.row(i), a.alpha) ? "1\n" : "0\n");
  emit(a.out, out);
}

// --- detect-window ---------------------------------------------------------

struct DetectWindowArgs {
  std::string cal, reference, test, out;
  std::size_t m = 32, r = 1000, draws = 2000;
  double alpha = 0.95;
  std::uint64_t seed = 0;
};

// The reference file is an ID pool: its first r rows form the fixed reference window and
// the whole pool feeds the bootstrap threshold. The test file is cut into consecutive
// windows of m rows (a trailing partial window is ignored).
void run_detect_window(const DetectWindowArgs& a) {
  check_alpha(a.alpha);
  if (a.m < 1) throw UsageError("--m must be >= 1");
  const Calibration cal = load_calibration_file(a.cal);
  const ScoreMatrix pool = load_score_matrix(a.reference);
  const ScoreMatrix test = load_score_matrix(a.test);
  if (pool.rows() < a.m + 2)
    throw DataError("reference pool has " + std::to_string(pool.rows()) + " rows; need at least m + 2");
  if (test.rows() < a.m)
    throw DataError("test file has " + std::to_string(test.rows()) + " rows; need at least one window of " +
                    std::to_string(a.m));
  WindowConfig cfg;
  cfg.window_size = a.m;
  cfg.reference_size = std::min(a.r, pool.rows() - a.m);
  cfg.alpha = a.alpha;
  cfg.null_calibration_draws = a.draws;
  cfg.seed = a.seed;
  const WindowDetector detector(cal, cfg, pool);
  std::string out = "window,ks_stat,threshold,detected,window_size\n";
  for (std::size_t w = 0; (w + 1) * a.m <= test.rows(); ++w) {
    const auto v = detector.detect(test.select_rows(w * a.m, a.m));
    out += std::to_string(w) + "," + format_double(v.ks_stat) + "," + format_double(v.threshold) + "," +
           (v.detected ? "1" : "0") + "," + std::to_string(v.window_size) + "\n";
  }
  emit(a.out, out);
}

// --- monitor ---------------------------------------------------------------

struct MonitorArgs {
  std::string cal, stream, out;
  std::size_t window = 64;
};

void run_monitor(const MonitorArgs& a) {
  if (a.window < 1) throw UsageError("--window must be >= 1");
  const Calibration cal = load_calibration_file(a.cal);
  const ScoreMatrix stream = load_score_matrix(a.stream).aligned_to(cal.names());
  MonitorState state(a.window);
  std::string out = "timestamp,moving_avg\n";
  for (std::size_t i = 0; i < stream.rows(); ++i)
    if (auto avg = monitor_push(state, combined_confidence(cal, stream.row(i))))
      out += std::to_string(i) + "," + format_double(*avg) + "\n";
  emit(a.out, out);
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string id, shift, cal, out, format = "csv";
  bool all_methods = false;
  double tpr = 0.95;
};

// Calibration for `kind` sharing `base`'s ecdfs. Kinds other than the fitted one get
// independence parameters; AUROC and FPR@TPR depend only on rankings, which the Brown and
// Hartung rescalings leave unchanged.
Calibration with_kind(const Calibration& base, CombinerKind kind) {
  if (kind == base.kind()) return base;
  std::optional<BrownParams> brown;
  std::optional<HartungParams> hartung;
  if (base.k() >= 2 && kind == CombinerKind::Fisher) brown = BrownParams::independent(base.k());
  if (base.k() >= 2 && kind == CombinerKind::Stouffer) hartung = HartungParams{0.0, std::vector<double>(base.k(), 1.0)};
  return Calibration(base.ecdfs(), kind, brown, hartung, base.r(), base.baseline_normalization());
}

void run_eval(const EvalArgs& a) {
  if (!(a.tpr > 0.0 && a.tpr < 1.0)) throw UsageError("--tpr must lie in (0,1)");
  if (a.format != "csv" && a.format != "json") throw UsageError("--format must be csv or json");
  const Calibration cal = load_calibration_file(a.cal);
  const ScoreMatrix id = load_score_matrix(a.id).aligned_to(cal.names());
  const ScoreMatrix shift = load_score_matrix(a.shift).aligned_to(cal.names());

  EvalReport report;
  std::vector<CombinerKind> kinds{cal.kind()};
  if (a.all_methods)
    for (auto k : kAllCombiners)
      if (k != cal.kind()) kinds.push_back(k);
  for (auto kind : kinds) {
    const Calibration c = with_kind(cal, kind);
    const auto d = LabeledScores::from_groups(combined_confidences(c, id), combined_confidences(c, shift),
                                              Orientation::HigherIsID);
    report.add(std::string(combiner_name(kind)), evaluate(d, a.tpr));
  }
  for (std::size_t j = 0; j < cal.k(); ++j) {
    const auto d = LabeledScores::from_groups(id.column(j), shift.column(j), Orientation::HigherIsID);
    report.add("detector:" + cal.names()[j], evaluate(d, a.tpr));
  }
  emit(a.out, a.format == "json" ? report_to_json(report) : report_to_csv(report));
}

// --- synth -----------------------------------------------------------------

struct ScenarioArgs {
  std::size_t k = 5;
  double rho = 0.0;
  double separation = 1.0;
  std::string shapes = "mixed";
  std::uint64_t seed = 0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--k", k, "number of detectors")->check(CLI::Range(1, 64));
    cmd->add_option("--rho", rho, "pairwise latent correlation");
    cmd->add_option("--separation", separation, "shift size in units of each detector's standard deviation");
    cmd->add_option("--shapes", shapes, "score shapes: mixed or normal")->check(CLI::IsMember({"mixed", "normal"}));
    cmd->add_option("--seed", seed, "random seed");
  }

  SyntheticConfig config() const {
    SyntheticConfig cfg = shapes == "normal" ? SyntheticConfig::normal(k, rho, separation, seed)
                                             : SyntheticConfig::mixed(k, rho, separation, seed);
    try {
      cfg.validate();
    } catch (const std::domain_error& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

struct SynthScoresArgs {
  ScenarioArgs scenario;
  std::size_t n = 1000;
  bool shifted = false;
  double beta = 0.0;
  std::string out;
};

void run_synth_scores(const SynthScoresArgs& a) {
  if (!(a.beta >= 0.0 && a.beta <= 1.0)) throw UsageError("--beta must lie in [0,1]");
  ScoreGenerator gen(a.scenario.config());
  const ScoreMatrix m = a.beta > 0.0 ? gen.mixture(a.n, a.beta) : gen.draw(a.n, a.shifted);
  emit(a.out, score_matrix_to_string(m));
}

// Calibration fitted on a fresh ID sample drawn from a seed distinct from the experiment's.
Calibration synthetic_calibration(const SyntheticConfig& cfg, std::size_t rows, CombinerKind kind) {
  ScoreGenerator gen(cfg, derive_seed(cfg.seed, {0xCA11B}));
  return calibrate(gen.draw(rows, false), kind);
}

struct SynthGridArgs {
  ScenarioArgs scenario;
  std::size_t calibration_rows = 10000, trials = 500, seeds = 10, reference = 1000;
  std::string method = "fisher", out;
  std::vector<std::size_t> window_sizes{1, 2, 4, 8, 16, 32, 64};
  std::vector<double> betas{0.0, 0.25, 0.5, 0.75, 1.0};
};

void run_synth_grid(const SynthGridArgs& a) {
  const auto cfg = a.scenario.config();
  const Calibration cal = synthetic_calibration(cfg, a.calibration_rows, kind_from_flag(a.method));
  WindowGridOptions opts;
  opts.trials = a.trials;
  opts.seeds = a.seeds;
  opts.reference_size = a.reference;
  std::string out = "window_size,beta,auroc_mean,auroc_ci_half_width\n";
  for (const auto& cell : run_window_grid(cal, cfg, a.window_sizes, a.betas, opts))
    out += std::to_string(cell.window_size) + "," + format_double(cell.beta) + "," + format_double(cell.auroc.mean) +
           "," + format_double(cell.auroc.ci_half_width) + "\n";
  emit(a.out, out);
}

struct SynthSequentialArgs {
  ScenarioArgs scenario;
  std::size_t calibration_rows = 10000, segments = 6, segment_length = 500, window = 64;
  double base_accuracy = 0.8, accuracy_drop = 0.1;
  std::string method = "fisher", out;
};

void run_synth_sequential(const SynthSequentialArgs& a) {
  const auto cfg = a.scenario.config();
  const Calibration cal = synthetic_calibration(cfg, a.calibration_rows, kind_from_flag(a.method));
  const auto schedule = DriftSchedule::linear(a.segments, a.segment_length, a.base_accuracy, a.accuracy_drop);
  const auto trace = run_sequential(cal, cfg, schedule, a.window);
  std::string out = "timestamp,moving_avg,accuracy\n";
  for (std::size_t i = 0; i < trace.timestamps.size(); ++i)
    out += std::to_string(trace.timestamps[i]) + "," + format_double(trace.moving_avgs[i]) + "," +
           format_double(trace.accuracies[i]) + "\n";
  emit(a.out, out);
  std::cerr << "correlation=" << format_double(trace.correlation) << "\n";
}

// --- subsets ---------------------------------------------------------------

struct SubsetsArgs {
  std::string id, shift, method = "fisher", out, summary_out;
  std::size_t max_k = kMaxSubsetDetectors, min_size = 2;
};

void run_subsets(const SubsetsArgs& a) {
  const ScoreMatrix id = load_score_matrix(a.id);
  const ScoreMatrix shift = load_score_matrix(a.shift);
  if (id.cols() > a.max_k)
    throw UsageError(std::to_string(id.cols()) + " detectors exceed --max-k " + std::to_string(a.max_k));
  if (a.min_size < 1 || a.min_size > id.cols()) throw UsageError("--min-size must lie in [1, k]");
  const auto study = enumerate_subsets(id, shift, kind_from_flag(a.method), a.min_size, a.max_k);
  std::string out = "subset,size,auroc\n";
  for (const auto& s : study.subsets) {
    std::string name;
    for (auto j : s.columns) name += (name.empty() ? "" : "+") + id.names()[j];
    out += name + "," + std::to_string(s.columns.size()) + "," + format_double(s.auroc) + "\n";
  }
  emit(a.out, out);
  if (!a.summary_out.empty()) {
    std::string sum = "size,count,best,average,worst\n";
    for (const auto& s : study.by_size)
      sum += std::to_string(s.size) + "," + std::to_string(s.count) + "," + format_double(s.best) + "," +
             format_double(s.average) + "," + format_double(s.worst) + "\n";
    emit(a.summary_out, sum);
  }
}

// --- adapt -----------------------------------------------------------------

struct AdaptArgs {
  std::string logits, out;
  double temperature = 1.0;
};

void run_adapt(const AdaptArgs& a) {
  if (!(a.temperature > 0.0)) throw UsageError("--temperature must be > 0");
  emit(a.out, score_matrix_to_string(logit_adapters(load_score_matrix(a.logits), a.temperature)));
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int fail(const char* error_class, const std::string& message, int code) {
  std::cerr << "pvfuse: " << error_class << ": " << one_line(message) << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Combine out-of-distribution detector scores into calibrated p-values"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::function<void()> action;

  CalibrateArgs cal_args;
  auto* cal_cmd = app.add_subcommand("calibrate", "fit ecdfs and correction parameters on held-out ID scores");
  cal_cmd->add_option("--scores", cal_args.scores, "ID score file")->required();
  cal_cmd->add_option("--method", cal_args.method, "combiner kind");
  cal_cmd->add_option("--out", cal_args.out, "calibration output file")->required();
  cal_cmd->add_option("--moments-scores", cal_args.moments_scores, "separate ID split for Brown/Hartung fitting");
  cal_cmd->add_option("--baseline-norm", cal_args.baseline_norm, "normalization for mean/min/max baselines");
  cal_cmd->callback([&] { action = [&] { run_calibrate(cal_args); }; });

  ScoreArgs score_args;
  auto* score_cmd = app.add_subcommand("score", "per-row p-values, combined statistic and confidence");
  score_cmd->add_option("--cal", score_args.cal, "calibration file")->required();
  score_cmd->add_option("--scores", score_args.scores, "score file to evaluate")->required();
  score_cmd->add_option("--out", score_args.out, "output file (default stdout)");
  score_cmd->callback([&] { action = [&] { run_score(score_args); }; });

  DecideArgs decide_args;
  auto* decide_cmd = app.add_subcommand("decide", "per-row 0/1 shift decisions");
  decide_cmd->add_option("--cal", decide_args.cal, "calibration file")->required();
  decide_cmd->add_option("--scores", decide_args.scores, "score file to evaluate")->required();
  decide_cmd->add_option("--alpha", decide_args.alpha, "desired ID acceptance rate");
  decide_cmd->add_option("--out", decide_args.out, "output file (default stdout)");
  decide_cmd->callback([&] { action = [&] { run_decide(decide_args); }; });

  DetectWindowArgs dw_args;
  auto* dw_cmd = app.add_subcommand("detect-window", "KS window test against a fixed reference window");
  dw_cmd->add_option("--cal", dw_args.cal, "calibration file")->required();
  dw_cmd->add_option("--reference", dw_args.reference, "ID reference pool")->required();
  dw_cmd->add_option("--test", dw_args.test, "test stream, cut into consecutive windows of m rows")->required();
  dw_cmd->add_option("--m", dw_args.m, "window size")->required();
  dw_cmd->add_option("--alpha", dw_args.alpha, "desired ID window acceptance rate");
  dw_cmd->add_option("--r", dw_args.r, "reference window size");
  dw_cmd->add_option("--draws", dw_args.draws, "bootstrap draws for the null threshold")->check(CLI::Range(100, 10000000));
  dw_cmd->add_option("--seed", dw_args.seed, "bootstrap seed");
  dw_cmd->add_option("--out", dw_args.out, "output file (default stdout)");
  dw_cmd->callback([&] { action = [&] { run_detect_window(dw_args); }; });

  MonitorArgs mon_args;
  auto* mon_cmd = app.add_subcommand("monitor", "sliding-window moving average of confidences");
  mon_cmd->add_option("--cal", mon_args.cal, "calibration file")->required();
  mon_cmd->add_option("--stream", mon_args.stream, "score stream, one row per time step")->required();
  mon_cmd->add_option("--window", mon_args.window, "moving-average window");
  mon_cmd->add_option("--out", mon_args.out, "output file (default stdout)");
  mon_cmd->callback([&] { action = [&] { run_monitor(mon_args); }; });

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "AUROC and FPR@TPR report");
  eval_cmd->add_option("--id", eval_args.id, "ID test scores")->required();
  eval_cmd->add_option("--shift", eval_args.shift, "shifted test scores")->required();
  eval_cmd->add_option("--cal", eval_args.cal, "calibration file")->required();
  eval_cmd->add_flag("--all-methods", eval_args.all_methods, "report every combiner");
  eval_cmd->add_option("--tpr", eval_args.tpr, "ID acceptance level for FPR@TPR");
  eval_cmd->add_option("--format", eval_args.format, "csv or json");
  eval_cmd->add_option("--out", eval_args.out, "output file (default stdout)");
  eval_cmd->callback([&] { action = [&] { run_eval(eval_args); }; });

  auto* synth_cmd = app.add_subcommand("synth", "synthetic generators and experiment grids");
  synth_cmd->require_subcommand(1);

  SynthScoresArgs ss_args;
  auto* ss_cmd = synth_cmd->add_subcommand("scores", "draw a synthetic score matrix");
  ss_args.scenario.add_to(ss_cmd);
  ss_cmd->add_option("--n", ss_args.n, "rows to draw")->check(CLI::PositiveNumber);
  ss_cmd->add_flag("--shifted", ss_args.shifted, "draw every row shifted");
  ss_cmd->add_option("--beta", ss_args.beta, "mixture coefficient");
  ss_cmd->add_option("--out", ss_args.out, "output file (default stdout)");
  ss_cmd->callback([&] { action = [&] { run_synth_scores(ss_args); }; });

  SynthGridArgs sg_args;
  auto* sg_cmd = synth_cmd->add_subcommand("window-grid", "window-level AUROC over window sizes and betas");
  sg_args.scenario.add_to(sg_cmd);
  sg_cmd->add_option("--method", sg_args.method, "combiner kind");
  sg_cmd->add_option("--calibration-rows", sg_args.calibration_rows, "ID rows drawn for calibration");
  sg_cmd->add_option("--m", sg_args.window_sizes, "window sizes")->delimiter(',');
  sg_cmd->add_option("--beta", sg_args.betas, "mixture coefficients")->delimiter(',');
  sg_cmd->add_option("--trials", sg_args.trials, "ID and mixture windows per cell and seed");
  sg_cmd->add_option("--seeds", sg_args.seeds, "seeds per cell");
  sg_cmd->add_option("--reference", sg_args.reference, "reference window size");
  sg_cmd->add_option("--out", sg_args.out, "output file (default stdout)");
  sg_cmd->callback([&] { action = [&] { run_synth_grid(sg_args); }; });

  SynthSequentialArgs sq_args;
  auto* sq_cmd = synth_cmd->add_subcommand("sequential", "drift stream through the sliding-window monitor");
  sq_args.scenario.add_to(sq_cmd);
  sq_cmd->add_option("--method", sq_args.method, "combiner kind");
  sq_cmd->add_option("--calibration-rows", sq_args.calibration_rows, "ID rows drawn for calibration");
  sq_cmd->add_option("--segments", sq_args.segments, "drift segments, intensity 0, 1, ...");
  sq_cmd->add_option("--segment-length", sq_args.segment_length, "rows per segment");
  sq_cmd->add_option("--window", sq_args.window, "moving-average window");
  sq_cmd->add_option("--base-accuracy", sq_args.base_accuracy, "accuracy at intensity 0");
  sq_cmd->add_option("--accuracy-drop", sq_args.accuracy_drop, "accuracy lost per intensity unit");
  sq_cmd->add_option("--out", sq_args.out, "trace output file (default stdout)");
  sq_cmd->callback([&] { action = [&] { run_synth_sequential(sq_args); }; });

  SubsetsArgs sub_args;
  auto* sub_cmd = app.add_subcommand("subsets", "AUROC of every detector subset");
  sub_cmd->add_option("--id", sub_args.id, "ID scores")->required();
  sub_cmd->add_option("--shift", sub_args.shift, "shifted scores")->required();
  sub_cmd->add_option("--method", sub_args.method, "combiner kind");
  sub_cmd->add_option("--max-k", sub_args.max_k, "refuse inputs with more detectors than this")->check(CLI::Range(std::size_t{1}, kMaxSubsetDetectors));
  sub_cmd->add_option("--min-size", sub_args.min_size, "smallest subset size");
  sub_cmd->add_option("--out", sub_args.out, "output file (default stdout)");
  sub_cmd->add_option("--summary-out", sub_args.summary_out, "best/average/worst AUROC per subset size");
  sub_cmd->callback([&] { action = [&] { run_subsets(sub_args); }; });

  AdaptArgs adapt_args;
  auto* adapt_cmd = app.add_subcommand("adapt", "msp/maxlogit/energy/doctor scores from a logit matrix");
  adapt_cmd->add_option("--logits", adapt_args.logits, "logit matrix, one column per class")->required();
  adapt_cmd->add_option("--temperature", adapt_args.temperature, "energy temperature");
  adapt_cmd->add_option("--out", adapt_args.out, "output file (default stdout)");
  adapt_cmd->callback([&] { action = [&] { run_adapt(adapt_args); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage_error", e.what(), 2);
  }

  try {
    action();
    return 0;
  } catch (const UsageError& e) {
    return fail("usage_error", e.what(), 2);
  } catch (const UnsupportedVersionError& e) {
    return fail("unsupported_version", e.what(), 3);
  } catch (const ChecksumError& e) {
    return fail("checksum_error", e.what(), 3);
  } catch (const DataError& e) {
    return fail("data_error", e.what(), 3);
  } catch (const DegenerateError& e) {
    return fail("numeric_error", e.what(), 4);
  } catch (const std::domain_error& e) {
    return fail("numeric_error", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("internal_error", e.what(), 1);
  }
}
