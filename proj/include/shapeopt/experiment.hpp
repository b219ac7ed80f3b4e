#pragma once

// Launch-power sweeps, constellation-size studies and amplitude-PMF reports.
//
// Experiment spec (JSON):
//   {
//     "strategy": "uniform" | "mb-snr-matched" | "mb-bruteforce" | "md-ball" | "proposed"
//                 (or an array of them),
//     "base": "qam16sq" | "qam64sq" | "pam16-4d",
//     "preset": "desk" | "paper"          (optional, default "desk"),
//     "power_sweep": [dBm, ...]           (strictly increasing),
//     "link": {LinkConfig overrides},
//     "optimizer": {OptimizerConfig overrides},
//     "n_ball": int                       (md-ball only),
//     "output_dir": path
//   }
//
// Every cell (strategy, power) gets a fingerprint over everything that
// determines its result. Resumed sweeps keep rows whose fingerprint matches
// and recompute the rest.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "shapeopt/air.hpp"
#include "shapeopt/constellation.hpp"
#include "shapeopt/constellation_io.hpp"
#include "shapeopt/errors.hpp"
#include "shapeopt/fiber_channel.hpp"
#include "shapeopt/link_config.hpp"
#include "shapeopt/mb_search.hpp"
#include "shapeopt/optimizer.hpp"
#include "shapeopt/rng.hpp"

namespace shapeopt {

enum class Strategy { uniform, mb_snr_matched, mb_bruteforce, md_ball, proposed };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::uniform: return "uniform";
    case Strategy::mb_snr_matched: return "mb-snr-matched";
    case Strategy::mb_bruteforce: return "mb-bruteforce";
    case Strategy::md_ball: return "md-ball";
    case Strategy::proposed: return "proposed";
  }
  return "?";
}

inline Strategy strategy_from_string(const std::string& s) {
  for (auto v : {Strategy::uniform, Strategy::mb_snr_matched, Strategy::mb_bruteforce, Strategy::md_ball,
                 Strategy::proposed})
    if (s == to_string(v)) return v;
  throw invalid_config("unknown strategy \"" + s + "\"");
}

inline Constellation4D build_base(const std::string& name) {
  if (name == "qam16sq") return build_product_qam(16);
  if (name == "qam64sq") return build_product_qam(64);
  if (name == "pam16-4d") return build_product_pam16_4d();
  throw invalid_config("unknown base \"" + name + "\"");
}

inline LinkConfig link_preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw invalid_config("unknown preset \"" + name + "\" (desk or paper)");
}

/// Signed lambda grid of the brute-force MB search, in units of 1/mean energy.
struct LambdaGrid {
  double lo = -3.0;
  double hi = 5.0;
  double step = 0.25;
  int refine_points = 9;  // second pass: this many points across +-step around the best
};

struct ExperimentSpec {
  std::vector<Strategy> strategies{Strategy::uniform};
  std::string base = "qam64sq";
  std::string preset = "desk";
  std::vector<double> power_sweep;
  LinkConfig link = desk_preset();
  OptimizerConfig optimizer;
  std::optional<std::size_t> n_ball;
  std::string output_dir = "out";
  LambdaGrid lambda_grid;

  void validate() const {
    if (strategies.empty()) throw invalid_config("no strategy given");
    const bool ball = std::find(strategies.begin(), strategies.end(), Strategy::md_ball) != strategies.end();
    if (ball && !n_ball) throw invalid_config("n_ball is required for md-ball");
    if (!ball && n_ball) throw invalid_config("n_ball is only valid for md-ball");
    if (n_ball && (*n_ball < 1 || *n_ball > 65536)) throw invalid_config("n_ball outside [1, 65536]");
    if (power_sweep.empty()) throw invalid_config("power_sweep is empty");
    for (std::size_t i = 0; i < power_sweep.size(); ++i) {
      if (!std::isfinite(power_sweep[i])) throw invalid_config("power_sweep has a non-finite value");
      if (i > 0 && !(power_sweep[i] > power_sweep[i - 1]))
        throw invalid_config("power_sweep must be strictly increasing");
    }
    build_base(base);
    link.validate();
    optimizer.validate();
  }
};

/// Parses an experiment spec. `preset_override`, when set, replaces its preset.
inline ExperimentSpec experiment_spec_from_json(const nlohmann::json& j,
                                                const std::optional<std::string>& preset_override = {}) {
  if (!j.is_object()) throw invalid_config("experiment spec must be an object");
  ExperimentSpec s;
  try {
    static const std::set<std::string> known{"strategy", "base",    "preset", "power_sweep",
                                             "link",     "optimizer", "n_ball", "output_dir"};
    for (const auto& [key, v] : j.items())
      if (!known.count(key)) throw invalid_config("unknown experiment spec key \"" + key + "\"");
    if (!j.contains("strategy")) throw invalid_config("strategy is required");
    s.strategies.clear();
    if (j.at("strategy").is_array()) {
      for (const auto& v : j.at("strategy")) s.strategies.push_back(strategy_from_string(v.get<std::string>()));
    } else {
      s.strategies.push_back(strategy_from_string(j.at("strategy").get<std::string>()));
    }
    s.base = j.value("base", s.base);
    s.preset = preset_override.value_or(j.value("preset", s.preset));
    s.link = link_preset(s.preset);
    if (j.contains("link")) s.link = link_config_from_json(j.at("link"), s.link);
    if (j.contains("optimizer")) s.optimizer = optimizer_config_from_json(j.at("optimizer"), s.optimizer);
    if (!j.contains("power_sweep")) throw invalid_config("power_sweep is required");
    s.power_sweep = j.at("power_sweep").get<std::vector<double>>();
    if (j.contains("n_ball")) s.n_ball = j.at("n_ball").get<std::size_t>();
    s.output_dir = j.value("output_dir", s.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw invalid_config(std::string("experiment spec: ") + e.what());
  }
  s.validate();
  return s;
}

inline ExperimentSpec read_experiment_spec(const std::string& path,
                                           const std::optional<std::string>& preset_override = {}) {
  std::ifstream in(path);
  if (!in) throw invalid_config("cannot open spec file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw invalid_config(path + ": " + e.what());
  }
  return experiment_spec_from_json(j, preset_override);
}

// ---------------------------------------------------------------------------
// Result table.

struct ResultRow {
  std::string strategy;
  std::string base;
  double launch_power_dbm = 0.0;
  double mi_bits_per_4d = 0.0;
  double mi_se = 0.0;
  double snr_eff_db = 0.0;
  double papr = 0.0;
  double entropy_bits = 0.0;
  std::size_t nonzero_points = 0;
  std::size_t nonzero_amplitudes = 0;
  std::optional<double> lambda;
  double wall_time_s = 0.0;
  std::optional<std::size_t> n_ball;
  std::optional<double> gain_bits;
  std::optional<double> gain_se;
  std::uint64_t validation_seed = 0;
  std::string status = "ok";
  std::uint64_t fingerprint = 0;
  std::string error;

  bool operator==(const ResultRow&) const = default;
};

inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols{
      "strategy",     "base",           "launch_power_dbm", "mi_bits_per_4d", "mi_se",          "snr_eff_db",
      "papr",         "entropy_bits",   "nonzero_points",   "nonzero_amplitudes", "lambda",     "wall_time_s",
      "n_ball",       "gain_bits",      "gain_se",          "validation_seed", "status",        "fingerprint",
      "error"};
  return cols;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string power_tag(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2fdBm", p);
  return buf;
}

inline std::string fmt_hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line, std::size_t lineno) {
  std::vector<std::string> f;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      f.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw parse_error("unterminated quoted field", lineno);
  f.push_back(std::move(cur));
  return f;
}

inline double parse_double(const std::string& s, std::size_t lineno) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw parse_error("bad number \"" + s + "\"", lineno);
  }
  if (pos != s.size()) throw parse_error("bad number \"" + s + "\"", lineno);
  return v;
}

inline std::uint64_t parse_uint(const std::string& s, std::size_t lineno, int base = 10) {
  std::size_t pos = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(s, &pos, base);
  } catch (const std::exception&) {
    throw parse_error("bad integer \"" + s + "\"", lineno);
  }
  if (pos != s.size() || s.empty() || s[0] == '-') throw parse_error("bad integer \"" + s + "\"", lineno);
  return v;
}

}  // namespace detail

inline std::string csv_header() {
  std::string h;
  for (const auto& c : result_columns()) h += (h.empty() ? "" : ",") + c;
  return h;
}

inline std::string to_csv_line(const ResultRow& r) {
  using detail::fmt_double;
  auto opt_d = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
  std::vector<std::string> f{detail::csv_quote(r.strategy),
                             detail::csv_quote(r.base),
                             fmt_double(r.launch_power_dbm),
                             fmt_double(r.mi_bits_per_4d),
                             fmt_double(r.mi_se),
                             fmt_double(r.snr_eff_db),
                             fmt_double(r.papr),
                             fmt_double(r.entropy_bits),
                             std::to_string(r.nonzero_points),
                             std::to_string(r.nonzero_amplitudes),
                             opt_d(r.lambda),
                             fmt_double(r.wall_time_s),
                             r.n_ball ? std::to_string(*r.n_ball) : std::string(),
                             opt_d(r.gain_bits),
                             opt_d(r.gain_se),
                             std::to_string(r.validation_seed),
                             detail::csv_quote(r.status),
                             detail::fmt_hex(r.fingerprint),
                             detail::csv_quote(r.error)};
  std::string out;
  for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + f[i];
  return out;
}

inline std::string to_csv(const std::vector<ResultRow>& rows) {
  std::string out = csv_header() + "\n";
  for (const auto& r : rows) out += to_csv_line(r) + "\n";
  return out;
}

/// Inverse of to_csv. Errors carry the 1-based line number.
inline std::vector<ResultRow> parse_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw parse_error("empty results file", 1);
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != csv_header()) throw parse_error("unexpected header", lineno);
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::csv_split(line, lineno);
    if (f.size() != result_columns().size())
      throw parse_error("expected " + std::to_string(result_columns().size()) + " fields, got " +
                            std::to_string(f.size()),
                        lineno);
    auto d = [&](std::size_t i) { return detail::parse_double(f[i], lineno); };
    auto od = [&](std::size_t i) { return f[i].empty() ? std::nullopt : std::optional<double>(d(i)); };
    ResultRow r;
    r.strategy = f[0];
    r.base = f[1];
    r.launch_power_dbm = d(2);
    r.mi_bits_per_4d = d(3);
    r.mi_se = d(4);
    r.snr_eff_db = d(5);
    r.papr = d(6);
    r.entropy_bits = d(7);
    r.nonzero_points = detail::parse_uint(f[8], lineno);
    r.nonzero_amplitudes = detail::parse_uint(f[9], lineno);
    r.lambda = od(10);
    r.wall_time_s = d(11);
    if (!f[12].empty()) r.n_ball = detail::parse_uint(f[12], lineno);
    r.gain_bits = od(13);
    r.gain_se = od(14);
    r.validation_seed = detail::parse_uint(f[15], lineno);
    r.status = f[16];
    r.fingerprint = detail::parse_uint(f[17], lineno, 16);
    r.error = f[18];
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<ResultRow> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_config("cannot open " + path);
  return parse_csv(in);
}

// ---------------------------------------------------------------------------
// Evaluation.

/// AIR of c on the fiber link: cfg.seed and cfg.n_symbols are replaced by the
/// evaluator's seed and `n_symbols`.
inline Evaluator fiber_evaluator(LinkConfig link, std::size_t n_symbols, AuxMode mode = AuxMode::scaled_identity) {
  link.n_symbols = n_symbols;
  link.validate();
  return [link, mode](const Constellation4D& c, std::uint64_t seed) {
    auto cfg = link;
    cfg.seed = seed;
    return estimate_air(simulate_wdm(c, cfg), c, mode);
  };
}

/// Numeric AWGN MI as an evaluator (seed selects the noise table).
inline Evaluator awgn_evaluator(double snr_db, AwgnOracleOptions opt = {}) {
  return [snr_db, opt](const Constellation4D& c, std::uint64_t seed) {
    auto o = opt;
    o.seed = seed;
    return awgn_mi_estimate(c, snr_db, o);
  };
}

/// Seeds of one cell. Search and validation streams are disjoint by
/// construction; validation_seed is shared by all strategies at one power.
struct CellSeeds {
  std::uint64_t validation;
  std::uint64_t search;
  std::uint64_t snr_probe;
};

inline CellSeeds cell_seeds(const LinkConfig& link, double power_dbm) {
  const auto p = static_cast<std::uint64_t>(std::llround(power_dbm * 1000.0));
  return {substream_seed(link.seed, "validation", p), substream_seed(link.seed, "mb-search", p),
          substream_seed(link.seed, "snr-probe", p)};
}

struct CellOutcome {
  Constellation4D constellation;
  std::optional<double> lambda;
  std::set<std::uint64_t> training_seeds;
  std::optional<OptimizerTrace> trace;
};

struct BruteforceResult {
  double lambda = 0.0;
  std::vector<std::pair<double, double>> scanned;  // (lambda, mi)
};

/// Best lambda of mb_pmf(base, lambda) under `ev` on one common seed: a scan
/// over the signed grid, then one finer pass around the best point.
inline BruteforceResult mb_bruteforce(const Constellation4D& base, const Evaluator& ev, std::uint64_t seed,
                                      const LambdaGrid& g = {}) {
  BruteforceResult r;
  std::map<double, double> seen;
  auto eval = [&](double l) {
    if (auto it = seen.find(l); it != seen.end()) return it->second;
    const double v = ev(mb_pmf(base, l), seed).mi_bits_per_4d;
    seen[l] = v;
    r.scanned.emplace_back(l, v);
    return v;
  };
  const int n = static_cast<int>(std::llround((g.hi - g.lo) / g.step));
  double best_l = 0.0, best = eval(0.0);
  auto consider = [&](double l) {
    const double v = eval(l);
    if (v > best) {
      best = v;
      best_l = l;
    }
  };
  for (int i = 0; i <= n; ++i) consider(g.lo + i * g.step);
  const double centre = best_l;
  for (int i = 0; i < g.refine_points; ++i) {
    const double l = centre - g.step + 2.0 * g.step * (i + 1) / (g.refine_points + 1);
    consider(l);
  }
  r.lambda = best_l;
  return r;
}

struct SweepOptions {
  int workers = 1;
  bool resume = false;
  bool write_files = true;
  std::function<void(const std::string&)> log;
};

namespace detail {

inline nlohmann::json optimizer_identity(const OptimizerConfig& c) {
  auto j = to_json(c);
  j.erase("workers");
  return j;
}

inline std::uint64_t cell_fingerprint(const ExperimentSpec& s, Strategy st, double power) {
  auto link = s.link;
  link.total_launch_power = power;
  nlohmann::json j = {{"strategy", to_string(st)}, {"base", s.base}, {"link", to_json(link)}, {"version", 1}};
  if (st == Strategy::md_ball) j["n_ball"] = *s.n_ball;
  if (st == Strategy::proposed) j["optimizer"] = optimizer_identity(s.optimizer);
  if (st == Strategy::mb_bruteforce)
    j["lambda_grid"] = {s.lambda_grid.lo, s.lambda_grid.hi, s.lambda_grid.step, s.lambda_grid.refine_points};
  return fnv1a64(j.dump());
}

inline std::size_t nonzero_amplitudes(const Constellation4D& c) {
  return amplitude_classes(drop_pruned(c)).classes.size();
}

}  // namespace detail

/// Builds (and, for proposed, optimizes) one strategy's constellation at
/// link.total_launch_power. `trace_path` receives the optimizer trace.
inline CellOutcome build_strategy(const ExperimentSpec& spec, Strategy st, const LinkConfig& link,
                                  const Constellation4D& base, const std::string& trace_path = {},
                                  bool resume = false) {
  const auto seeds = cell_seeds(link, link.total_launch_power);
  switch (st) {
    case Strategy::uniform:
      return {base, std::nullopt, {}, std::nullopt};
    case Strategy::md_ball: {
      const auto full = build_product_pam16_4d();
      return {md_ball(full, *spec.n_ball), std::nullopt, {}, std::nullopt};
    }
    case Strategy::mb_snr_matched: {
      auto probe = link;
      probe.seed = seeds.snr_probe;
      const double snr = effective_snr(simulate_wdm(base, probe));
      auto r = mb_for_awgn_snr(base, snr);
      return {std::move(r.constellation), r.lambda, {seeds.snr_probe}, std::nullopt};
    }
    case Strategy::mb_bruteforce: {
      const auto ev = fiber_evaluator(link, link.n_symbols);
      const auto r = mb_bruteforce(base, ev, seeds.search, spec.lambda_grid);
      return {mb_pmf(base, r.lambda), r.lambda, {seeds.search}, std::nullopt};
    }
    case Strategy::proposed: {
      auto cfg = spec.optimizer;
      // Optimizer seeds live in their own stream of the link seed.
      cfg.seed = substream_seed(spec.optimizer.seed, "proposed" + detail::power_tag(link.total_launch_power), link.seed);
      const auto ev = fiber_evaluator(link, cfg.eval_symbols);
      std::optional<ResumePoint> rp;
      if (resume && !trace_path.empty() && std::filesystem::exists(trace_path)) {
        std::ifstream in(trace_path);
        std::string first;
        std::getline(in, first);
        bool same = false;
        try {
          const auto j = nlohmann::json::parse(first);
          auto stored = j.at("config");
          stored.erase("workers");
          same = j.at("type") == "start" && stored == detail::optimizer_identity(cfg);
        } catch (const std::exception&) {
          same = false;
        }
        if (same) {
          in.clear();
          in.seekg(0);
          rp = parse_resume(in, base);
        }
      }
      std::ofstream trace_out;
      if (!trace_path.empty()) trace_out.open(trace_path, rp ? std::ios::app : std::ios::trunc);
      TraceSink sink;
      if (trace_out) sink = [&](const nlohmann::json& j) { trace_out << j.dump() << '\n' << std::flush; };
      auto t = optimize(base, ev, cfg, sink, rp);
      if (t.aborted) throw std::runtime_error("optimizer aborted: " + t.error);
      CellOutcome out{*t.final_constellation, std::nullopt, t.seeds_used, std::nullopt};
      out.trace = std::move(t);
      return out;
    }
  }
  throw invalid_config("unhandled strategy");
}

/// One row: build the strategy's constellation, then measure it on the
/// validation seed. Failures produce a row with status "failed".
inline ResultRow run_cell(const ExperimentSpec& spec, Strategy st, double power, const Constellation4D& base,
                          bool resume = false, bool write_files = true) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultRow row;
  row.strategy = to_string(st);
  row.base = st == Strategy::md_ball ? "pam16-4d" : spec.base;
  row.launch_power_dbm = power;
  row.fingerprint = detail::cell_fingerprint(spec, st, power);
  if (st == Strategy::md_ball) row.n_ball = spec.n_ball;
  auto link = spec.link;
  link.total_launch_power = power;
  const auto seeds = cell_seeds(link, power);
  row.validation_seed = seeds.validation;
  try {
    const std::string stem = spec.output_dir + "/" + row.strategy + detail::power_tag(power);
    auto out = build_strategy(spec, st, link, base, write_files ? stem + ".trace.ndjson" : "", resume);
    if (out.training_seeds.count(seeds.validation))
      throw std::logic_error("validation seed collides with a training seed");
    if (write_files) write_constellation(out.constellation, stem + ".constellation.json");
    auto vlink = link;
    vlink.seed = seeds.validation;
    const auto r = estimate_air(simulate_wdm(out.constellation, vlink), out.constellation);
    row.mi_bits_per_4d = r.mi_bits_per_4d;
    row.mi_se = r.mi_se;
    row.snr_eff_db = r.snr_eff_db;
    row.papr = r.papr;
    row.entropy_bits = r.entropy_bits;
    row.nonzero_points = out.constellation.support_size();
    row.nonzero_amplitudes = detail::nonzero_amplitudes(out.constellation);
    row.lambda = out.lambda;
  } catch (const std::exception& e) {
    row.status = "failed";
    row.error = e.what();
    std::replace(row.error.begin(), row.error.end(), '\n', ' ');
  }
  row.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

namespace detail {

// Runs jobs over a pool; `emit` is called under a lock, once per finished job.
inline void run_pool(std::size_t n_jobs, int workers, const std::function<ResultRow(std::size_t)>& job,
                     const std::function<void(std::size_t, const ResultRow&)>& emit) {
  std::atomic<std::size_t> next{0};
  std::mutex m;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n_jobs;) {
      auto row = job(i);
      std::lock_guard lock(m);
      emit(i, row);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }
}

// Opens results.csv for appending, writing a header if the file is new or
// resume is off. Returns rows already present (resume only).
inline std::vector<ResultRow> open_results(const std::string& path, bool resume, std::ofstream& out) {
  std::vector<ResultRow> existing;
  if (resume && std::filesystem::exists(path)) existing = read_csv(path);
  out.open(path, std::ios::trunc);
  if (!out) throw invalid_config("cannot write " + path);
  out << csv_header() << '\n';
  for (const auto& r : existing)
    if (r.status == "ok") out << to_csv_line(r) << '\n';
  out.flush();
  return existing;
}

}  // namespace detail

/// One row per (strategy, power), in spec order. With resume, ok rows whose
/// fingerprint matches are reused verbatim.
inline std::vector<ResultRow> run_power_sweep(const ExperimentSpec& spec, const SweepOptions& opt = {}) {
  spec.validate();
  const auto base = build_base(spec.base);
  struct Cell {
    Strategy st;
    double power;
  };
  std::vector<Cell> cells;
  for (auto st : spec.strategies)
    for (double p : spec.power_sweep) cells.push_back({st, p});

  std::ofstream csv;
  std::vector<ResultRow> existing;
  if (opt.write_files) {
    std::filesystem::create_directories(spec.output_dir);
    existing = detail::open_results(spec.output_dir + "/results.csv", opt.resume, csv);
  }
  std::map<std::uint64_t, ResultRow> done;
  for (const auto& r : existing)
    if (r.status == "ok") done[r.fingerprint] = r;

  std::vector<ResultRow> rows(cells.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto fp = detail::cell_fingerprint(spec, cells[i].st, cells[i].power);
    if (auto it = done.find(fp); it != done.end()) {
      rows[i] = it->second;
      if (opt.log) opt.log(std::string("skip ") + to_string(cells[i].st) + " " + detail::power_tag(cells[i].power));
    } else {
      todo.push_back(i);
    }
  }
  detail::run_pool(
      todo.size(), opt.workers,
      [&](std::size_t k) {
        const auto& c = cells[todo[k]];
        return run_cell(spec, c.st, c.power, base, opt.resume, opt.write_files);
      },
      [&](std::size_t k, const ResultRow& row) {
        rows[todo[k]] = row;
        if (csv) csv << to_csv_line(row) << '\n' << std::flush;
        if (opt.log)
          opt.log(row.strategy + " " + detail::power_tag(row.launch_power_dbm) + " " + row.status + " mi=" +
                  detail::fmt_double(row.mi_bits_per_4d));
      });
  return rows;
}

/// MD-ball rows at the first power of the sweep, each with a gain against
/// uniform 64^2QAM measured on the same validation seed. The baseline row
/// comes first.
inline std::vector<ResultRow> run_size_study(const ExperimentSpec& spec, const std::vector<std::size_t>& sizes,
                                             const SweepOptions& opt = {}) {
  if (sizes.empty()) throw invalid_config("no sizes given");
  for (auto n : sizes)
    if (n < 1 || n > 65536) throw invalid_config("size " + std::to_string(n) + " outside [1, 65536]");
  auto s = spec;
  s.strategies = {Strategy::md_ball};
  s.n_ball = sizes.front();
  s.validate();
  const double power = s.power_sweep.front();

  std::ofstream csv;
  std::vector<ResultRow> existing;
  if (opt.write_files) {
    std::filesystem::create_directories(s.output_dir);
    existing = detail::open_results(s.output_dir + "/sizes.csv", opt.resume, csv);
  }
  std::map<std::uint64_t, ResultRow> done;
  for (const auto& r : existing)
    if (r.status == "ok") done[r.fingerprint] = r;

  auto baseline_spec = s;
  baseline_spec.base = "qam64sq";
  baseline_spec.strategies = {Strategy::uniform};
  baseline_spec.n_ball.reset();
  const auto q64 = build_product_qam(64);
  auto compute = [&](const ExperimentSpec& sp, Strategy st, const Constellation4D& b) {
    const auto fp = detail::cell_fingerprint(sp, st, power);
    if (auto it = done.find(fp); it != done.end()) return it->second;
    return run_cell(sp, st, power, b, opt.resume, opt.write_files);
  };
  std::vector<ResultRow> rows;
  auto baseline = compute(baseline_spec, Strategy::uniform, q64);
  if (csv && !done.count(baseline.fingerprint)) csv << to_csv_line(baseline) << '\n' << std::flush;
  rows.push_back(baseline);

  std::vector<ResultRow> ball(sizes.size());
  const auto pam = build_product_pam16_4d();
  detail::run_pool(
      sizes.size(), opt.workers,
      [&](std::size_t k) {
        auto sp = s;
        sp.n_ball = sizes[k];
        auto row = compute(sp, Strategy::md_ball, pam);
        if (row.status == "ok" && baseline.status == "ok") {
          row.gain_bits = row.mi_bits_per_4d - baseline.mi_bits_per_4d;
          row.gain_se = std::hypot(row.mi_se, baseline.mi_se);
        }
        return row;
      },
      [&](std::size_t k, const ResultRow& row) {
        ball[k] = row;
        if (csv && !done.count(row.fingerprint)) csv << to_csv_line(row) << '\n' << std::flush;
        if (opt.log) opt.log("n_ball=" + std::to_string(sizes[k]) + " " + row.status);
      });
  rows.insert(rows.end(), ball.begin(), ball.end());
  return rows;
}

// ---------------------------------------------------------------------------
// Amplitude PMF report.

struct AmplitudeRow {
  double energy = 0.0;
  std::size_t class_size = 0;
  double probability = 0.0;
  double scale = 1.0;
  bool pruned = false;
};

struct AmplitudeReport {
  std::vector<AmplitudeRow> rows;  // ascending energy
  double total_probability = 0.0;
  std::size_t total_points = 0;
  std::size_t nonzero_classes = 0;
};

inline AmplitudeReport report_amplitude_pmf(const Constellation4D& c) {
  AmplitudeReport rep;
  const auto acs = amplitude_classes(c);
  for (const auto& cls : acs.classes) {
    AmplitudeRow r;
    r.energy = cls.energy;
    r.class_size = cls.members.size();
    for (auto i : cls.members) r.probability += c.prob(i);
    r.scale = c.meta().point_scale.empty() ? 1.0 : c.meta().point_scale[cls.members.front()];
    r.pruned = r.probability == 0.0;
    rep.total_probability += r.probability;
    rep.total_points += r.class_size;
    if (!r.pruned) ++rep.nonzero_classes;
    rep.rows.push_back(r);
  }
  return rep;
}

inline AmplitudeReport report_amplitude_pmf(const std::string& constellation_file) {
  return report_amplitude_pmf(read_constellation(constellation_file));
}

inline std::string to_csv(const AmplitudeReport& rep) {
  using detail::fmt_double;
  std::string out = "energy,class_size,probability,scale,pruned\n";
  for (const auto& r : rep.rows)
    out += fmt_double(r.energy) + "," + std::to_string(r.class_size) + "," + fmt_double(r.probability) + "," +
           fmt_double(r.scale) + "," + (r.pruned ? "1" : "0") + "\n";
  out += "total," + std::to_string(rep.total_points) + "," + fmt_double(rep.total_probability) + ",," +
         std::to_string(rep.rows.size() - rep.nonzero_classes) + "\n";
  return out;
}

}  // namespace shapeopt
