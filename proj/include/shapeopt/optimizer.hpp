#pragma once

// Greedy joint probabilistic + geometric shaping over amplitude classes.
//
// The state is one (probability, scale) pair per amplitude class of the base
// constellation. An epoch sweeps the classes; for each class every
// (probability factor, scale factor) pair of the grid is applied to the
// incumbent, the candidate is materialized with apply_class_state and scored
// by a channel evaluator, and the best candidate replaces the incumbent when
// it wins by more than the noise-aware margin. Epochs repeat until one
// improves the AIR by less than epoch_improvement_tol.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "shapeopt/air.hpp"
#include "shapeopt/constellation.hpp"
#include "shapeopt/errors.hpp"
#include "shapeopt/rng.hpp"

namespace shapeopt {

enum class SeedPolicy { common_random_numbers, fresh };
enum class SweepOrder { ascending_energy, descending_energy };

struct OptimizerConfig {
  std::vector<double> prob_grid{0.0, 0.25, 0.5, 0.8, 1.0, 1.25, 2.0, 4.0};
  std::vector<double> scale_grid{0.9, 0.95, 1.0, 1.05, 1.1};
  int max_epochs = 10;
  double epoch_improvement_tol = 0.002;
  std::size_t eval_symbols = 4096;
  SeedPolicy seed_policy = SeedPolicy::common_random_numbers;
  SweepOrder sweep_order = SweepOrder::ascending_energy;
  std::uint64_t seed = 1;
  int workers = 1;

  void validate() const {
    auto has = [](const std::vector<double>& g, double v) {
      return std::find(g.begin(), g.end(), v) != g.end();
    };
    if (!has(prob_grid, 0.0)) throw invalid_config("prob_grid must contain 0");
    if (!has(prob_grid, 1.0)) throw invalid_config("prob_grid must contain 1");
    if (!has(scale_grid, 1.0)) throw invalid_config("scale_grid must contain 1");
    for (double f : prob_grid)
      if (!(f >= 0.0) || !std::isfinite(f)) throw invalid_config("prob_grid factors must be finite and >= 0");
    for (double f : scale_grid)
      if (!(f > 0.0) || !std::isfinite(f)) throw invalid_config("scale_grid factors must be finite and > 0");
    if (max_epochs < 1) throw invalid_config("max_epochs must be >= 1");
    if (!(epoch_improvement_tol >= 0.0)) throw invalid_config("epoch_improvement_tol must be >= 0");
    if (eval_symbols == 0) throw invalid_config("eval_symbols must be positive");
    if (workers < 1) throw invalid_config("workers must be >= 1");
  }
};

inline nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"prob_grid", c.prob_grid},
          {"scale_grid", c.scale_grid},
          {"max_epochs", c.max_epochs},
          {"epoch_improvement_tol", c.epoch_improvement_tol},
          {"eval_symbols", c.eval_symbols},
          {"seed_policy", c.seed_policy == SeedPolicy::fresh ? "fresh" : "common-random-numbers"},
          {"sweep_order", c.sweep_order == SweepOrder::ascending_energy ? "ascending-energy" : "descending-energy"},
          {"seed", c.seed},
          {"workers", c.workers}};
}

inline OptimizerConfig optimizer_config_from_json(const nlohmann::json& j, OptimizerConfig c = {}) {
  if (!j.is_object()) throw invalid_config("optimizer config must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "prob_grid") c.prob_grid = v.get<std::vector<double>>();
      else if (key == "scale_grid") c.scale_grid = v.get<std::vector<double>>();
      else if (key == "max_epochs") c.max_epochs = v.get<int>();
      else if (key == "epoch_improvement_tol") c.epoch_improvement_tol = v.get<double>();
      else if (key == "eval_symbols") c.eval_symbols = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "workers") c.workers = v.get<int>();
      else if (key == "seed_policy") {
        const auto s = v.get<std::string>();
        if (s == "common-random-numbers") c.seed_policy = SeedPolicy::common_random_numbers;
        else if (s == "fresh") c.seed_policy = SeedPolicy::fresh;
        else throw invalid_config("seed_policy must be common-random-numbers or fresh");
      } else if (key == "sweep_order") {
        const auto s = v.get<std::string>();
        if (s == "ascending-energy") c.sweep_order = SweepOrder::ascending_energy;
        else if (s == "descending-energy") c.sweep_order = SweepOrder::descending_energy;
        else throw invalid_config("sweep_order must be ascending-energy or descending-energy");
      } else {
        throw invalid_config("unknown optimizer config key \"" + key + "\"");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw invalid_config(std::string("optimizer config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Maps a constellation to its AIR on some channel. Must be deterministic for
/// a given seed and safe to call concurrently.
using Evaluator = std::function<AirReport(const Constellation4D&, std::uint64_t seed)>;

/// Class set plus, per class, the last nonzero probability it carried. The
/// shadow lets a pruned class be revived by a positive probability factor.
struct ClassState {
  AmplitudeClassSet classes;
  std::vector<double> shadow;

  static ClassState from(AmplitudeClassSet acs) {
    ClassState s{std::move(acs), {}};
    for (const auto& c : s.classes.classes) s.shadow.push_back(c.probability);
    return s;
  }
};

/// Candidate state: target class probability times prob_factor (starting
/// from its shadow when pruned, capped at 1), the other classes rescaled
/// proportionally to keep the PMF normalized, target scale times
/// scale_factor. Empty when the candidate would leave no probability mass.
inline std::optional<ClassState> make_candidate(const ClassState& s, std::size_t class_id,
                                                double prob_factor, double scale_factor) {
  auto& cls = s.classes.classes;
  if (class_id >= cls.size()) throw invalid_argument("class index out of range");
  ClassState out = s;
  auto& oc = out.classes.classes;
  const double cur = cls[class_id].probability;
  const double from = cur > 0.0 ? cur : s.shadow[class_id];
  double others = 0.0;
  for (std::size_t i = 0; i < cls.size(); ++i)
    if (i != class_id) others += cls[i].probability;

  double target = std::min(1.0, from * prob_factor);
  if (others <= 0.0) {
    if (target <= 0.0) return std::nullopt;
    target = 1.0;
  } else {
    const double ratio = (1.0 - target) / others;
    for (std::size_t i = 0; i < oc.size(); ++i)
      if (i != class_id) oc[i].probability = cls[i].probability * ratio;
  }
  oc[class_id].probability = target;
  oc[class_id].scale = cls[class_id].scale * scale_factor;
  for (std::size_t i = 0; i < oc.size(); ++i)
    if (oc[i].probability > 0.0) out.shadow[i] = oc[i].probability;
  return out;
}

/// Scores one grid candidate. nullopt is the skip sentinel (no mass left).
inline std::optional<AirReport> evaluate_candidate(const ClassState& state, std::size_t class_id,
                                                   double prob_factor, double scale_factor,
                                                   const Constellation4D& base, const Evaluator& evaluator,
                                                   std::uint64_t seed) {
  auto cand = make_candidate(state, class_id, prob_factor, scale_factor);
  if (!cand) return std::nullopt;
  return evaluator(apply_class_state(base, cand->classes), seed);
}

struct StepRecord {
  int epoch = 0;
  std::size_t class_index = 0;
  double prob_factor = 1.0;
  double scale_factor = 1.0;
  double mi = 0.0;
  double se = 0.0;
  bool accepted = false;
  bool skipped = false;
};

struct OptimizerTrace {
  std::vector<StepRecord> steps;
  double initial_mi = 0.0;
  std::vector<double> epoch_mi;
  std::vector<double> accepted_mi;  // incumbent after every acceptance
  ClassState final_state;
  std::optional<Constellation4D> final_constellation;
  AirReport final_report;
  std::size_t nonzero_classes = 0;
  std::size_t nonzero_points = 0;
  int epochs_run = 0;
  bool converged = false;
  bool aborted = false;
  std::string error;
  std::set<std::uint64_t> seeds_used;
};

using TraceSink = std::function<void(const nlohmann::json&)>;

/// Where an interrupted run left off, recovered from its trace records.
struct ResumePoint {
  ClassState state;
  AirReport incumbent;
  double initial_mi = 0.0;
  double epoch_start_mi = 0.0;
  std::vector<double> epoch_mi;
  std::vector<StepRecord> steps;
  int epoch = 1;
  std::size_t next_position = 0;
  bool finished = false;
};

namespace detail {

inline nlohmann::json state_to_json(const ClassState& s) {
  nlohmann::json p = nlohmann::json::array(), sc = nlohmann::json::array();
  for (const auto& c : s.classes.classes) {
    p.push_back(c.probability);
    sc.push_back(c.scale);
  }
  return {{"probability", p}, {"scale", sc}, {"shadow", s.shadow}};
}

inline void state_from_json(const nlohmann::json& j, ClassState& s) {
  const auto p = j.at("probability").get<std::vector<double>>();
  const auto sc = j.at("scale").get<std::vector<double>>();
  const auto sh = j.at("shadow").get<std::vector<double>>();
  if (p.size() != s.classes.classes.size() || sc.size() != p.size() || sh.size() != p.size())
    throw invalid_config("resume state does not match the base constellation's classes");
  for (std::size_t i = 0; i < p.size(); ++i) {
    s.classes.classes[i].probability = p[i];
    s.classes.classes[i].scale = sc[i];
  }
  s.shadow = sh;
}

inline nlohmann::json report_brief(const AirReport& r) {
  return {{"mi", r.mi_bits_per_4d}, {"se", r.mi_se}, {"subbatch_mi", r.subbatch_mi}};
}

inline nlohmann::json step_to_json(const StepRecord& s, double energy) {
  return {{"type", "step"},         {"epoch", s.epoch},
          {"class", s.class_index}, {"energy", energy},
          {"prob_factor", s.prob_factor}, {"scale_factor", s.scale_factor},
          {"mi", s.mi},             {"se", s.se},
          {"accepted", s.accepted}, {"skipped", s.skipped}};
}

}  // namespace detail

/// Reads a trace prefix (NDJSON) written by optimize() for the same base.
inline ResumePoint parse_resume(std::istream& in, const Constellation4D& base) {
  ResumePoint rp;
  rp.state = ClassState::from(amplitude_classes(base));
  std::string line;
  std::size_t lineno = 0;
  std::size_t n_classes = rp.state.classes.classes.size();
  bool started = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw parse_error(e.what(), lineno);
    }
    const auto type = j.value("type", "");
    if (type == "start") {
      started = true;
      rp.initial_mi = j.at("initial_mi").get<double>();
      rp.epoch_start_mi = rp.initial_mi;
      rp.incumbent.mi_bits_per_4d = rp.initial_mi;
      if (j.at("n_classes").get<std::size_t>() != n_classes)
        throw invalid_config("resume trace was produced for a different base constellation");
    } else if (type == "step") {
      StepRecord s;
      s.epoch = j.at("epoch").get<int>();
      s.class_index = j.at("class").get<std::size_t>();
      s.prob_factor = j.at("prob_factor").get<double>();
      s.scale_factor = j.at("scale_factor").get<double>();
      s.mi = j.at("mi").get<double>();
      s.se = j.at("se").get<double>();
      s.accepted = j.at("accepted").get<bool>();
      s.skipped = j.at("skipped").get<bool>();
      rp.steps.push_back(s);
    } else if (type == "class_done") {
      detail::state_from_json(j.at("state"), rp.state);
      rp.incumbent.mi_bits_per_4d = j.at("incumbent").at("mi").get<double>();
      rp.incumbent.mi_se = j.at("incumbent").at("se").get<double>();
      rp.incumbent.subbatch_mi = j.at("incumbent").at("subbatch_mi").get<std::vector<double>>();
      rp.epoch = j.at("epoch").get<int>();
      rp.next_position = j.at("position").get<std::size_t>() + 1;
      rp.epoch_start_mi = j.at("epoch_start_mi").get<double>();
    } else if (type == "epoch_end") {
      rp.epoch_mi.push_back(j.at("mi").get<double>());
      rp.epoch = j.at("epoch").get<int>() + 1;
      rp.next_position = 0;
      rp.epoch_start_mi = j.at("mi").get<double>();
      if (j.at("converged").get<bool>()) rp.finished = true;
    } else if (type == "start_incumbent") {
      rp.incumbent.mi_se = j.at("incumbent").at("se").get<double>();
      rp.incumbent.subbatch_mi = j.at("incumbent").at("subbatch_mi").get<std::vector<double>>();
    }
  }
  if (!started) throw invalid_config("resume trace has no start record");
  return rp;
}

inline std::uint64_t optimizer_eval_seed(const OptimizerConfig& cfg, std::uint64_t counter) {
  return cfg.seed_policy == SeedPolicy::common_random_numbers ? substream_seed(cfg.seed, "opt-eval")
                                                              : substream_seed(cfg.seed, "opt-eval", counter);
}

/// Runs the greedy optimizer from a uniform, unscaled class state of base.
inline OptimizerTrace optimize(const Constellation4D& base, const Evaluator& evaluator,
                               const OptimizerConfig& cfg, const TraceSink& sink = {},
                               const std::optional<ResumePoint>& resume = std::nullopt) {
  cfg.validate();
  auto emit = [&](const nlohmann::json& j) {
    if (sink) sink(j);
  };

  OptimizerTrace trace;
  ClassState state = ClassState::from(amplitude_classes(base));
  const std::size_t k = state.classes.classes.size();
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < k; ++i)
    order[i] = cfg.sweep_order == SweepOrder::ascending_energy ? i : k - 1 - i;

  std::uint64_t counter = 0;
  auto next_seed = [&] {
    const auto s = optimizer_eval_seed(cfg, counter++);
    trace.seeds_used.insert(s);
    return s;
  };
  const bool crn = cfg.seed_policy == SeedPolicy::common_random_numbers;

  AirReport incumbent;
  int epoch = 1;
  std::size_t start_pos = 0;
  double epoch_start_mi = 0.0;
  bool finished = false;

  auto finalize = [&] {
    trace.final_state = state;
    trace.final_constellation = apply_class_state(base, state.classes);
    trace.final_report = incumbent;
    trace.nonzero_classes = state.classes.nonzero_classes();
    trace.nonzero_points = trace.final_constellation->support_size();
    emit({{"type", "final"},
          {"mi", incumbent.mi_bits_per_4d},
          {"nonzero_classes", trace.nonzero_classes},
          {"nonzero_points", trace.nonzero_points},
          {"epochs", trace.epochs_run},
          {"converged", trace.converged},
          {"aborted", trace.aborted},
          {"state", detail::state_to_json(state)}});
  };

  try {
    if (resume) {
      state = resume->state;
      incumbent = resume->incumbent;
      trace.initial_mi = resume->initial_mi;
      trace.epoch_mi = resume->epoch_mi;
      trace.steps = resume->steps;
      epoch = resume->epoch;
      start_pos = resume->next_position;
      epoch_start_mi = resume->epoch_start_mi;
      finished = resume->finished;
      trace.epochs_run = static_cast<int>(resume->epoch_mi.size());
      trace.converged = resume->finished;
      if (crn) trace.seeds_used.insert(optimizer_eval_seed(cfg, 0));
    } else {
      incumbent = evaluator(apply_class_state(base, state.classes), next_seed());
      trace.initial_mi = incumbent.mi_bits_per_4d;
      epoch_start_mi = incumbent.mi_bits_per_4d;
      emit({{"type", "start"},
            {"base", base.meta().name},
            {"n_points", base.size()},
            {"n_classes", k},
            {"config", to_json(cfg)},
            {"initial_mi", trace.initial_mi}});
      emit({{"type", "start_incumbent"}, {"incumbent", detail::report_brief(incumbent)}});
    }

    struct Cand {
      double pf, sf;
      std::optional<ClassState> state;
      std::optional<AirReport> report;
      std::uint64_t seed = 0;
    };

    for (; !finished && epoch <= cfg.max_epochs; ++epoch) {
      for (std::size_t pos = start_pos; pos < k; ++pos) {
        const std::size_t c = order[pos];
        const bool pruned = state.classes.classes[c].probability == 0.0;
        std::vector<Cand> cands;
        for (double pf : cfg.prob_grid)
          for (double sf : cfg.scale_grid) {
            Cand cd{pf, sf, std::nullopt, std::nullopt, 0};
            const bool noop = (pf == 1.0 && sf == 1.0 && crn) || (pruned && pf == 0.0);
            if (!noop) cd.state = make_candidate(state, c, pf, sf);
            if (cd.state) cd.seed = next_seed();
            cands.push_back(std::move(cd));
          }

        // Evaluate (optionally in parallel); reduction below is sequential.
        std::atomic<std::size_t> cursor{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        auto work = [&] {
          for (std::size_t i; (i = cursor.fetch_add(1)) < cands.size();) {
            if (!cands[i].state) continue;
            try {
              cands[i].report = evaluator(apply_class_state(base, cands[i].state->classes), cands[i].seed);
            } catch (...) {
              std::lock_guard lock(failure_mutex);
              if (!failure) failure = std::current_exception();
            }
          }
        };
        if (cfg.workers > 1) {
          std::vector<std::jthread> pool;
          for (int w = 0; w < cfg.workers; ++w) pool.emplace_back(work);
        } else {
          work();
        }
        if (failure) std::rethrow_exception(failure);

        std::optional<std::size_t> best;
        for (std::size_t i = 0; i < cands.size(); ++i) {
          if (!cands[i].report) continue;
          if (!best || cands[i].report->mi_bits_per_4d > cands[*best].report->mi_bits_per_4d) best = i;
        }
        bool accept = false;
        if (best) {
          const auto& r = *cands[*best].report;
          const double se = crn ? paired_se(r, incumbent) : std::hypot(r.mi_se, incumbent.mi_se);
          const double margin = std::max(cfg.epoch_improvement_tol / 10.0, se);
          accept = r.mi_bits_per_4d - incumbent.mi_bits_per_4d > margin;
        }
        const double energy = state.classes.classes[c].energy;
        for (std::size_t i = 0; i < cands.size(); ++i) {
          StepRecord s;
          s.epoch = epoch;
          s.class_index = c;
          s.prob_factor = cands[i].pf;
          s.scale_factor = cands[i].sf;
          s.skipped = !cands[i].report;
          s.mi = cands[i].report ? cands[i].report->mi_bits_per_4d : incumbent.mi_bits_per_4d;
          s.se = cands[i].report ? cands[i].report->mi_se : incumbent.mi_se;
          s.accepted = accept && best && i == *best;
          trace.steps.push_back(s);
          emit(detail::step_to_json(s, energy));
        }
        if (accept) {
          state = std::move(*cands[*best].state);
          incumbent = std::move(*cands[*best].report);
          trace.accepted_mi.push_back(incumbent.mi_bits_per_4d);
        }
        emit({{"type", "class_done"},
              {"epoch", epoch},
              {"position", pos},
              {"class", c},
              {"epoch_start_mi", epoch_start_mi},
              {"incumbent", detail::report_brief(incumbent)},
              {"state", detail::state_to_json(state)}});
      }
      start_pos = 0;
      trace.epoch_mi.push_back(incumbent.mi_bits_per_4d);
      trace.epochs_run = static_cast<int>(trace.epoch_mi.size());
      trace.converged = incumbent.mi_bits_per_4d - epoch_start_mi < cfg.epoch_improvement_tol;
      emit({{"type", "epoch_end"},
            {"epoch", epoch},
            {"mi", incumbent.mi_bits_per_4d},
            {"converged", trace.converged}});
      if (trace.converged) break;
      epoch_start_mi = incumbent.mi_bits_per_4d;
    }
  } catch (const std::exception& e) {
    trace.aborted = true;
    trace.error = e.what();
  }
  finalize();
  return trace;
}

struct Gain {
  double bits = 0.0;
  double se = 0.0;
};

/// a - b with the propagated jackknife error: paired over sub-batches when
/// both reports used the same seed, independent otherwise. Reports must come
/// from the same channel definition.
inline Gain shaping_gain(const AirReport& a, const AirReport& b) {
  if (a.channel_fingerprint != b.channel_fingerprint)
    throw invalid_comparison("AIR reports come from different channel configurations");
  const double se = a.seed == b.seed ? paired_se(a, b) : std::hypot(a.mi_se, b.mi_se);
  return {a.mi_bits_per_4d - b.mi_bits_per_4d, se};
}

}  // namespace shapeopt
