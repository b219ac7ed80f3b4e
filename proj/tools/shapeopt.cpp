// shapeopt: launch-power sweeps, size studies, PMF reports and single
// optimizer runs. Exit codes: 0 success, 2 configuration error, 3 partial
// failure (a failed row or an aborted optimizer run).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "shapeopt/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

int finish(const std::vector<shapeopt::ResultRow>& rows) {
  for (const auto& r : rows)
    if (r.status != "ok") return kExitPartial;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace shapeopt;
  CLI::App app{"Amplitude-class shaping of 4D constellations for WDM fiber links"};
  app.require_subcommand(1);

  std::string spec_path;
  std::optional<std::string> preset;
  int workers = 1;
  bool resume = false;
  bool quiet = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--spec", spec_path, "experiment spec (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--preset", preset, "link preset overriding the experiment spec's")->check(CLI::IsMember({"desk", "paper"}));
    sub->add_flag("--resume", resume, "reuse completed cells / continue an interrupted trace");
    sub->add_flag("-q,--quiet", quiet, "no progress on stderr");
  };

  auto* sweep = app.add_subcommand("sweep", "MI vs launch power for every strategy of the experiment spec -> results.csv");
  add_common(sweep);
  sweep->add_option("--workers", workers, "concurrent sweep cells")->check(CLI::PositiveNumber);

  auto* sizes_cmd = app.add_subcommand("sizes", "MD-ball gain vs constellation size -> sizes.csv");
  add_common(sizes_cmd);
  std::vector<std::size_t> sizes;
  sizes_cmd->add_option("--sizes", sizes, "n_ball values, comma separated")->required()->delimiter(',');
  sizes_cmd->add_option("--workers", workers, "concurrent cells")->check(CLI::PositiveNumber);

  auto* pmf = app.add_subcommand("pmf", "per-amplitude probability table of a constellation file");
  std::string pmf_path;
  pmf->add_option("constellation", pmf_path, "constellation exchange file")->required()->check(CLI::ExistingFile);

  auto* opt_cmd = app.add_subcommand("optimize", "one optimizer run at the experiment spec's first power");
  add_common(opt_cmd);
  std::string out_path;
  std::optional<double> awgn_snr;
  opt_cmd->add_option("--out", out_path, "final constellation file")->required();
  opt_cmd->add_option("--awgn-snr", awgn_snr, "optimize on the AWGN channel at this 4D SNR (dB) instead of the fiber");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  auto log = [&](const std::string& s) {
    if (!quiet) std::cerr << s << std::endl;
  };

  try {
    if (*pmf) {
      std::cout << to_csv(report_amplitude_pmf(pmf_path));
      return 0;
    }

    const auto spec = read_experiment_spec(spec_path, preset);
    SweepOptions so;
    so.workers = workers;
    so.resume = resume;
    so.log = log;

    if (*sweep) {
      const auto rows = run_power_sweep(spec, so);
      log("wrote " + spec.output_dir + "/results.csv");
      return finish(rows);
    }
    if (*sizes_cmd) {
      const auto rows = run_size_study(spec, sizes, so);
      log("wrote " + spec.output_dir + "/sizes.csv");
      return finish(rows);
    }

    // optimize
    std::filesystem::create_directories(spec.output_dir);
    const std::string trace_path = spec.output_dir + "/trace.ndjson";
    const auto base = build_base(spec.base);
    if (awgn_snr) {
      std::optional<ResumePoint> rp;
      if (resume && std::filesystem::exists(trace_path)) {
        std::ifstream in(trace_path);
        rp = parse_resume(in, base);
      }
      std::ofstream trace(trace_path, rp ? std::ios::app : std::ios::trunc);
      AwgnOracleOptions oracle;
      oracle.samples_per_point = spec.optimizer.eval_symbols;
      const auto t = optimize(base, awgn_evaluator(*awgn_snr, oracle), spec.optimizer,
                              [&](const nlohmann::json& j) {
                                trace << j.dump() << '\n' << std::flush;
                                if (j.at("type") == "epoch_end") log("epoch " + j.at("epoch").dump() + " mi=" + j.at("mi").dump());
                              },
                              rp);
      write_constellation(*t.final_constellation, out_path);
      log("final mi=" + std::to_string(t.final_report.mi_bits_per_4d) + " classes=" +
          std::to_string(t.nonzero_classes) + " points=" + std::to_string(t.nonzero_points));
      if (t.aborted) {
        std::cerr << "optimizer aborted: " << t.error << '\n';
        return kExitPartial;
      }
      return 0;
    }
    auto link = spec.link;
    link.total_launch_power = spec.power_sweep.front();
    auto s = spec;
    s.strategies = {Strategy::proposed};
    try {
      const auto out = build_strategy(s, Strategy::proposed, link, base, trace_path, resume);
      write_constellation(out.constellation, out_path);
      log("final mi=" + std::to_string(out.trace->final_report.mi_bits_per_4d) + " classes=" +
          std::to_string(out.trace->nonzero_classes) + " points=" + std::to_string(out.trace->nonzero_points));
    } catch (const invalid_config&) {
      throw;
    } catch (const std::exception& e) {
      std::cerr << "optimize failed: " << e.what() << '\n';
      return kExitPartial;
    }
    return 0;
  } catch (const invalid_config& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const parse_error& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const shapeopt::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitPartial;
  }
}
