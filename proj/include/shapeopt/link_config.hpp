#pragma once

// Physical and DSP parameters of the simulated WDM link.
//
// JSON schema (all keys optional, defaults below; units in the key comments):
//   n_channels             odd count
//   symbol_rate            Baud
//   channel_spacing        Hz
//   span_length            km
//   attenuation            dB/km
//   dispersion             ps/nm/km
//   gamma                  1/W/km
//   center_wavelength      nm
//   edfa_noise_figure      dB, or "off" / null for a noiseless amplifier
//   received_power_target  dBm (total over the WDM band)
//   total_launch_power     dBm
//   launch_power_mode      "total" | "per_channel"
//   rrc_rolloff            [0, 1]
//   samples_per_symbol     count
//   ssfm_step              km
//   ssfm_max_phase         rad; > 0 bounds the nonlinear phase per step
//   n_symbols              count
//   seed                   integer

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

#include "shapeopt/errors.hpp"
#include "shapeopt/rng.hpp"

namespace shapeopt {

enum class LaunchPowerMode { total, per_channel };

struct LinkConfig {
  int n_channels = 5;
  double symbol_rate = 30e9;
  double channel_spacing = 50e9;
  double span_length = 250.0;
  double attenuation = 0.2;
  double dispersion = 17.0;
  double gamma = 1.3;
  double center_wavelength = 1550.0;
  std::optional<double> edfa_noise_figure = 5.0;
  double received_power_target = 0.0;
  double total_launch_power = 18.5;
  LaunchPowerMode launch_power_mode = LaunchPowerMode::total;
  double rrc_rolloff = 0.1;
  int samples_per_symbol = 16;
  double ssfm_step = 0.1;
  double ssfm_max_phase = 0.0;
  std::size_t n_symbols = 1 << 14;
  std::uint64_t seed = 1;

  bool noise_enabled() const { return edfa_noise_figure.has_value(); }

  double per_channel_launch_power_w() const {
    const double p = 1e-3 * std::pow(10.0, total_launch_power / 10.0);
    return launch_power_mode == LaunchPowerMode::total ? p / n_channels : p;
  }
  double total_launch_power_w() const { return per_channel_launch_power_w() * n_channels; }
  double sample_rate() const { return samples_per_symbol * symbol_rate; }

  void validate() const {
    if (n_channels < 1 || n_channels % 2 == 0)
      throw invalid_config("n_channels must be odd and >= 1");
    if (!(symbol_rate > 0.0)) throw invalid_config("symbol_rate must be positive");
    if (n_channels > 1 && !(channel_spacing > 0.0))
      throw invalid_config("channel_spacing must be positive");
    if (samples_per_symbol < 1) throw invalid_config("samples_per_symbol must be >= 1");
    if (!(sample_rate() > n_channels * channel_spacing))
      throw invalid_config("simulation bandwidth does not cover the WDM spectrum");
    if (!(ssfm_step > 0.0)) throw invalid_config("ssfm_step must be positive");
    if (ssfm_max_phase < 0.0) throw invalid_config("ssfm_max_phase must be >= 0");
    if (n_symbols == 0) throw invalid_config("n_symbols must be positive");
    if (span_length < 0.0) throw invalid_config("span_length must be >= 0");
    if (attenuation < 0.0) throw invalid_config("attenuation must be >= 0");
    if (!(rrc_rolloff >= 0.0 && rrc_rolloff <= 1.0)) throw invalid_config("rrc_rolloff outside [0, 1]");
    if (!(center_wavelength > 0.0)) throw invalid_config("center_wavelength must be positive");
    for (double v : {symbol_rate, channel_spacing, span_length, attenuation, dispersion, gamma,
                     received_power_target, total_launch_power})
      if (!std::isfinite(v)) throw invalid_config("non-finite link parameter");
  }
};

/// Desk-scale link: 3 x 8 GBaud, 10^4 symbols, 1 km steps.
inline LinkConfig desk_preset() {
  LinkConfig c;
  c.n_channels = 3;
  c.symbol_rate = 8e9;
  c.channel_spacing = 12.5e9;
  c.samples_per_symbol = 8;
  c.ssfm_step = 1.0;
  c.n_symbols = 10000;
  return c;
}

/// Full-scale link: 5 x 30 GBaud on a 50 GHz grid, 0.1 km steps.
inline LinkConfig paper_preset() {
  LinkConfig c;
  c.n_symbols = 1 << 16;
  return c;
}

inline nlohmann::json to_json(const LinkConfig& c) {
  nlohmann::json j = {
      {"n_channels", c.n_channels},
      {"symbol_rate", c.symbol_rate},
      {"channel_spacing", c.channel_spacing},
      {"span_length", c.span_length},
      {"attenuation", c.attenuation},
      {"dispersion", c.dispersion},
      {"gamma", c.gamma},
      {"center_wavelength", c.center_wavelength},
      {"received_power_target", c.received_power_target},
      {"total_launch_power", c.total_launch_power},
      {"launch_power_mode", c.launch_power_mode == LaunchPowerMode::total ? "total" : "per_channel"},
      {"rrc_rolloff", c.rrc_rolloff},
      {"samples_per_symbol", c.samples_per_symbol},
      {"ssfm_step", c.ssfm_step},
      {"ssfm_max_phase", c.ssfm_max_phase},
      {"n_symbols", c.n_symbols},
      {"seed", c.seed},
  };
  if (c.edfa_noise_figure)
    j["edfa_noise_figure"] = *c.edfa_noise_figure;
  else
    j["edfa_noise_figure"] = "off";
  return j;
}

/// Overlays the keys present in j onto base. Unknown keys are rejected.
inline LinkConfig link_config_from_json(const nlohmann::json& j, LinkConfig c = {}) {
  if (!j.is_object()) throw invalid_config("link config must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_channels") c.n_channels = v.get<int>();
      else if (key == "symbol_rate") c.symbol_rate = v.get<double>();
      else if (key == "channel_spacing") c.channel_spacing = v.get<double>();
      else if (key == "span_length") c.span_length = v.get<double>();
      else if (key == "attenuation") c.attenuation = v.get<double>();
      else if (key == "dispersion") c.dispersion = v.get<double>();
      else if (key == "gamma") c.gamma = v.get<double>();
      else if (key == "center_wavelength") c.center_wavelength = v.get<double>();
      else if (key == "edfa_noise_figure") {
        if (v.is_null() || (v.is_string() && v.get<std::string>() == "off"))
          c.edfa_noise_figure.reset();
        else
          c.edfa_noise_figure = v.get<double>();
      }
      else if (key == "received_power_target") c.received_power_target = v.get<double>();
      else if (key == "total_launch_power") c.total_launch_power = v.get<double>();
      else if (key == "launch_power_mode") {
        const auto s = v.get<std::string>();
        if (s == "total") c.launch_power_mode = LaunchPowerMode::total;
        else if (s == "per_channel") c.launch_power_mode = LaunchPowerMode::per_channel;
        else throw invalid_config("launch_power_mode must be total or per_channel");
      }
      else if (key == "rrc_rolloff") c.rrc_rolloff = v.get<double>();
      else if (key == "samples_per_symbol") c.samples_per_symbol = v.get<int>();
      else if (key == "ssfm_step") c.ssfm_step = v.get<double>();
      else if (key == "ssfm_max_phase") c.ssfm_max_phase = v.get<double>();
      else if (key == "n_symbols") c.n_symbols = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw invalid_config("unknown link config key \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw invalid_config(std::string("link config: ") + e.what());
  }
  c.validate();
  return c;
}

/// Hash of the channel definition. Seed and symbol count are excluded unless
/// requested, so reports from different Monte-Carlo runs stay comparable.
inline std::uint64_t fingerprint(const LinkConfig& c, bool with_seed = false) {
  auto j = to_json(c);
  if (!with_seed) {
    j.erase("seed");
    j.erase("n_symbols");
  }
  return fnv1a64(j.dump());
}

}  // namespace shapeopt
