#pragma once

// Channels that turn a shaped constellation into paired tx/rx 4D symbols:
// an AWGN fast path and the full dual-polarization WDM link (RRC pulses,
// split-step Manakov propagation, receiver EDFA, CDC, matched filter).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <bit>
#include <type_traits>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "shapeopt/constellation.hpp"
#include "shapeopt/errors.hpp"
#include "shapeopt/fft.hpp"
#include "shapeopt/link_config.hpp"
#include "shapeopt/rng.hpp"

namespace shapeopt {

using cplx = std::complex<double>;

namespace phys {
inline constexpr double planck = 6.62607015e-34;     // J s
inline constexpr double light_speed = 299792458.0;   // m/s
inline constexpr double manakov_factor = 8.0 / 9.0;
}  // namespace phys

struct SymbolBatch {
  std::vector<std::uint32_t> tx_index;
  std::vector<Point4> tx;  // constellation values (unit mean energy)
  std::vector<Point4> rx;  // post-DSP, one sample per symbol, normalized to the tx scale
  double launch_scale = 1.0;  // sqrt(W) per unit constellation amplitude at the fiber input
  std::uint64_t config_fingerprint = 0;   // link config (with seed) + constellation
  std::uint64_t channel_fingerprint = 0;  // channel only; equal for comparable runs
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return tx.size(); }
};

inline std::uint64_t fingerprint(const Constellation4D& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](double v) {
    char b[sizeof(double)];
    std::memcpy(b, &v, sizeof v);
    h = fnv1a64(std::string_view(b, sizeof b), h);
  };
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (double v : c.point(i)) mix(v);
    mix(c.prob(i));
  }
  return h;
}

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// I.i.d. indices drawn from c's PMF by inverse CDF. Zero-probability points
/// are never drawn.
inline std::vector<std::uint32_t> sample_symbols(const Constellation4D& c, std::size_t n,
                                                 std::uint64_t seed) {
  if (n == 0) throw invalid_argument("sample count must be positive");
  std::vector<double> cdf(c.size());
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    acc += c.prob(i);
    cdf[i] = acc;
    if (c.prob(i) > 0.0) last = i;
  }
  for (std::size_t i = last; i < c.size(); ++i) cdf[i] = 1.0;
  auto rng = make_rng(seed, "symbols");
  std::vector<std::uint32_t> out(n);
  for (auto& o : out) {
    const double u = uniform01(rng);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    o = static_cast<std::uint32_t>(std::min<std::size_t>(it - cdf.begin(), last));
  }
  return out;
}

/// rx = x + n with total noise variance per 4D symbol E||X||^2 / SNR.
/// snr_db = +inf gives a noiseless copy.
inline SymbolBatch simulate_awgn(const Constellation4D& c, const std::vector<std::uint32_t>& tx,
                                 double snr_db, std::uint64_t seed) {
  SymbolBatch b;
  b.tx_index = tx;
  b.seed = seed;
  b.tx.reserve(tx.size());
  for (auto i : tx) {
    if (i >= c.size()) throw invalid_argument("symbol index out of range");
    b.tx.push_back(c.point(i));
  }
  b.rx = b.tx;
  if (!(snr_db == std::numeric_limits<double>::infinity())) {
    const double sigma = std::sqrt(c.mean_energy() / (4.0 * std::pow(10.0, snr_db / 10.0)));
    auto rng = make_rng(seed, "awgn");
    std::normal_distribution<double> nd(0.0, sigma);
    for (auto& y : b.rx)
      for (double& v : y) v += nd(rng);
  }
  const std::string tag = "awgn:" + std::to_string(snr_db);
  b.channel_fingerprint = fnv1a64(tag);
  b.config_fingerprint = fnv1a64(tag + ":" + std::to_string(seed), fingerprint(c));
  return b;
}

/// Complex scalar least-squares gain of rx on tx over both polarizations.
inline cplx ls_gain(const SymbolBatch& b) {
  cplx num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    const auto& x = b.tx[k];
    const auto& y = b.rx[k];
    for (int p = 0; p < 2; ++p) {
      const cplx xc(x[2 * p], x[2 * p + 1]);
      const cplx yc(y[2 * p], y[2 * p + 1]);
      num += std::conj(xc) * yc;
      den += std::norm(xc);
    }
  }
  if (!(den > 0.0)) throw invalid_argument("zero-power transmitted batch");
  return num / den;
}

inline constexpr double kSnrCapDb = 200.0;

/// SNR after fitting rx ~ h * tx with a complex scalar h. Capped at 200 dB.
inline double effective_snr(const SymbolBatch& b) {
  if (b.size() == 0) throw invalid_argument("empty batch");
  const cplx h = ls_gain(b);
  double sig = 0.0, err = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    for (int p = 0; p < 2; ++p) {
      const cplx xc(b.tx[k][2 * p], b.tx[k][2 * p + 1]);
      const cplx yc(b.rx[k][2 * p], b.rx[k][2 * p + 1]);
      sig += std::norm(h * xc);
      err += std::norm(yc - h * xc);
    }
  }
  if (!(sig > 0.0)) throw invalid_argument("zero-power received batch");
  if (err <= 0.0) return kSnrCapDb;
  return std::min(kSnrCapDb, 10.0 * std::log10(sig / err));
}

// ---------------------------------------------------------------------------
// Fiber and DSP building blocks.

namespace dsp {

/// beta2 in s^2/km from D in ps/nm/km at wavelength lambda_nm.
inline double beta2_from_dispersion(double d_ps_nm_km, double lambda_nm) {
  const double lambda = lambda_nm * 1e-9;
  return -(d_ps_nm_km * 1e-3) * lambda * lambda / (2.0 * std::numbers::pi * phys::light_speed);
}

inline double alpha_neper_per_km(double db_per_km) { return db_per_km / (10.0 * std::log10(std::numbers::e)); }

inline double photon_energy(double lambda_nm) {
  return phys::planck * phys::light_speed / (lambda_nm * 1e-9);
}

/// Raised-cosine spectrum normalized to 1 in the passband.
inline double raised_cosine(double f, double symbol_rate, double rolloff) {
  const double af = std::abs(f);
  const double f1 = (1.0 - rolloff) * symbol_rate / 2.0;
  const double f2 = (1.0 + rolloff) * symbol_rate / 2.0;
  if (rolloff == 0.0) return af < f1 ? 1.0 : (af == f1 ? 0.5 : 0.0);
  if (af <= f1) return 1.0;
  if (af > f2) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi / (rolloff * symbol_rate) * (af - f1)));
}

/// Transmit RRC response on the DFT grid, scaled so that tx * rx / sps is a
/// Nyquist cascade that returns the symbols exactly at the symbol instants.
inline std::vector<double> rrc_response(std::size_t n, double fs, double symbol_rate, double rolloff,
                                        int sps) {
  std::vector<double> g(n);
  for (std::size_t m = 0; m < n; ++m)
    g[m] = sps * std::sqrt(raised_cosine(fft::bin_frequency(m, n, fs), symbol_rate, rolloff));
  return g;
}

/// exp(j beta2/2 w^2 L - alpha/2 L) on the DFT grid.
inline std::vector<cplx> linear_response(std::size_t n, double fs, double beta2, double alpha,
                                         double length) {
  std::vector<cplx> h(n);
  for (std::size_t m = 0; m < n; ++m) {
    const double w = 2.0 * std::numbers::pi * fft::bin_frequency(m, n, fs);
    h[m] = std::exp(cplx(-0.5 * alpha * length, 0.5 * beta2 * w * w * length));
  }
  return h;
}

inline void multiply(fft::Buffer& b, const std::vector<cplx>& h) {
  for (std::size_t m = 0; m < b.size(); ++m) b[m] *= h[m];
}

struct FiberParams {
  double length = 0.0;       // km
  double step = 0.1;         // km
  double max_phase = 0.0;    // rad per step, 0 = uniform stepping
  double alpha = 0.0;        // 1/km (power)
  double beta2 = 0.0;        // s^2/km
  double gamma = 0.0;        // 1/W/km, Kerr coefficient before the Manakov factor
  double sample_rate = 1.0;  // Hz
};

namespace detail {
inline void kerr_rotate(fft::Buffer& x, fft::Buffer& y, double coeff, std::size_t step) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double p = std::norm(x[i]) + std::norm(y[i]);
    acc += p;
    const double phi = coeff * p;
    const cplx r(std::cos(phi), std::sin(phi));
    x[i] *= r;
    y[i] *= r;
  }
  if (!std::isfinite(acc)) throw numeric_divergence("non-finite field in split-step propagation", step);
}
}  // namespace detail

/// Symmetric split-step integration of the Manakov equation, in place on the
/// time-domain fields of the two polarizations (cyclic boundary).
///   dE/dz = -alpha/2 E - j beta2/2 d2E/dt2 + j (8/9) gamma |E|^2 E
/// Returns the number of steps taken.
inline std::size_t propagate_manakov(fft::Buffer& ex, fft::Buffer& ey, const FiberParams& fp) {
  if (fp.length <= 0.0) return 0;
  if (!(fp.step > 0.0)) throw invalid_config("ssfm step must be positive");
  const std::size_t n = ex.size();
  const fft::Plan plan(n);
  const double g = phys::manakov_factor * fp.gamma;

  if (g == 0.0) {
    const auto whole = linear_response(n, fp.sample_rate, fp.beta2, fp.alpha, fp.length);
    for (auto* b : {&ex, &ey}) {
      plan.forward(*b);
      multiply(*b, whole);
      plan.backward(*b);
    }
    return 1;
  }

  if (fp.max_phase <= 0.0) {
    const auto steps = static_cast<std::size_t>(std::ceil(fp.length / fp.step - 1e-9));
    const double h = fp.length / static_cast<double>(steps);
    const auto half = linear_response(n, fp.sample_rate, fp.beta2, fp.alpha, 0.5 * h);
    const auto full = linear_response(n, fp.sample_rate, fp.beta2, fp.alpha, h);
    plan.forward(ex);
    plan.forward(ey);
    for (std::size_t s = 0; s < steps; ++s) {
      const auto& op = s == 0 ? half : full;
      multiply(ex, op);
      multiply(ey, op);
      plan.backward(ex);
      plan.backward(ey);
      detail::kerr_rotate(ex, ey, g * h, s);
      plan.forward(ex);
      plan.forward(ey);
    }
    multiply(ex, half);
    multiply(ey, half);
    plan.backward(ex);
    plan.backward(ey);
    return steps;
  }

  // Nonlinear-phase-bounded stepping.
  double z = 0.0;
  std::size_t s = 0;
  while (z < fp.length * (1.0 - 1e-12)) {
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, std::norm(ex[i]) + std::norm(ey[i]));
    double h = std::min(fp.step, fp.length - z);
    if (peak > 0.0) h = std::min(h, fp.max_phase / (g * peak));
    const auto half = linear_response(n, fp.sample_rate, fp.beta2, fp.alpha, 0.5 * h);
    plan.forward(ex);
    plan.forward(ey);
    multiply(ex, half);
    multiply(ey, half);
    plan.backward(ex);
    plan.backward(ey);
    detail::kerr_rotate(ex, ey, g * h, s);
    plan.forward(ex);
    plan.forward(ey);
    multiply(ex, half);
    multiply(ey, half);
    plan.backward(ex);
    plan.backward(ey);
    z += h;
    ++s;
  }
  return s;
}

}  // namespace dsp

/// Analytic 4D SNR at the matched-filter output set by receiver ASE alone:
/// P_ch,rx / (h nu (F G - 1) R_s), with G the EDFA gain and F the noise figure.
inline double ase_limited_snr_db(const LinkConfig& cfg) {
  if (!cfg.noise_enabled()) return std::numeric_limits<double>::infinity();
  const double alpha = dsp::alpha_neper_per_km(cfg.attenuation);
  const double p_in = cfg.total_launch_power_w() * std::exp(-alpha * cfg.span_length);
  const double p_target = 1e-3 * std::pow(10.0, cfg.received_power_target / 10.0);
  const double gain = p_target / p_in;
  const double nf = std::pow(10.0, *cfg.edfa_noise_figure / 10.0);
  const double noise = dsp::photon_energy(cfg.center_wavelength) * std::max(0.0, nf * gain - 1.0) * cfg.symbol_rate;
  return 10.0 * std::log10((p_target / cfg.n_channels) / noise);
}

/// Full WDM chain. The central channel's symbols are the returned tx.
inline SymbolBatch simulate_wdm(const Constellation4D& c, const LinkConfig& cfg) {
  cfg.validate();
  const std::size_t ns = cfg.n_symbols;
  const auto sps = static_cast<std::size_t>(cfg.samples_per_symbol);
  const std::size_t n = ns * sps;
  const double fs = cfg.sample_rate();
  const double df = fs / static_cast<double>(n);
  const int centre = cfg.n_channels / 2;

  const auto g_tx = dsp::rrc_response(n, fs, cfg.symbol_rate, cfg.rrc_rolloff, cfg.samples_per_symbol);
  const double amp = std::sqrt(cfg.per_channel_launch_power_w());

  SymbolBatch batch;
  batch.seed = cfg.seed;
  batch.launch_scale = amp;

  fft::Buffer ex(n), ey(n);
  {
    const fft::Plan sym_plan(ns);
    fft::Buffer sx(ns), sy(ns);
    for (int ch = 0; ch < cfg.n_channels; ++ch) {
      const auto idx = sample_symbols(c, ns, substream_seed(cfg.seed, "channel", static_cast<std::uint64_t>(ch)));
      for (std::size_t k = 0; k < ns; ++k) {
        const auto& p = c.point(idx[k]);
        sx[k] = cplx(p[0], p[1]);
        sy[k] = cplx(p[2], p[3]);
      }
      if (ch == centre) {
        batch.tx_index = idx;
        batch.tx.reserve(ns);
        for (auto i : idx) batch.tx.push_back(c.point(i));
      }
      sym_plan.forward(sx);
      sym_plan.forward(sy);
      const double f_ch = (ch - centre) * cfg.channel_spacing;
      const auto shift = static_cast<long long>(std::llround(f_ch / df));
      const auto nn = static_cast<long long>(n);
      for (std::size_t m = 0; m < n; ++m) {
        const double w = amp * g_tx[m];
        if (w == 0.0) continue;
        const auto dst = static_cast<std::size_t>(((static_cast<long long>(m) + shift) % nn + nn) % nn);
        ex[dst] += sx[m % ns] * w;
        ey[dst] += sy[m % ns] * w;
      }
    }
  }

  const fft::Plan plan(n);
  plan.backward(ex);
  plan.backward(ey);

  const double alpha = dsp::alpha_neper_per_km(cfg.attenuation);
  const double beta2 = dsp::beta2_from_dispersion(cfg.dispersion, cfg.center_wavelength);
  dsp::FiberParams fp;
  fp.length = cfg.span_length;
  fp.step = cfg.ssfm_step;
  fp.max_phase = cfg.ssfm_max_phase;
  fp.alpha = alpha;
  fp.beta2 = beta2;
  fp.gamma = cfg.gamma;
  fp.sample_rate = fs;
  dsp::propagate_manakov(ex, ey, fp);

  // Receiver EDFA: flat gain to the target power, then ASE in both polarizations.
  const double p_in = cfg.total_launch_power_w() * std::exp(-alpha * cfg.span_length);
  const double p_target = 1e-3 * std::pow(10.0, cfg.received_power_target / 10.0);
  const double gain = p_target / p_in;
  const double field_gain = std::sqrt(gain);
  for (std::size_t i = 0; i < n; ++i) {
    ex[i] *= field_gain;
    ey[i] *= field_gain;
  }
  if (cfg.noise_enabled()) {
    const double nf = std::pow(10.0, *cfg.edfa_noise_figure / 10.0);
    const double psd_per_pol = 0.5 * dsp::photon_energy(cfg.center_wavelength) * std::max(0.0, nf * gain - 1.0);
    const double sigma = std::sqrt(0.5 * psd_per_pol * fs);  // per real quadrature
    auto rng = make_rng(cfg.seed, "ase");
    std::normal_distribution<double> nd(0.0, sigma);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = nd(rng), b = nd(rng), d = nd(rng), e = nd(rng);
      ex[i] += cplx(a, b);
      ey[i] += cplx(d, e);
    }
  }

  // CDC + matched filter on the central channel, then symbol-rate sampling.
  plan.forward(ex);
  plan.forward(ey);
  const auto cdc = dsp::linear_response(n, fs, -beta2, 0.0, cfg.span_length);
  const double inv_sps = 1.0 / static_cast<double>(sps);
  for (std::size_t m = 0; m < n; ++m) {
    const cplx h = cdc[m] * (g_tx[m] * inv_sps);
    ex[m] *= h;
    ey[m] *= h;
  }
  plan.backward(ex);
  plan.backward(ey);

  const double norm = 1.0 / std::sqrt(p_target / cfg.n_channels);
  batch.rx.resize(ns);
  for (std::size_t k = 0; k < ns; ++k) {
    const cplx x = ex[k * sps] * norm;
    const cplx y = ey[k * sps] * norm;
    batch.rx[k] = {x.real(), x.imag(), y.real(), y.imag()};
  }
  batch.channel_fingerprint = fingerprint(cfg, false);
  batch.config_fingerprint = fnv1a64(std::to_string(fingerprint(cfg, true)), fingerprint(c));
  return batch;
}

// ---------------------------------------------------------------------------
// Binary persistence: "SHPOBTCH", u32 version, u32 reserved, u64 n, u64 seed,
// u64 config fingerprint, u64 channel fingerprint, f64 launch scale,
// n x u32 tx index, n x 4 f64 tx, n x 4 f64 rx. Little-endian.

inline constexpr char kBatchMagic[8] = {'S', 'H', 'P', 'O', 'B', 'T', 'C', 'H'};
inline constexpr std::uint32_t kBatchVersion = 1;

namespace detail {
template <class T>
void put_le(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}
template <class T>
T get_le(std::istream& in) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw std::runtime_error("truncated batch file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}
}  // namespace detail

inline void write_batch(const SymbolBatch& b, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kBatchMagic, sizeof kBatchMagic);
  detail::put_le<std::uint32_t>(out, kBatchVersion);
  detail::put_le<std::uint32_t>(out, 0);
  detail::put_le<std::uint64_t>(out, b.size());
  detail::put_le<std::uint64_t>(out, b.seed);
  detail::put_le<std::uint64_t>(out, b.config_fingerprint);
  detail::put_le<std::uint64_t>(out, b.channel_fingerprint);
  detail::put_le<double>(out, b.launch_scale);
  for (auto i : b.tx_index) detail::put_le<std::uint32_t>(out, i);
  for (const auto& p : b.tx)
    for (double v : p) detail::put_le<double>(out, v);
  for (const auto& p : b.rx)
    for (double v : p) detail::put_le<double>(out, v);
}

inline SymbolBatch read_batch(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kBatchMagic, 8) != 0)
    throw std::runtime_error(path + ": not a symbol batch file");
  if (detail::get_le<std::uint32_t>(in) != kBatchVersion)
    throw std::runtime_error(path + ": unsupported batch version");
  detail::get_le<std::uint32_t>(in);
  SymbolBatch b;
  const auto n = detail::get_le<std::uint64_t>(in);
  b.seed = detail::get_le<std::uint64_t>(in);
  b.config_fingerprint = detail::get_le<std::uint64_t>(in);
  b.channel_fingerprint = detail::get_le<std::uint64_t>(in);
  b.launch_scale = detail::get_le<double>(in);
  b.tx_index.resize(n);
  b.tx.resize(n);
  b.rx.resize(n);
  for (auto& i : b.tx_index) i = detail::get_le<std::uint32_t>(in);
  for (auto& p : b.tx)
    for (double& v : p) v = detail::get_le<double>(in);
  for (auto& p : b.rx)
    for (double& v : p) v = detail::get_le<double>(in);
  return b;
}

}  // namespace shapeopt
