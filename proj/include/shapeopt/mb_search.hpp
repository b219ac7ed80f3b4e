#pragma once

// Maxwell-Boltzmann reference matched to an AWGN SNR: the lambda >= 0 that
// maximizes the numeric AWGN MI.

#include <algorithm>
#include <cmath>
#include <utility>

#include "shapeopt/air.hpp"
#include "shapeopt/constellation.hpp"

namespace shapeopt {

struct MbSearchResult {
  Constellation4D constellation;
  double lambda = 0.0;
  double mi_bits_per_4d = 0.0;
  double resolution = 0.0;  // half-width of the final golden-section bracket
};

struct MbSearchOptions {
  double lambda_max = 8.0;
  double coarse_step = 0.5;
  double tolerance = 1e-3;
  AwgnOracleOptions oracle{1024, 1 << 17, 0x6d62ULL};
};

/// Coarse scan of lambda in [0, lambda_max], then golden-section refinement
/// around the best coarse point. lambda = 0 is always a candidate, so the
/// result never falls below the uniform PMF's MI under the same oracle.
inline MbSearchResult mb_for_awgn_snr(const Constellation4D& c, double snr_db,
                                      const MbSearchOptions& opt = {}) {
  auto mi = [&](double lambda) { return awgn_mi_oracle(mb_pmf(c, lambda), snr_db, opt.oracle); };

  double best_l = 0.0;
  double best = mi(0.0);
  for (double l = opt.coarse_step; l <= opt.lambda_max + 1e-12; l += opt.coarse_step) {
    const double v = mi(l);
    if (v > best) {
      best = v;
      best_l = l;
    }
  }

  double lo = std::max(0.0, best_l - opt.coarse_step);
  double hi = std::min(opt.lambda_max, best_l + opt.coarse_step);
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
  double fa = mi(a), fb = mi(b);
  while (hi - lo > 2.0 * opt.tolerance) {
    if (fa >= fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - phi * (hi - lo);
      fa = mi(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + phi * (hi - lo);
      fb = mi(b);
    }
  }
  for (auto [l, v] : {std::pair{a, fa}, std::pair{b, fb}}) {
    if (v > best) {
      best = v;
      best_l = l;
    }
  }
  return {mb_pmf(c, best_l), best_l, best, 0.5 * (hi - lo)};
}

}  // namespace shapeopt
