#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "shapeopt/air.hpp"
#include "shapeopt/mb_search.hpp"

using namespace shapeopt;

namespace {

// Uniform 16QAM^2 MI at 9 dB per 4D symbol, 4 x the 4-PAM trapezoid value.
constexpr double kUniform16sqAt9dB = 5.853764;

SymbolBatch awgn_batch(const Constellation4D& c, std::size_t n, double snr_db, std::uint64_t seed) {
  return simulate_awgn(c, sample_symbols(c, n, seed), snr_db, seed + 1000);
}

}  // namespace

TEST(AuxiliaryFit, NoiselessGivesUnitGainAndFloor) {
  const auto c = build_product_qam(16);
  const auto b = awgn_batch(c, 1000, std::numeric_limits<double>::infinity(), 1);
  const auto a = fit_gaussian_auxiliary(b);
  EXPECT_NEAR(std::abs(a.h - cplx(1, 0)), 0.0, 1e-12);
  EXPECT_EQ(a.sigma2, kVarianceFloor);
  const auto f = fit_gaussian_auxiliary(b, AuxMode::full_covariance);
  EXPECT_TRUE(f.fallback);
  EXPECT_EQ(f.mode, AuxMode::scaled_identity);
}

TEST(AuxiliaryFit, RecoversGainAndNoiseVariance) {
  const auto c = build_product_qam(64);
  const std::size_t n = 100000;
  auto b = awgn_batch(c, n, std::numeric_limits<double>::infinity(), 2);
  const double sigma2 = 0.01;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, std::sqrt(sigma2));
  for (auto& y : b.rx)
    for (double& v : y) v = 2.0 * v + nd(rng);
  const auto a = fit_gaussian_auxiliary(b);
  EXPECT_NEAR(a.h.real(), 2.0, 0.01);
  EXPECT_NEAR(a.h.imag(), 0.0, 0.01);
  EXPECT_NEAR(a.sigma2 / sigma2, 1.0, 0.02);

  const auto f = fit_gaussian_auxiliary(b, AuxMode::full_covariance);
  ASSERT_FALSE(f.fallback);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(f.covariance[i * 4 + i] / sigma2, 1.0, 0.03);
    for (int j = 0; j < 4; ++j)
      if (i != j) {
        EXPECT_LT(std::abs(f.covariance[i * 4 + j]) / sigma2, 0.03);
      }
  }

  // Least squares leaves residuals orthogonal to tx.
  double cross = 0, rr = 0, xx = 0;
  for (std::size_t k = 0; k < n; ++k)
    for (int p = 0; p < 2; ++p) {
      const cplx x(b.tx[k][2 * p], b.tx[k][2 * p + 1]);
      const cplx r = cplx(b.rx[k][2 * p], b.rx[k][2 * p + 1]) - a.h * x;
      cross += std::abs(std::conj(x) * r);
      rr += std::norm(r);
      xx += std::norm(x);
    }
  double signed_cross_re = 0;
  for (std::size_t k = 0; k < n; ++k)
    for (int p = 0; p < 2; ++p) {
      const cplx x(b.tx[k][2 * p], b.tx[k][2 * p + 1]);
      const cplx r = cplx(b.rx[k][2 * p], b.rx[k][2 * p + 1]) - a.h * x;
      signed_cross_re += (std::conj(x) * r).real();
    }
  const double corr = signed_cross_re / std::sqrt(rr * xx);
  EXPECT_LT(std::abs(corr), 3.0 / std::sqrt(2.0 * n));
  EXPECT_GT(cross, 0.0);
  EXPECT_THROW(fit_gaussian_auxiliary(awgn_batch(c, 99, 10, 1)), shapeopt::invalid_argument);
}

TEST(MutualInformation, SaturatesAtEntropyWithoutNoise) {
  const auto c = build_product_qam(64);
  const auto b = awgn_batch(c, 5000, 80.0, 3);
  const auto r = estimate_air(b, c);
  EXPECT_NEAR(r.mi_bits_per_4d, 12.0, 1e-6);
  EXPECT_LE(r.mi_bits_per_4d, r.entropy_bits);
  EXPECT_EQ(r.n_symbols, 5000u);
  EXPECT_EQ(r.subbatch_mi.size(), kJackknifeBatches);
}

TEST(MutualInformation, AgreesWithQuadratureOnAwgn) {
  const auto c = build_product_qam(16);
  for (double snr : {6.0, 10.0, 14.0}) {
    const double ref = oracle::uniform_product_qam_awgn_mi(16, snr);
    const auto r = estimate_air(awgn_batch(c, 100000, snr, 4), c);
    EXPECT_NEAR(r.mi_bits_per_4d, ref, 0.02) << snr;
    EXPECT_GT(r.mi_se, 0.0);
    EXPECT_LT(r.mi_se, 0.02);
    const auto full = estimate_air(awgn_batch(c, 100000, snr, 4), c, AuxMode::full_covariance);
    EXPECT_NEAR(full.mi_bits_per_4d, ref, 0.02) << snr;
  }
}

TEST(MutualInformation, NeverExceedsEntropyAndNeverNegative) {
  auto c = mb_pmf(build_product_qam(16), 1.5);
  for (double snr : {-20.0, 0.0, 10.0, 30.0}) {
    const auto r = estimate_air(awgn_batch(c, 2000, snr, 5), c);
    EXPECT_GE(r.mi_bits_per_4d, 0.0);
    EXPECT_LE(r.mi_bits_per_4d, r.entropy_bits);
  }
}

TEST(MutualInformation, InvariantToReceiverScaling) {
  const auto c = build_product_qam(16);
  auto b = awgn_batch(c, 20000, 9.0, 6);
  const double ref = estimate_air(b, c).mi_bits_per_4d;
  const double ref_full = estimate_air(b, c, AuxMode::full_covariance).mi_bits_per_4d;
  for (auto& y : b.rx)
    for (double& v : y) v *= 3.7;
  EXPECT_NEAR(estimate_air(b, c).mi_bits_per_4d, ref, 1e-9);
  EXPECT_NEAR(estimate_air(b, c, AuxMode::full_covariance).mi_bits_per_4d, ref_full, 1e-9);
}

TEST(MutualInformation, InvariantToPointOrder) {
  const auto base = mb_pmf(build_product_qam(16), 0.8);
  const auto b = awgn_batch(base, 20000, 8.0, 7);
  std::vector<std::size_t> perm(base.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(1));
  std::vector<Point4> pts(base.size());
  std::vector<double> pmf(base.size());
  std::vector<std::uint32_t> where(base.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    pts[i] = base.point(perm[i]);
    pmf[i] = base.prob(perm[i]);
    where[perm[i]] = static_cast<std::uint32_t>(i);
  }
  const Constellation4D shuffled(pts, pmf);
  auto pb = b;
  for (auto& i : pb.tx_index) i = where[i];
  EXPECT_EQ(estimate_air(b, base).mi_bits_per_4d, estimate_air(pb, shuffled).mi_bits_per_4d);
  EXPECT_EQ(awgn_mi_oracle(base, 8.0), awgn_mi_oracle(shuffled, 8.0));
}

TEST(MutualInformation, MonotoneInSnrOnCommonNoise) {
  const auto c = build_product_qam(16);
  const auto tx = sample_symbols(c, 20000, 8);
  double prev = 0;
  for (double snr = 0; snr <= 20; snr += 2.5) {
    const double v = estimate_air(simulate_awgn(c, tx, snr, 9), c).mi_bits_per_4d;
    EXPECT_GE(v, prev - 0.01) << snr;
    prev = v;
  }
}

TEST(MutualInformation, StableAtVarianceFloorAndLargeEnergies) {
  std::vector<Point4> pts{{1e-3, 0, 0, 0}, {0, 1e-3, 0, 0}, {1e3 * 0.7071, 0, 0, 0}, {0, 0, 1e3, 0}};
  std::vector<double> pmf{0.4999, 0.4999, 0.0001, 0.0001};
  const Constellation4D c(pts, pmf);
  const auto b = awgn_batch(c, 2000, std::numeric_limits<double>::infinity(), 10);
  AuxChannel aux;
  aux.sigma2 = kVarianceFloor;
  const auto r = mutual_information(b, c, aux);
  EXPECT_TRUE(std::isfinite(r.mi_bits_per_4d));
  EXPECT_NEAR(r.mi_bits_per_4d, r.entropy_bits, 0.05);
  for (double v : r.subbatch_mi) EXPECT_TRUE(std::isfinite(v));
}

TEST(MutualInformation, PrunedPointsDoNotAffectEstimate) {
  const auto base = build_product_qam(64);
  auto acs = amplitude_classes(base);
  acs.classes[0].probability += acs.classes[7].probability + acs.classes[20].probability;
  acs.classes[7].probability = 0;
  acs.classes[20].probability = 0;
  const auto c = apply_class_state(base, acs);
  const auto d = drop_pruned(c);
  const auto bc = awgn_batch(c, 10000, 12.0, 11);
  const auto bd = awgn_batch(d, 10000, 12.0, 11);
  ASSERT_EQ(bc.tx, bd.tx);
  ASSERT_EQ(bc.rx, bd.rx);
  EXPECT_EQ(estimate_air(bc, c).mi_bits_per_4d, estimate_air(bd, d).mi_bits_per_4d);
  AwgnOracleOptions quick;
  quick.samples_per_point = 512;
  EXPECT_EQ(awgn_mi_oracle(c, 12.0, quick), awgn_mi_oracle(d, 12.0, quick));
}

TEST(MutualInformation, RejectsBadInputs) {
  const auto c = build_product_qam(4);
  auto b = awgn_batch(c, 200, 10, 1);
  b.tx_index[3] = 99;
  EXPECT_THROW(mutual_information(b, c, fit_gaussian_auxiliary(b)), shapeopt::invalid_argument);
  SymbolBatch empty;
  EXPECT_THROW(mutual_information(empty, c, {}), shapeopt::invalid_argument);
}

TEST(Jackknife, KnownValuesAndPairing) {
  std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  EXPECT_NEAR(jackknife_se(v), std::sqrt(82.5 / 90.0), 1e-15);
  EXPECT_EQ(jackknife_se({3.0}), 0.0);
  AirReport a, b;
  a.subbatch_mi = v;
  b.subbatch_mi = v;
  for (auto& x : b.subbatch_mi) x += 0.5;
  EXPECT_NEAR(paired_se(a, b), 0.0, 1e-15);
}

TEST(AwgnOracle, OrbitReductionCounts) {
  EXPECT_EQ(detail::orbit_representatives(detail::make_support(build_product_qam(64))).size(), 35u);
  EXPECT_EQ(detail::orbit_representatives(detail::make_support(build_product_qam(16))).size(), 5u);
  // Breaking the symmetry disables the reduction.
  auto base = build_product_qam(16);
  auto pmf = base.pmf();
  pmf[0] *= 2;
  pmf[1] = 0;
  const Constellation4D skew(base.points(), pmf);
  EXPECT_TRUE(detail::orbit_representatives(detail::make_support(skew)).empty());
}

TEST(AwgnOracle, MatchesIndependentQuadrature) {
  const auto c = build_product_qam(16);
  const double ref = oracle::uniform_product_qam_awgn_mi(16, 9.0);
  EXPECT_NEAR(ref, kUniform16sqAt9dB, 1e-5);
  const auto est = awgn_mi_estimate(c, 9.0);
  EXPECT_NEAR(est.mi_bits_per_4d, kUniform16sqAt9dB, 0.01);
  EXPECT_LT(est.mi_se, 0.003);
  for (double snr : {6.0, 10.0, 14.0})
    EXPECT_NEAR(awgn_mi_oracle(c, snr), oracle::uniform_product_qam_awgn_mi(16, snr), 0.01) << snr;
}

TEST(AwgnOracle, AsymmetricProductPmfMatchesQuadrature) {
  // A product PMF with the same skewed 4-PAM law in each dimension has MI equal
  // to four times the per-dimension value and no signed-permutation symmetry.
  const std::vector<double> law{0.1, 0.2, 0.3, 0.4};
  const auto base = build_product_qam(16);
  std::vector<double> levels;
  for (const auto& x : base.points()) levels.push_back(x[0]);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  ASSERT_EQ(levels.size(), 4u);
  std::vector<double> pmf;
  for (const auto& x : base.points()) {
    double p = 1;
    for (double v : x) p *= law[std::lower_bound(levels.begin(), levels.end(), v) - levels.begin()];
    pmf.push_back(p);
  }
  const Constellation4D c(base.points(), pmf);
  ASSERT_TRUE(detail::orbit_representatives(detail::make_support(c)).empty());
  for (double snr : {6.0, 12.0}) {
    const double ref = 4.0 * oracle::pam_awgn_mi(law, std::pow(10.0, snr / 10.0));
    AwgnOracleOptions every_point;
    every_point.samples_per_point = 2048;
    every_point.max_samples = 1 << 20;
    const auto a = awgn_mi_estimate(c, snr, every_point);
    EXPECT_EQ(a.n_symbols, 256u * 2048u);
    EXPECT_NEAR(a.mi_bits_per_4d, ref, 0.02) << snr;
    AwgnOracleOptions systematic;
    systematic.max_samples = 1 << 18;
    const auto b = awgn_mi_estimate(c, snr, systematic);
    EXPECT_EQ(b.n_symbols, systematic.max_samples);
    EXPECT_NEAR(b.mi_bits_per_4d, ref, 0.02) << snr;
  }
}

TEST(AwgnOracle, Limits) {
  const auto c = mb_pmf(build_product_qam(16), 0.5);
  EXPECT_LT(awgn_mi_oracle(c, -40.0), 1e-3);
  EXPECT_EQ(awgn_mi_oracle(c, std::numeric_limits<double>::infinity()), entropy_bits(c));
  EXPECT_NEAR(awgn_mi_oracle(c, 60.0), entropy_bits(c), 1e-9);
}

TEST(MbSearch, NonNegativeLambdaAndGainOverUniform) {
  const auto c = build_product_qam(16);
  const auto r = mb_for_awgn_snr(c, 9.0);
  EXPECT_GE(r.lambda, 0.0);
  EXPECT_GE(r.mi_bits_per_4d, awgn_mi_oracle(c, 9.0, MbSearchOptions{}.oracle));
  EXPECT_LE(r.resolution, 1e-3);
  ASSERT_TRUE(r.constellation.meta().lambda.has_value());
}

TEST(MbSearch, LambdaVanishesAtHighSnr) {
  const auto c = build_product_qam(16);
  const auto r = mb_for_awgn_snr(c, 40.0);
  EXPECT_LT(r.lambda, 0.01);
  EXPECT_NEAR(r.mi_bits_per_4d, 8.0, 1e-6);
}
