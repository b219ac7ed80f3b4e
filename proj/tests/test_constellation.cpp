#include <gtest/gtest.h>

#include <algorithm>
#include <climits>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "oracles.hpp"
#include "shapeopt/constellation.hpp"
#include "shapeopt/constellation_io.hpp"

using namespace shapeopt;

namespace {

// Regression constants from the exhaustive integer enumerations in oracles.hpp.
constexpr std::size_t kClasses64sq = 21;
constexpr std::size_t kEnergies16Pam4d = 94;
// E|X|^4 / E[|X|^2]^2 of uniform 64^2QAM by direct summation (= 25/21).
constexpr double kMu4Uniform64sq = 1.1904761904761905;

double pmf_sum(const Constellation4D& c) {
  double s = 0;
  for (double p : c.pmf()) s += p;
  return s;
}

void expect_normalized(const Constellation4D& c) {
  EXPECT_NEAR(pmf_sum(c), 1.0, 1e-12);
  for (double p : c.pmf()) EXPECT_GE(p, 0.0);
  EXPECT_NEAR(c.mean_energy(), 1.0, 1e-12);
}

// Coordinates in units of the smallest nonzero level (odd integers).
std::vector<std::array<long, 4>> integer_grid(const Constellation4D& c) {
  double unit = INFINITY;
  for (const auto& p : c.points())
    for (double v : p)
      if (v != 0.0) unit = std::min(unit, std::abs(v));
  std::vector<std::array<long, 4>> out;
  for (const auto& p : c.points())
    out.push_back({std::lround(p[0] / unit), std::lround(p[1] / unit), std::lround(p[2] / unit),
                   std::lround(p[3] / unit)});
  return out;
}

std::vector<Point4> sorted_points(const Constellation4D& c) {
  auto v = c.points();
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST(ProductQam, SizesAndUniformPmf) {
  for (std::size_t m : {4u, 16u, 64u, 256u}) {
    const auto c = build_product_qam(m);
    EXPECT_EQ(c.size(), m * m);
    for (double p : c.pmf()) EXPECT_DOUBLE_EQ(p, 1.0 / static_cast<double>(m * m));
    expect_normalized(c);
    EXPECT_TRUE(c.points_distinct());
  }
}

TEST(ProductQam, RejectsUnsupportedOrders) {
  for (std::size_t m : {0u, 1u, 2u, 8u, 9u, 32u, 2048u})
    EXPECT_THROW(build_product_qam(m), shapeopt::invalid_argument) << m;
}

TEST(ProductQam, LexicographicOrderOverPolarizationIndices) {
  const auto c = build_product_qam(16);
  // index = a * 16 + b; within a polarization, symbol a covers (I, Q) row-major.
  const double s = c.point(0)[0];
  EXPECT_LT(s, 0.0);
  EXPECT_DOUBLE_EQ(c.point(0)[1], s);
  EXPECT_DOUBLE_EQ(c.point(1)[3], s / 3.0);
  EXPECT_DOUBLE_EQ(c.point(16)[1], s / 3.0);
  EXPECT_DOUBLE_EQ(c.point(16)[0], s);
}

TEST(ProductQam, QpskSquaredIsSingleAmplitude) {
  const auto c = build_product_qam(4);
  const auto acs = amplitude_classes(c);
  ASSERT_EQ(acs.classes.size(), 1u);
  EXPECT_EQ(acs.classes[0].members.size(), 16u);
  const auto m = moments(c);
  EXPECT_NEAR(m.papr, 1.0, 1e-12);
  EXPECT_NEAR(m.mu4, 1.0, 1e-12);
  EXPECT_NEAR(m.mu6, 1.0, 1e-12);
}

TEST(ProductQam, ClassCountMatchesEnumeration) {
  ASSERT_EQ(oracle::distinct_product_qam_energies(8), kClasses64sq);
  EXPECT_EQ(amplitude_classes(build_product_qam(64)).classes.size(), kClasses64sq);
  EXPECT_EQ(amplitude_classes(build_product_qam(16)).classes.size(), oracle::distinct_product_qam_energies(4));
}

TEST(Pam16, MatchesProduct256QamAsSet) {
  const auto a = build_product_pam16_4d();
  const auto b = build_product_qam(256);
  EXPECT_EQ(a.size(), 65536u);
  EXPECT_EQ(sorted_points(a), sorted_points(b));
  expect_normalized(a);
}

TEST(Pam16, DistinctEnergiesMatchEnumeration) {
  ASSERT_EQ(oracle::distinct_energies(16, 4), kEnergies16Pam4d);
  EXPECT_EQ(amplitude_classes(build_product_pam16_4d()).classes.size(), kEnergies16Pam4d);
}

TEST(AmplitudeClasses, PartitionAndOrdering) {
  const auto c = mb_pmf(build_product_qam(64), 1.3);
  const auto acs = amplitude_classes(c);
  std::vector<int> seen(c.size(), 0);
  double total = 0;
  for (std::size_t k = 0; k < acs.classes.size(); ++k) {
    const auto& cls = acs.classes[k];
    if (k) {
      EXPECT_LT(acs.classes[k - 1].energy, cls.energy);
    }
    EXPECT_TRUE(std::is_sorted(cls.members.begin(), cls.members.end()));
    EXPECT_EQ(cls.scale, 1.0);
    for (auto i : cls.members) {
      ++seen[i];
      EXPECT_NEAR(energy(c.point(i)), cls.energy, 1e-9 * cls.energy);
    }
    total += cls.probability;
  }
  EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int n) { return n == 1; }));
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_THROW(amplitude_classes(c, 0.0), shapeopt::invalid_argument);
}

TEST(MaxwellBoltzmann, ZeroLambdaIsUniform) {
  const auto base = build_product_qam(64);
  const auto c = mb_pmf(base, 0.0);
  for (double p : c.pmf()) EXPECT_NEAR(p, 1.0 / 4096, 1e-16);
  ASSERT_TRUE(c.meta().lambda.has_value());
  EXPECT_EQ(*c.meta().lambda, 0.0);
}

TEST(MaxwellBoltzmann, StrictlyMonotoneInEnergyWithSignOfLambda) {
  const auto base = build_product_qam(64);
  for (double lambda : {-2.0, -0.3, 0.4, 3.0}) {
    const auto c = mb_pmf(base, lambda);
    expect_normalized(c);
    const auto acs = amplitude_classes(c);
    for (std::size_t k = 1; k < acs.classes.size(); ++k) {
      const double prev = c.prob(acs.classes[k - 1].members.front());
      const double cur = c.prob(acs.classes[k].members.front());
      if (lambda > 0) {
        EXPECT_GT(prev, cur) << lambda << " " << k;
      } else {
        EXPECT_LT(prev, cur) << lambda << " " << k;
      }
    }
  }
}

TEST(MaxwellBoltzmann, ExtremeLambdaDoesNotOverflow) {
  const auto base = build_product_pam16_4d();
  for (double lambda : {-500.0, 500.0}) {
    const auto c = mb_pmf(base, lambda);
    expect_normalized(c);
  }
}

TEST(MdBall, EnergyCutAndUniformSurvivors) {
  const auto base = build_product_pam16_4d();
  const auto base_grid = integer_grid(base);
  for (std::size_t n : {1u, 17u, 256u, 1024u, 8192u}) {
    const auto ball = md_ball(base, n);
    ASSERT_EQ(ball.size(), n);
    expect_normalized(ball);
    for (double p : ball.pmf()) EXPECT_DOUBLE_EQ(p, 1.0 / static_cast<double>(n));
    const auto kept_list = integer_grid(ball);
    const std::set<std::array<long, 4>> kept(kept_list.begin(), kept_list.end());
    ASSERT_EQ(kept.size(), n);
    long max_kept = 0, min_dropped = LONG_MAX;
    std::size_t matched = 0;
    for (const auto& p : base_grid) {
      const long e = p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3];
      if (kept.count(p)) {
        ++matched;
        max_kept = std::max(max_kept, e);
      } else {
        min_dropped = std::min(min_dropped, e);
      }
    }
    EXPECT_EQ(matched, n);
    EXPECT_LE(max_kept, min_dropped) << n;
  }
}

TEST(MdBall, FullSizeIsBaseAndRangeChecked) {
  const auto base = build_product_qam(16);
  const auto ball = md_ball(base, base.size());
  EXPECT_EQ(integer_grid(ball), integer_grid(base));
  EXPECT_THROW(md_ball(base, 0), shapeopt::invalid_argument);
  EXPECT_THROW(md_ball(base, base.size() + 1), shapeopt::invalid_argument);
}

TEST(MdBall, TieBreakAndWholeShell) {
  const auto base = build_product_qam(16);
  // Innermost shell of 16^2QAM holds the 16 points with all coordinates at ±1.
  const auto part = md_ball(base, 5);
  EXPECT_EQ(part.size(), 5u);
  const auto whole = md_ball(base, 5, true);
  EXPECT_EQ(whole.size(), 16u);
  EXPECT_NEAR(moments(whole).papr, 1.0, 1e-12);
}

TEST(MdBall, PaprBelowBase) {
  const auto base = build_product_pam16_4d();
  const double b = oracle::direct_moments(base.points(), base.pmf()).papr;
  const auto ball = md_ball(base, 8192);
  const double m = oracle::direct_moments(ball.points(), ball.pmf()).papr;
  EXPECT_LT(m, b);
  EXPECT_NEAR(moments(ball).papr, m, 1e-12);
}

TEST(Moments, UniformEntropyAndFrozenMu4) {
  const auto c = build_product_qam(64);
  const auto m = moments(c);
  EXPECT_NEAR(m.entropy_bits, 12.0, 1e-12);
  const auto o = oracle::direct_moments(c.points(), c.pmf());
  EXPECT_NEAR(o.mu4, kMu4Uniform64sq, 1e-12);
  EXPECT_NEAR(m.mu4, kMu4Uniform64sq, 1e-12);
}

TEST(Moments, AgreeWithDirectSummationOnSmallConstellations) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto base = build_product_qam(trial % 2 ? 16 : 4);
    std::vector<double> w(base.size());
    for (auto& v : w) v = u(rng) < 0.2 ? 0.0 : u(rng);
    if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0; })) w[0] = 1;
    double s = 0;
    for (double v : w) s += v;
    for (auto& v : w) v /= s;
    const Constellation4D c(base.points(), w);
    const auto a = moments(c);
    const auto o = oracle::direct_moments(c.points(), c.pmf());
    EXPECT_NEAR(a.mean_energy, o.mean, 1e-12);
    EXPECT_NEAR(a.papr, o.papr, 1e-12);
    EXPECT_NEAR(a.mu4, o.mu4, 1e-12);
    EXPECT_NEAR(a.mu6, o.mu6, 1e-12);
    EXPECT_NEAR(a.entropy_bits, o.entropy, 1e-12);
    EXPECT_GE(a.papr, 1.0 - 1e-12);
    EXPECT_GE(a.mu4, 1.0 - 1e-12);
    EXPECT_LE(a.entropy_bits, std::log2(static_cast<double>(c.size())) + 1e-12);
  }
}

TEST(Constellation, ConstructorValidates) {
  EXPECT_THROW(Constellation4D({}, {}), shapeopt::invalid_argument);
  EXPECT_THROW(Constellation4D({{1, 0, 0, 0}}, {0.5}), shapeopt::invalid_argument);
  EXPECT_THROW(Constellation4D({{1, 0, 0, 0}, {0, 1, 0, 0}}, {1.5, -0.5}), shapeopt::invalid_argument);
  EXPECT_THROW(Constellation4D({{1, 0, 0, 0}}, {1.0, 0.0}), shapeopt::invalid_argument);
  EXPECT_THROW(Constellation4D({{NAN, 0, 0, 0}}, {1.0}), shapeopt::invalid_argument);
  EXPECT_NO_THROW(Constellation4D({{1, 0, 0, 0}}, {1.0}));
}

TEST(ApplyClassState, ProportionalProbabilitiesReproduceUniform) {
  const auto base = build_product_qam(64);
  const auto acs = amplitude_classes(base);
  const auto c = apply_class_state(base, acs);
  expect_normalized(c);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_NEAR(c.prob(i), base.prob(i), 1e-15);
    for (int d = 0; d < 4; ++d) EXPECT_NEAR(c.point(i)[d], base.point(i)[d], 1e-14);
  }
}

TEST(ApplyClassState, SingleClassGivesConstantModulus) {
  const auto base = build_product_qam(64);
  auto acs = amplitude_classes(base);
  for (auto& cls : acs.classes) cls.probability = 0.0;
  acs.classes[3].probability = 1.0;
  const auto c = apply_class_state(base, acs);
  expect_normalized(c);
  EXPECT_NEAR(moments(c).papr, 1.0, 1e-12);
  EXPECT_EQ(c.support_size(), acs.classes[3].members.size());
  for (std::size_t i = 0; i < c.size(); ++i)
    EXPECT_EQ(c.pruned(i), std::find(acs.classes[3].members.begin(), acs.classes[3].members.end(), i) ==
                               acs.classes[3].members.end());
}

TEST(ApplyClassState, RandomStatesStayNormalizedAndRoundTripClasses) {
  const auto base = build_product_qam(64);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 25; ++trial) {
    auto acs = amplitude_classes(base);
    double s = 0;
    for (auto& cls : acs.classes) {
      cls.probability = u(rng) < 0.3 ? 0.0 : u(rng);
      cls.scale = 1.0;
      s += cls.probability;
    }
    if (s == 0) {
      acs.classes[0].probability = 1;
      s = 1;
    }
    for (auto& cls : acs.classes) cls.probability /= s;
    const auto c = apply_class_state(base, acs);
    expect_normalized(c);
    EXPECT_TRUE(c.points_distinct());
    // Unscaled classes keep their energies distinct, so the partition survives.
    const auto again = amplitude_classes(c);
    ASSERT_EQ(again.classes.size(), acs.classes.size());
    for (std::size_t k = 0; k < acs.classes.size(); ++k) {
      EXPECT_EQ(again.classes[k].members, acs.classes[k].members);
      EXPECT_NEAR(again.classes[k].probability, acs.classes[k].probability, 1e-12);
    }
  }
}

TEST(ApplyClassState, ScalesAreRecordedAndComposed) {
  const auto base = build_product_qam(16);
  auto acs = amplitude_classes(base);
  acs.classes[1].scale = 1.05;
  const auto once = apply_class_state(base, acs);
  expect_normalized(once);
  for (auto i : acs.classes[1].members) EXPECT_DOUBLE_EQ(once.meta().point_scale[i], 1.05);
  for (auto i : acs.classes[0].members) EXPECT_DOUBLE_EQ(once.meta().point_scale[i], 1.0);
  const auto twice = apply_class_state(once, amplitude_classes(once));
  for (auto i : acs.classes[1].members) EXPECT_DOUBLE_EQ(twice.meta().point_scale[i], 1.05);
}

TEST(ApplyClassState, RejectsInvalidStates) {
  const auto base = build_product_qam(16);
  auto zero = amplitude_classes(base);
  for (auto& cls : zero.classes) cls.probability = 0;
  EXPECT_THROW(apply_class_state(base, zero), degenerate_pmf);
  auto bad_scale = amplitude_classes(base);
  bad_scale.classes[0].scale = 0.0;
  EXPECT_THROW(apply_class_state(base, bad_scale), shapeopt::invalid_argument);
  auto missing = amplitude_classes(base);
  missing.classes.pop_back();
  EXPECT_THROW(apply_class_state(base, missing), shapeopt::invalid_argument);
}

TEST(DropPruned, KeepsSupportOnly) {
  const auto base = build_product_qam(16);
  auto acs = amplitude_classes(base);
  acs.classes[0].probability += acs.classes[2].probability;
  acs.classes[2].probability = 0;
  const auto c = apply_class_state(base, acs);
  const auto d = drop_pruned(c);
  EXPECT_EQ(d.size(), c.support_size());
  EXPECT_EQ(d.meta().point_scale.size(), d.size());
}

TEST(ConstellationIo, RoundTripIsLossless) {
  auto c = mb_pmf(build_product_qam(64), 0.731);
  auto acs = amplitude_classes(c);
  acs.classes[5].scale = 1.1;
  acs.classes[0].probability += acs.classes[20].probability;
  acs.classes[20].probability = 0;
  c = apply_class_state(c, acs);
  const auto path = std::filesystem::temp_directory_path() / "shapeopt_io_roundtrip.json";
  write_constellation(c, path.string());
  const auto r = read_constellation(path.string());
  EXPECT_EQ(r.points(), c.points());
  EXPECT_EQ(r.pmf(), c.pmf());
  EXPECT_EQ(r.meta().name, c.meta().name);
  EXPECT_EQ(r.meta().base, c.meta().base);
  EXPECT_EQ(r.meta().point_scale, c.meta().point_scale);
  std::filesystem::remove(path);

  auto ball = md_ball(build_product_qam(16), 40);
  const auto back = constellation_from_json_text(to_json(ball).dump());
  ASSERT_TRUE(back.meta().n_ball.has_value());
  EXPECT_EQ(*back.meta().n_ball, 40u);
}

TEST(ConstellationIo, MalformedInputReportsLine) {
  const std::string text = "{\n  \"format\": \"shapeopt-constellation\",\n  \"version\": 1,\n  \"points\": [[1,0,0,0],\n  oops\n";
  try {
    constellation_from_json_text(text);
    FAIL() << "expected parse_error";
  } catch (const parse_error& e) {
    EXPECT_EQ(e.line(), 5u);
  }
  const std::string dup = R"({"format":"shapeopt-constellation","version":1,"metadata":{"name":"x","base":"x"},
"points":[[1,0,0,0],[1,0,0,0]],"pmf":[0.5,0.5]})";
  EXPECT_THROW(constellation_from_json_text(dup), parse_error);
}
