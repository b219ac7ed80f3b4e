#pragma once

// 4D (dual-polarization) constellations with a per-point PMF, the amplitude
// class decomposition the shaping optimizer works on, and the reference
// constructions: product QAM, Maxwell-Boltzmann PMFs and MD balls.
//
// Convention: every constructor and transform returns a constellation with
// unit mean energy E||X||^2 = 1 under its own PMF. Launch power is applied by
// the channel, never here.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "shapeopt/errors.hpp"

namespace shapeopt {

/// One 4D symbol: (Re X, Im X, Re Y, Im Y) for polarizations X and Y.
using Point4 = std::array<double, 4>;

inline constexpr double kPmfTolerance = 1e-12;
inline constexpr double kDefaultClassTolerance = 1e-9;

inline double energy(const Point4& p) {
  return p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3];
}

struct ConstellationMeta {
  std::string name;
  std::string base;
  std::optional<double> lambda;
  std::optional<std::size_t> n_ball;
  // Per-point geometric scale relative to the base grid; empty means all 1.
  std::vector<double> point_scale;
};

class Constellation4D {
 public:
  Constellation4D(std::vector<Point4> points, std::vector<double> pmf,
                  ConstellationMeta meta = {})
      : points_(std::move(points)), pmf_(std::move(pmf)), meta_(std::move(meta)) {
    if (points_.empty()) throw invalid_argument("constellation has no points");
    if (points_.size() != pmf_.size())
      throw invalid_argument("points and pmf differ in length");
    if (!meta_.point_scale.empty() && meta_.point_scale.size() != points_.size())
      throw invalid_argument("point_scale length differs from point count");
    double sum = 0.0;
    for (std::size_t i = 0; i < pmf_.size(); ++i) {
      if (!(pmf_[i] >= 0.0) || !std::isfinite(pmf_[i]))
        throw invalid_argument("pmf entry " + std::to_string(i) + " is negative or not finite");
      for (double v : points_[i])
        if (!std::isfinite(v)) throw invalid_argument("point coordinate is not finite");
      sum += pmf_[i];
    }
    if (std::abs(sum - 1.0) > kPmfTolerance)
      throw invalid_argument("pmf does not sum to 1");
  }

  std::size_t size() const noexcept { return points_.size(); }
  const std::vector<Point4>& points() const noexcept { return points_; }
  const std::vector<double>& pmf() const noexcept { return pmf_; }
  const Point4& point(std::size_t i) const { return points_[i]; }
  double prob(std::size_t i) const { return pmf_[i]; }
  bool pruned(std::size_t i) const { return pmf_[i] == 0.0; }
  const ConstellationMeta& meta() const noexcept { return meta_; }
  ConstellationMeta& meta() noexcept { return meta_; }

  std::size_t support_size() const {
    return static_cast<std::size_t>(
        std::count_if(pmf_.begin(), pmf_.end(), [](double p) { return p > 0.0; }));
  }

  double mean_energy() const {
    double e = 0.0;
    for (std::size_t i = 0; i < size(); ++i)
      if (pmf_[i] > 0.0) e += pmf_[i] * energy(points_[i]);
    return e;
  }

  // Pairwise distinctness of supported points (Euclidean distance > tol).
  // Sort-and-sweep over the first coordinate keeps this O(N log N) on grids.
  bool points_distinct(double tol = 1e-12) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i)
      if (!pruned(i)) idx.push_back(i);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return points_[a] < points_[b]; });
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        const auto& p = points_[idx[a]];
        const auto& q = points_[idx[b]];
        if (q[0] - p[0] > tol) break;
        double d2 = 0.0;
        for (int k = 0; k < 4; ++k) d2 += (p[k] - q[k]) * (p[k] - q[k]);
        if (d2 <= tol * tol) return false;
      }
    }
    return true;
  }

 private:
  std::vector<Point4> points_;
  std::vector<double> pmf_;
  ConstellationMeta meta_;
};

namespace detail {

inline std::vector<double> normalized_pmf(std::vector<double> w) {
  double s = 0.0;
  for (double v : w) s += v;
  if (!(s > 0.0)) throw degenerate_pmf("all probabilities are zero");
  for (double& v : w) v /= s;
  return w;
}

// Rescales points to unit mean energy under pmf.
inline void normalize_power(std::vector<Point4>& points, const std::vector<double>& pmf) {
  double e = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (pmf[i] > 0.0) e += pmf[i] * energy(points[i]);
  if (!(e > 0.0)) throw degenerate_pmf("constellation support has zero energy");
  const double g = 1.0 / std::sqrt(e);
  for (auto& p : points)
    for (double& v : p) v *= g;
}

inline std::vector<double> pam_levels(std::size_t m) {
  std::vector<double> lv(m);
  for (std::size_t i = 0; i < m; ++i)
    lv[i] = 2.0 * static_cast<double>(i) - static_cast<double>(m - 1);
  return lv;
}

}  // namespace detail

/// Cartesian product of two identical square M-QAM constellations on the odd
/// integer grid, uniform PMF, unit mean energy. Point index = i_x * M + i_y.
inline Constellation4D build_product_qam(std::size_t m_per_pol) {
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m_per_pol))));
  if (m_per_pol < 4 || side * side != m_per_pol || side % 2 != 0 || m_per_pol > 1024)
    throw invalid_argument("unsupported QAM order " + std::to_string(m_per_pol) +
                           " (need an even-sided square between 4 and 1024)");
  const auto lv = detail::pam_levels(side);
  const std::size_t n = m_per_pol * m_per_pol;
  std::vector<Point4> pts;
  pts.reserve(n);
  for (std::size_t a = 0; a < m_per_pol; ++a)
    for (std::size_t b = 0; b < m_per_pol; ++b)
      pts.push_back({lv[a / side], lv[a % side], lv[b / side], lv[b % side]});
  std::vector<double> pmf(n, 1.0 / static_cast<double>(n));
  detail::normalize_power(pts, pmf);
  return Constellation4D(std::move(pts), std::move(pmf),
                         {std::to_string(m_per_pol) + "^2QAM",
                          "qam" + std::to_string(m_per_pol) + "sq", std::nullopt, std::nullopt, {}});
}

/// 16-PAM in each of the four real dimensions (65536 points).
inline Constellation4D build_product_pam16_4d() {
  auto c = build_product_qam(256);
  c.meta().name = "16PAM^4";
  c.meta().base = "pam16-4d";
  return c;
}

struct AmplitudeClass {
  double energy = 0.0;
  std::vector<std::size_t> members;
  double probability = 0.0;
  double scale = 1.0;
};

struct AmplitudeClassSet {
  std::vector<AmplitudeClass> classes;
  double parent_power = 1.0;

  std::size_t nonzero_classes() const {
    return static_cast<std::size_t>(std::count_if(
        classes.begin(), classes.end(), [](const AmplitudeClass& c) { return c.probability > 0.0; }));
  }
};

/// Partition point indices into classes of equal 4D energy (relative
/// tolerance), ascending energy; member indices ascending within a class.
inline AmplitudeClassSet amplitude_classes(const Constellation4D& c,
                                           double rel_tol = kDefaultClassTolerance) {
  if (!(rel_tol > 0.0)) throw invalid_argument("rel_tol must be positive");
  std::vector<std::pair<double, std::size_t>> order(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) order[i] = {energy(c.point(i)), i};
  std::sort(order.begin(), order.end());

  AmplitudeClassSet set;
  set.parent_power = 1.0;
  for (const auto& [e, i] : order) {
    if (set.classes.empty() ||
        e - set.classes.back().energy > rel_tol * std::max(std::abs(e), 1e-300)) {
      set.classes.push_back({e, {}, 0.0, 1.0});
    }
    auto& cls = set.classes.back();
    cls.members.push_back(i);
    cls.probability += c.prob(i);
  }
  for (auto& cls : set.classes) std::sort(cls.members.begin(), cls.members.end());
  return set;
}

/// Maxwell-Boltzmann PMF p_i ∝ exp(-lambda ||x_i||^2) over the points of c
/// (lambda of either sign), then power-renormalized.
inline Constellation4D mb_pmf(const Constellation4D& c, double lambda) {
  if (!std::isfinite(lambda)) throw invalid_argument("lambda must be finite");
  std::vector<double> expo(c.size());
  double top = -INFINITY;
  for (std::size_t i = 0; i < c.size(); ++i) {
    expo[i] = -lambda * energy(c.point(i));
    top = std::max(top, expo[i]);
  }
  std::vector<double> w(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) w[i] = std::exp(expo[i] - top);
  auto pmf = detail::normalized_pmf(std::move(w));
  auto pts = c.points();
  detail::normalize_power(pts, pmf);
  auto meta = c.meta();
  meta.name = "MB(" + c.meta().name + ")";
  meta.lambda = lambda;
  meta.point_scale.clear();
  return Constellation4D(std::move(pts), std::move(pmf), std::move(meta));
}

/// Keeps the n_ball lowest-energy points of base. Ties at the cut energy are
/// broken by point index; with whole_shell the cut grows to the end of the
/// straddling shell (the result may then exceed n_ball).
inline Constellation4D md_ball(const Constellation4D& base, std::size_t n_ball,
                               bool whole_shell = false) {
  if (n_ball < 1 || n_ball > base.size())
    throw invalid_argument("n_ball " + std::to_string(n_ball) + " outside [1, " +
                           std::to_string(base.size()) + "]");
  std::vector<std::size_t> idx(base.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> e(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) e[i] = energy(base.point(i));
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return e[a] < e[b]; });

  std::size_t keep = n_ball;
  if (whole_shell) {
    const double cut = e[idx[keep - 1]];
    while (keep < idx.size() && e[idx[keep]] - cut <= kDefaultClassTolerance * cut) ++keep;
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());

  std::vector<Point4> pts;
  pts.reserve(keep);
  for (auto i : idx) pts.push_back(base.point(i));
  std::vector<double> pmf(keep, 1.0 / static_cast<double>(keep));
  detail::normalize_power(pts, pmf);
  auto meta = base.meta();
  meta.name = "MDball" + std::to_string(keep) + "(" + base.meta().name + ")";
  meta.n_ball = keep;
  meta.lambda.reset();
  meta.point_scale.clear();
  return Constellation4D(std::move(pts), std::move(pmf), std::move(meta));
}

struct MomentReport {
  double mean_energy = 0.0;
  double papr = 1.0;
  double mu4 = 1.0;
  double mu6 = 1.0;
  double entropy_bits = 0.0;
};

/// Moments over the PMF support; zero-probability points are ignored.
inline MomentReport moments(const Constellation4D& c) {
  double m2 = 0.0, m4 = 0.0, m6 = 0.0, peak = 0.0, h = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double p = c.prob(i);
    if (p <= 0.0) continue;
    const double e = energy(c.point(i));
    m2 += p * e;
    m4 += p * e * e;
    m6 += p * e * e * e;
    peak = std::max(peak, e);
    h -= p * std::log2(p);
  }
  MomentReport r;
  r.mean_energy = m2;
  r.papr = peak / m2;
  r.mu4 = m4 / (m2 * m2);
  r.mu6 = m6 / (m2 * m2 * m2);
  r.entropy_bits = std::max(0.0, h);
  return r;
}

inline double entropy_bits(const Constellation4D& c) { return moments(c).entropy_bits; }

/// Materializes a class state on base: class probability split equally among
/// members, members scaled radially by the class scale, unit power over the
/// support. Classes at probability 0 stay in the point list as pruned points.
inline Constellation4D apply_class_state(const Constellation4D& base, const AmplitudeClassSet& acs) {
  std::vector<double> w(base.size(), -1.0);
  std::vector<double> scale(base.size(), 1.0);
  double total = 0.0;
  for (const auto& cls : acs.classes) {
    if (!(cls.probability >= 0.0)) throw invalid_argument("negative class probability");
    if (!(cls.scale > 0.0) || !std::isfinite(cls.scale))
      throw invalid_argument("class scale must be positive and finite");
    if (cls.members.empty()) throw invalid_argument("empty amplitude class");
    const double share = cls.probability / static_cast<double>(cls.members.size());
    for (auto i : cls.members) {
      if (i >= base.size() || w[i] >= 0.0)
        throw invalid_argument("class set does not partition the constellation");
      w[i] = share;
      scale[i] = cls.scale;
    }
    total += cls.probability;
  }
  if (std::any_of(w.begin(), w.end(), [](double v) { return v < 0.0; }))
    throw invalid_argument("class set does not cover every point");
  if (!(total > 0.0)) throw degenerate_pmf("every amplitude class has probability zero");

  auto pmf = detail::normalized_pmf(std::move(w));
  auto pts = base.points();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (double& v : pts[i]) v *= scale[i];
  detail::normalize_power(pts, pmf);

  auto meta = base.meta();
  if (!meta.point_scale.empty())
    for (std::size_t i = 0; i < scale.size(); ++i) scale[i] *= meta.point_scale[i];
  meta.point_scale = std::move(scale);
  meta.lambda.reset();
  return Constellation4D(std::move(pts), std::move(pmf), std::move(meta));
}

/// Copy of c restricted to its nonzero-probability points.
inline Constellation4D drop_pruned(const Constellation4D& c) {
  std::vector<Point4> pts;
  std::vector<double> pmf;
  std::vector<double> sc;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c.pruned(i)) continue;
    pts.push_back(c.point(i));
    pmf.push_back(c.prob(i));
    if (!c.meta().point_scale.empty()) sc.push_back(c.meta().point_scale[i]);
  }
  auto meta = c.meta();
  meta.point_scale = std::move(sc);
  return Constellation4D(std::move(pts), std::move(pmf), std::move(meta));
}

}  // namespace shapeopt
